import math

import numpy as np
import pytest

from cavityspec.analysis import fit_model, LORENTZIAN
from cavityspec.constants import TWO_PI
from cavityspec.detection import BlinkConfig, DetectorConfig, g2_background_floor
from cavityspec.ensemble import IonRecord, ZeemanConfig, zeeman_splitting
from cavityspec.errors import ConfigError, DomainError
from cavityspec.experiments import (PulseSequence, ScanAxis, ScanPlan,
                                    expected_linewidth, fit_enhancement,
                                    fit_lifetime, run_cavity_sweep, run_g2,
                                    run_lifetime, run_ple_scan,
                                    run_saturation_series, run_zeeman_series)
from cavityspec.dynamics import intracavity_photon_number
from cavityspec.output import read_csv
from cavityspec.physics import CavityParams, EmitterConstants

CAV = CavityParams.default()
EMITTER = EmitterConstants.default()
F0 = CAV.f_cav


def _ion(f0=F0, purcell=321.0686456400742):
    g = math.sqrt(purcell * CAV.kappa * EMITTER.gamma0 / 4.0)
    return IonRecord(position=(0.0, 0.0, 0.0), f0=f0, g=g, purcell=purcell)


def _power_for_s(s_peak, purcell):
    """Input power giving on-resonance saturation parameter s_peak."""
    gamma = EMITTER.gamma0 * (1.0 + purcell)
    gamma2 = gamma / 2.0 + TWO_PI * 3.1e6
    g2 = purcell * CAV.kappa * EMITTER.gamma0 / 4.0
    n_ph = s_peak * gamma * gamma2 / g2
    per_watt = intracavity_photon_number(1.0, CAV.eta_cav, CAV.kappa,
                                         EMITTER.omega)
    return n_ph / per_watt


def _interp_fwhm(x, y):
    half = float(y.max()) / 2.0
    above = y >= half
    i0 = int(np.argmax(above))
    i1 = len(y) - int(np.argmax(above[::-1])) - 1
    assert i0 > 0 and i1 < len(y) - 1, "peak must be interior"

    def cross(a, b):
        return x[a] + (half - y[a]) * (x[b] - x[a]) / (y[b] - y[a])

    return cross(i1, i1 + 1) - cross(i0 - 1, i0)


STD_DET = DetectorConfig(eta_total=0.04, dark_rate=100.0,
                         gate_start=10e-6, gate_duration=82e-6)


def test_scan_order_and_threads_do_not_change_counts():
    rng = np.random.default_rng(11)
    ions = [_ion(F0 + df) for df in (-40e6, 0.0, 55e6)]
    grid = F0 + np.linspace(-80e6, 80e6, 41)
    seq = PulseSequence(input_power=_power_for_s(2.0, 321.0),
                        excite_duration=10e-6, rep_period=100e-6)
    base = run_ple_scan(ScanPlan(ScanAxis.LASER_FREQUENCY, grid, 400),
                        ions, CAV, EMITTER, seq, STD_DET, seed=42)
    perm = rng.permutation(len(grid))
    shuffled = run_ple_scan(ScanPlan(ScanAxis.LASER_FREQUENCY, grid[perm], 400),
                            ions, CAV, EMITTER, seq, STD_DET, seed=42)
    by_freq = dict(zip(shuffled.grid, shuffled.counts))
    assert all(by_freq[f] == c for f, c in zip(base.grid, base.counts))

    threaded = run_ple_scan(ScanPlan(ScanAxis.LASER_FREQUENCY, grid, 400),
                            ions, CAV, EMITTER, seq, STD_DET, seed=42,
                            threads=2)
    assert np.array_equal(base.counts, threaded.counts)
    assert np.allclose(base.expected, threaded.expected, rtol=0, atol=0)


def test_scan_drift_bookkeeping():
    grid = F0 + np.linspace(0.0, 50e6, 21)
    seq = PulseSequence(input_power=1e-12)
    rate = 50e6 / 3600.0
    plan = ScanPlan(ScanAxis.LASER_FREQUENCY, grid, 1000,
                    cavity_drift_rate=rate)
    res = run_ple_scan(plan, [_ion()], CAV, EMITTER, seq, STD_DET, seed=1)
    t = np.arange(21) * (1000 * seq.rep_period)
    assert np.array_equal(res.elapsed, t)
    assert np.allclose(res.cavity_freq, grid + rate * t, rtol=1e-12)

    with pytest.raises(DomainError):
        ScanPlan(ScanAxis.LASER_FREQUENCY, grid[[0, 2, 1]], 100,
                 cavity_drift_rate=rate)


def test_saturated_single_ion_click_rate():
    ion = _ion()
    det = DetectorConfig(eta_total=0.04, dark_rate=0.0,
                         gate_start=10e-6, gate_duration=500e-6)
    seq = PulseSequence(input_power=8e-9, excite_duration=10e-6,
                        rep_period=600e-6)
    n = 200_000
    plan = ScanPlan(ScanAxis.LASER_FREQUENCY, np.array([ion.f0]), n)
    res = run_ple_scan(plan, [ion], CAV, EMITTER, seq, det, seed=5)
    p_hat = res.counts[0] / n
    p_model = res.expected[0] / n
    assert abs(p_model - 0.0199) < 8e-4
    sigma = math.sqrt(p_model * (1 - p_model) / n)
    assert abs(p_hat - p_model) < 4 * sigma


def test_low_power_linewidth_is_dephasing_limited():
    ion = _ion()
    det = DetectorConfig(eta_total=0.04, dark_rate=0.0,
                         gate_start=200e-6, gate_duration=150e-6)
    seq = PulseSequence(input_power=1e-12, excite_duration=200e-6,
                        rep_period=500e-6)
    grid = F0 + np.linspace(-30e6, 30e6, 121)
    plan = ScanPlan(ScanAxis.LASER_FREQUENCY, grid, 100)
    res = run_ple_scan(plan, [ion], CAV, EMITTER, seq, det, seed=3)
    fwhm = _interp_fwhm(grid, res.expected)
    predicted = expected_linewidth(ion, CAV, EMITTER, seq)
    assert abs(fwhm - predicted) / predicted < 0.03
    assert 5e6 < fwhm < 7e6


def test_scan_counts_track_expectation():
    ions = [_ion(F0 + df) for df in (-25e6, 10e6)]
    seq = PulseSequence(input_power=_power_for_s(3.0, 321.0))
    grid = F0 + np.linspace(-60e6, 60e6, 61)
    res = run_ple_scan(ScanPlan(ScanAxis.LASER_FREQUENCY, grid, 2000),
                       ions, CAV, EMITTER, seq, STD_DET, seed=9,
                       background_coeff=0.05)
    z = (res.counts - res.expected) / np.sqrt(res.expected)
    chi2 = float(np.sum(z * z))
    assert 25.0 < chi2 < 120.0  # 61 dof, generous band
    assert np.all(res.expected > 0)


def test_lifetime_fit_recovers_decay_rate():
    ion = _ion(purcell=252.0)
    seq = PulseSequence(input_power=_power_for_s(30.0, 252.0))
    res = run_lifetime(ion, CAV, EMITTER, seq, STD_DET, n_pulses=100_000,
                       seed=20260819)
    fit = fit_lifetime(res)
    assert fit.converged
    tau_true = 1.0 / res.gamma
    assert abs(fit.params["tau"] - tau_true) < 1.96 * fit.stderr["tau"]
    assert fit.params["amplitude"] > 0


def test_lifetime_detuned_laser_leaves_dark_counts():
    ion = _ion()
    seq = PulseSequence(input_power=_power_for_s(30.0, 321.0))
    res = run_lifetime(ion, CAV, EMITTER, seq, STD_DET, n_pulses=10_000,
                       seed=8, laser_detuning_hz=100e6)
    dark = 10_000 * STD_DET.dark_rate * STD_DET.gate_duration
    assert res.p_excited < 0.03
    assert 0.3 * dark < len(res.stream.pulse_index) < 3.0 * dark


def test_cavity_sweep_maps_enhancement_lorentzian():
    ion = _ion()
    seq = PulseSequence(input_power=_power_for_s(30.0, 321.0))
    detunings = np.linspace(-1.2, 1.2, 13) * 3.85e9
    res = run_cavity_sweep(ion, CAV, EMITTER, seq, detunings,
                           pulses_per_point=30_000, seed=17)
    assert np.all(res.converged)
    manual = EMITTER.gamma0 * (1.0 + ion.purcell
                               / (1.0 + (2.0 * TWO_PI * detunings / CAV.kappa) ** 2))
    assert np.allclose(res.gamma_expected, manual, rtol=1e-12)
    fit = fit_enhancement(res)
    assert fit.converged
    assert abs(fit.params["width"] - 3.85e9) / 3.85e9 < 0.10
    assert abs(fit.params["amplitude"] - ion.purcell) / ion.purcell < 0.10


def test_saturation_series_plateau_and_contrast():
    ion = _ion()
    det = DetectorConfig(eta_total=0.04, dark_rate=0.0,
                         gate_start=10e-6, gate_duration=500e-6)
    powers = np.logspace(-11, -8, 9)
    res = run_saturation_series(ion, CAV, EMITTER, powers, det,
                                pulses_per_point=20_000, seed=23,
                                rep_period=600e-6)
    for k in range(len(powers)):
        band = 4.0 * math.sqrt(res.expected_on[k] + 1.0)
        assert abs(res.on_counts[k] - res.expected_on[k]) < band
    assert np.all(np.diff(res.expected_on) > 0)
    assert abs(res.expected_on[-1] / 20_000 - 0.0199) < 1e-3
    assert res.expected_on[-1] > 10 * res.expected_off[-1]


def test_g2_floor_and_blinking():
    ion = _ion()
    seq = PulseSequence(input_power=_power_for_s(400.0, 321.0))
    quiet = DetectorConfig(eta_total=0.04, dark_rate=0.0,
                           gate_start=10e-6, gate_duration=82e-6)
    clean = run_g2(ion, CAV, EMITTER, seq, quiet, n_pulses=50_000, seed=2,
                   background_per_pulse=0.0)
    assert clean.g2[0] == 0.0
    assert clean.floor_predicted == 0.0

    noisy = run_g2(ion, CAV, EMITTER, seq, quiet, n_pulses=400_000, seed=4,
                   background_per_pulse=0.003)
    a = noisy.signal_per_pulse / noisy.background_per_pulse
    assert abs(noisy.floor_predicted - g2_background_floor(a)) < 1e-12
    assert abs(noisy.g2[0] - noisy.floor_predicted) < 4 * noisy.stderr[0]

    blinky = run_g2(ion, CAV, EMITTER, seq, quiet, n_pulses=400_000, seed=6,
                    blink=BlinkConfig(enabled=True, p_bright=0.4,
                                      switch_time=400e-6))
    assert blinky.g2[1] > 1.2
    assert blinky.g2[1] > blinky.g2[8]


def test_zeeman_series_recovers_slope_and_offset():
    ion = _ion()
    # long excite pulse so the population settles before the gate opens
    seq = PulseSequence(input_power=_power_for_s(3.0, 321.0),
                        excite_duration=30e-6, rep_period=200e-6)
    det = DetectorConfig(eta_total=0.04, dark_rate=100.0,
                         gate_start=30e-6, gate_duration=82e-6)
    b_values = np.array([2e-3, 4e-3, 6e-3, 8e-3, 10e-3])
    res = run_zeeman_series(ion, CAV, EMITTER, seq, det, b_values,
                            seed=31, pulses_per_point=8000)
    assert np.allclose(res.splittings, res.predicted, rtol=0.05)
    slope = res.slope_fit.params["slope"]
    expect = zeeman_splitting(ZeemanConfig(b_applied=(1.0, 0.0, 0.0),
                                           b_offset=(0.0, 0.0, 0.0),
                                           delta_g=ion.delta_g_spin))
    assert abs(slope - expect) / expect < 0.01
    assert 1e6 < res.slope_fit.params["intercept"] < 3.5e6


def test_scan_csv_roundtrip(tmp_path):
    ion = _ion()
    seq = PulseSequence(input_power=1e-12)
    grid = F0 + np.linspace(-5e6, 5e6, 11)
    res = run_ple_scan(ScanPlan(ScanAxis.LASER_FREQUENCY, grid, 50),
                       [ion], CAV, EMITTER, seq, STD_DET, seed=12)
    path = tmp_path / "scan.csv"
    res.to_csv(path, header={"note": "roundtrip"})
    header, cols = read_csv(path)
    assert header["seed"] == "12"
    assert header["note"] == "roundtrip"
    rebuilt = float(header["origin_hz"]) + cols["laser_offset_hz"]
    assert np.allclose(rebuilt, grid, rtol=0, atol=0.5)  # sub-Hz after offsets
    assert np.array_equal(cols["counts"].astype(int), res.counts)


def test_runner_validation_errors():
    ion = _ion()
    seq = PulseSequence(input_power=1e-12)
    bad_gate = DetectorConfig(eta_total=0.04, dark_rate=0.0,
                              gate_start=1e-6, gate_duration=10e-6)
    with pytest.raises(ConfigError):
        run_lifetime(ion, CAV, EMITTER, seq, bad_gate, 100, seed=0)
    with pytest.raises(DomainError):
        PulseSequence(input_power=-1e-9)
    with pytest.raises(DomainError):
        PulseSequence(input_power=1e-9, excite_duration=2e-4,
                      rep_period=1e-4)
    with pytest.raises(DomainError):
        ScanPlan(ScanAxis.LASER_FREQUENCY, np.array([1.0, 1.0]), 10)
    plan = ScanPlan(ScanAxis.POWER, np.array([1e-12, 2e-12]), 10)
    with pytest.raises(ConfigError):
        run_ple_scan(plan, [ion], CAV, EMITTER, seq, STD_DET, seed=0)
    good = ScanPlan(ScanAxis.LASER_FREQUENCY, np.array([F0]), 10)
    with pytest.raises(DomainError):
        run_ple_scan(good, [], CAV, EMITTER, seq, STD_DET, seed=0)
    with pytest.raises(DomainError):
        run_ple_scan(good, [ion], CAV, EMITTER, seq, STD_DET, seed=0,
                     threads=0)
