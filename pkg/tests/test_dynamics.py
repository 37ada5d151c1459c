"""Integrator, exact-propagator, photon-yield, and spin-relaxation tests."""

import math
from types import SimpleNamespace

import numpy as np
import pytest

from cavityspec.constants import TWO_PI
from cavityspec.dynamics import (
    GROUND,
    BlochState,
    DriveParams,
    SpinRelaxParams,
    emitted_photons_per_pulse,
    evolve_bloch,
    intracavity_photon_number,
    pulse_excitation,
    rabi_frequency,
    spin_relaxation_rate,
    spin_t1,
    steady_state,
    window_capture_fraction,
)
from cavityspec.errors import DomainError
from cavityspec.output import read_csv

# operating point shared by several tests: a strongly Purcell-enhanced ion
GAMMA_OP = TWO_PI * 1.8e3
GAMMA_D_OP = TWO_PI * 3.1e6


def test_free_decay_matches_exponential():
    drive = DriveParams(0.0, 0.0, 1.0 / 45e-6, 0.0)
    traj = evolve_bloch(BlochState(1.0, 0.0, 0.0), drive, 100e-6)
    expected = np.exp(-drive.gamma * traj.times)
    assert np.max(np.abs(traj.rho_ee - expected) / expected) < 1e-8
    assert traj.times[0] == 0.0
    assert traj.times[-1] == pytest.approx(100e-6, rel=1e-12)


def test_free_coherence_precession():
    delta = TWO_PI * 50e3
    drive = DriveParams(0.0, delta, 2e3, 1e3)
    state = BlochState(0.3, 0.2, 0.1)
    traj = evolve_bloch(state, drive, 40e-6)
    g2 = drive.gamma2
    # (u + iv)(t) = (u0 + iv0) exp(-(gamma2 + i delta) t)
    z0 = complex(state.coh_re, state.coh_im)
    z = z0 * np.exp(-(g2 + 1j * delta) * traj.times)
    assert np.max(np.abs(traj.coh_re - z.real)) < 1e-8
    assert np.max(np.abs(traj.coh_im - z.imag)) < 1e-8


def test_driven_system_reaches_closed_form_steady_state():
    rng = np.random.default_rng(20260819)
    unit = TWO_PI * 1e6
    for _ in range(8):
        gamma = unit * rng.uniform(0.1, 0.5)
        gamma_d = unit * rng.uniform(0.5, 3.0)
        gamma2 = gamma / 2 + gamma_d
        omega = gamma2 * rng.uniform(0.1, 3.0)
        delta = gamma2 * rng.uniform(-3.0, 3.0)
        drive = DriveParams(omega, delta, gamma, gamma_d)
        final = evolve_bloch(GROUND, drive, 30.0 / gamma).final
        ss = steady_state(drive)
        assert abs(final.rho_ee - ss.rho_ee) < 1e-4
        assert abs(final.coh_re - ss.coh_re) < 1e-4
        assert abs(final.coh_im - ss.coh_im) < 1e-4


def test_step_halving_changes_nothing():
    drive = DriveParams(TWO_PI * 1.3e6, TWO_PI * 2e6, GAMMA_OP, GAMMA_D_OP)
    coarse = evolve_bloch(GROUND, drive, 10e-6, dt_max=5e-10).final
    fine = evolve_bloch(GROUND, drive, 10e-6, dt_max=2.5e-10).final
    assert abs(coarse.rho_ee - fine.rho_ee) < 1e-6
    assert abs(coarse.coh_re - fine.coh_re) < 1e-6
    assert abs(coarse.coh_im - fine.coh_im) < 1e-6


def test_trajectory_stays_physical():
    drive = DriveParams(TWO_PI * 10e6, TWO_PI * 1e6, TWO_PI * 1e3, 0.0)
    traj = evolve_bloch(GROUND, drive, 5e-6)
    assert np.all(traj.rho_ee >= -1e-9)
    assert np.all(traj.rho_ee <= 1 + 1e-9)
    purity = traj.coh_re**2 + traj.coh_im**2 - traj.rho_ee * (1 - traj.rho_ee)
    assert np.all(purity <= 1e-9)


def test_strong_resonant_drive_saturates_to_half():
    drive = DriveParams(TWO_PI * 5e6, 0.0, GAMMA_OP, GAMMA_D_OP)
    final = evolve_bloch(GROUND, drive, 10e-6).final
    assert abs(final.rho_ee - 0.5) < 0.005
    assert abs(final.rho_ee - steady_state(drive).rho_ee) < 1e-4


def test_rabi_pulse_inverts_population():
    # negligible damping: a pi pulse should take the ground state to ~1
    omega = TWO_PI * 10e6
    drive = DriveParams(omega, 0.0, TWO_PI * 14, 0.0)
    half = evolve_bloch(GROUND, drive, math.pi / omega).final
    assert half.rho_ee > 0.99
    quarter = evolve_bloch(GROUND, drive, 0.5 * math.pi / omega).final
    assert abs(quarter.rho_ee - 0.5) < 0.01


def test_pulse_excitation_agrees_with_integrator():
    rng = np.random.default_rng(7)
    for duration in (0.5e-6, 2e-6):
        for _ in range(4):
            omega = TWO_PI * 10 ** rng.uniform(4.0, 6.7)
            delta = TWO_PI * rng.uniform(-5e6, 5e6)
            gamma = TWO_PI * 10 ** rng.uniform(3.0, 4.3)
            gamma_d = TWO_PI * rng.uniform(0.0, 3.1e6)
            fast = pulse_excitation(omega, delta, gamma, gamma_d, duration)
            slow = evolve_bloch(GROUND, DriveParams(omega, delta, gamma, gamma_d),
                                duration).final.rho_ee
            assert abs(fast - slow) < 1e-6


def test_pulse_excitation_shapes_and_edges():
    omega = np.array([0.0, TWO_PI * 1e6, TWO_PI * 2e6])
    out = pulse_excitation(omega, 0.0, GAMMA_OP, GAMMA_D_OP, 10e-6)
    assert out.shape == (3,)
    assert out[0] == 0.0
    assert np.all((out >= 0) & (out <= 1))
    assert out[2] > out[1]

    scalar = pulse_excitation(TWO_PI * 1e6, 0.0, GAMMA_OP, GAMMA_D_OP, 10e-6)
    assert isinstance(scalar, float)
    assert scalar == pytest.approx(out[1], rel=1e-12)

    grid = pulse_excitation(omega[None, :], np.array([[0.0], [TWO_PI * 1e6]]),
                            GAMMA_OP, GAMMA_D_OP, 10e-6)
    assert grid.shape == (2, 3)
    assert np.all(grid[1, 1:] < grid[0, 1:])  # detuning lowers the yield

    assert pulse_excitation(TWO_PI * 1e6, 0.0, GAMMA_OP, GAMMA_D_OP, 0.0) == 0.0
    with pytest.raises(DomainError):
        pulse_excitation(TWO_PI * 1e6, 0.0, 0.0, GAMMA_D_OP, 1e-6)


def test_intracavity_photon_number_at_one_nanowatt():
    n_ph = intracavity_photon_number(1e-9, 0.16, TWO_PI * 3.85e9, TWO_PI * 195e12)
    assert n_ph == pytest.approx(0.20476170413547543, rel=1e-12)
    powers = np.array([0.0, 1e-9, 2e-9])
    out = intracavity_photon_number(powers, 0.16, TWO_PI * 3.85e9, TWO_PI * 195e12)
    assert out[0] == 0.0
    assert out[2] == pytest.approx(2 * n_ph, rel=1e-12)
    with pytest.raises(DomainError):
        intracavity_photon_number(1e-9, 1.5, TWO_PI * 3.85e9, TWO_PI * 195e12)
    with pytest.raises(DomainError):
        intracavity_photon_number(-1e-9, 0.16, TWO_PI * 3.85e9, TWO_PI * 195e12)


def test_rabi_frequency_square_root_scaling():
    g = TWO_PI * 2.62e6
    assert rabi_frequency(0.25, g) == pytest.approx(0.5 * g, rel=1e-12)
    out = rabi_frequency(np.array([0.0, 1.0, 4.0]), g)
    assert out[0] == 0.0
    assert out[2] == pytest.approx(2 * g, rel=1e-12)
    with pytest.raises(DomainError):
        rabi_frequency(-0.1, g)


def test_window_capture_fraction_values():
    # saturated emitter, gate opening right at the end of the excite pulse
    cap = window_capture_fraction(GAMMA_OP, 10e-6, 82e-6, 10e-6)
    assert 0.5 * cap == pytest.approx(0.3022091919690052, rel=1e-12)
    # gate entirely before the decay starts collects nothing
    assert window_capture_fraction(GAMMA_OP, 0.0, 5e-6, 10e-6) == 0.0
    # longer gates capture monotonically more
    caps = window_capture_fraction(GAMMA_OP, 10e-6, 200e-6, 10e-6)
    assert caps > cap
    with pytest.raises(DomainError):
        window_capture_fraction(-1.0, 10e-6, 82e-6, 10e-6)
    with pytest.raises(DomainError):
        window_capture_fraction(GAMMA_OP, 10e-6, 0.0, 10e-6)


def test_emitted_photons_saturated_window():
    drive = DriveParams(TWO_PI * 1.3e6, 0.0, GAMMA_OP, GAMMA_D_OP)
    pulse = SimpleNamespace(excite_duration=10e-6, gate_start=10e-6,
                            gate_duration=82e-6)
    photons = emitted_photons_per_pulse(drive, pulse)
    rho_end = evolve_bloch(GROUND, drive, 10e-6).final.rho_ee
    expected = rho_end * window_capture_fraction(drive.gamma, 10e-6, 82e-6, 10e-6)
    assert photons == pytest.approx(expected, rel=1e-5)
    # the fully saturated figure: rho_ss ~ 0.5 at this operating point
    assert photons == pytest.approx(0.3022091919690052, rel=0.01)


def test_emitted_photons_gate_overlapping_drive():
    drive = DriveParams(TWO_PI * 1.3e6, 0.0, GAMMA_OP, GAMMA_D_OP)
    pulse = SimpleNamespace(excite_duration=10e-6, gate_start=5e-6,
                            gate_duration=87e-6)
    overlap = emitted_photons_per_pulse(drive, pulse)
    disjoint = emitted_photons_per_pulse(
        drive, SimpleNamespace(excite_duration=10e-6, gate_start=10e-6,
                               gate_duration=82e-6))
    assert overlap > disjoint  # extra 5 us of gated emission under the drive
    assert overlap < drive.gamma * 92e-6  # crude unit-population bound

    silent = DriveParams(0.0, 0.0, GAMMA_OP, GAMMA_D_OP)
    assert emitted_photons_per_pulse(silent, pulse) == 0.0


def test_spin_t1_reference_points():
    # direct + Raman + Orbach at the default coefficients
    cold = spin_t1(SpinRelaxParams(temperature=4.0, spin_splitting=9.0))
    assert cold.seconds == pytest.approx(0.00163547, rel=1e-5)
    assert not cold.underflow
    warm = spin_t1(SpinRelaxParams(temperature=6.0, spin_splitting=9.0))
    assert warm.seconds == pytest.approx(8.44437e-06, rel=1e-5)
    frozen = spin_t1(SpinRelaxParams(temperature=0.9, spin_splitting=0.1))
    assert frozen.seconds == pytest.approx(1984.78, rel=1e-5)

    assert spin_relaxation_rate(SpinRelaxParams(6.0, 9.0)) > \
        spin_relaxation_rate(SpinRelaxParams(4.0, 9.0))
    assert spin_relaxation_rate(SpinRelaxParams(0.9, 9.0)) > \
        spin_relaxation_rate(SpinRelaxParams(0.9, 0.1))


def test_spin_t1_underflow_flagged():
    quiet = SpinRelaxParams(temperature=0.01, spin_splitting=1e-3,
                            a_direct=0.0, a_raman=0.0)
    result = spin_t1(quiet)
    assert result.underflow
    assert math.isinf(result.seconds)


def test_parameter_validation():
    with pytest.raises(DomainError):
        DriveParams(1.0, 0.0, 0.0, 0.0)
    with pytest.raises(DomainError):
        DriveParams(-1.0, 0.0, 1.0, 0.0)
    with pytest.raises(DomainError):
        DriveParams(1.0, 0.0, 1.0, -1.0)
    with pytest.raises(DomainError):
        BlochState(1.5, 0.0, 0.0)
    with pytest.raises(DomainError):
        BlochState(0.0, 0.5, 0.0)
    with pytest.raises(DomainError):
        BlochState(math.nan, 0.0, 0.0)
    # tiny numeric overshoot is tolerated and clamped
    assert BlochState(1.0 + 5e-10, 0.0, 0.0).rho_ee == 1.0
    with pytest.raises(DomainError):
        evolve_bloch(GROUND, DriveParams(1.0, 0.0, 1.0, 0.0), -1.0)
    with pytest.raises(DomainError):
        SpinRelaxParams(temperature=-1.0, spin_splitting=9.0)
    with pytest.raises(DomainError):
        SpinRelaxParams(temperature=4.0, spin_splitting=9.0, a_raman=-1.0)


def test_weak_drive_linewidth_is_dephasing_limited():
    # FWHM of the steady excitation spectrum -> 2 gamma2 as Omega -> 0
    step = TWO_PI * 0.05e6
    delta = np.arange(-300, 301) * step
    omega = TWO_PI * 5e3
    settle = 12.0 / GAMMA_OP
    spectrum = pulse_excitation(omega, delta, GAMMA_OP, GAMMA_D_OP, settle)
    peak = spectrum.max()
    assert spectrum.argmax() == 300
    half = peak / 2
    above = spectrum >= half

    def crossing(i_lo, i_hi):
        f = (half - spectrum[i_lo]) / (spectrum[i_hi] - spectrum[i_lo])
        return delta[i_lo] + f * (delta[i_hi] - delta[i_lo])

    left = np.flatnonzero(above)[0]
    right = np.flatnonzero(above)[-1]
    fwhm = crossing(right + 1, right) - crossing(left - 1, left)
    gamma2 = GAMMA_OP / 2 + GAMMA_D_OP
    assert fwhm == pytest.approx(2 * gamma2, rel=0.02)
    assert fwhm / TWO_PI == pytest.approx(6.2018e6, rel=0.02)


def test_trajectory_csv_roundtrip(tmp_path):
    drive = DriveParams(TWO_PI * 1e6, 0.0, GAMMA_OP, GAMMA_D_OP)
    traj = evolve_bloch(GROUND, drive, 2e-6)
    path = tmp_path / "trajectory.csv"
    traj.to_csv(path, header={"seed": 1})
    header, columns = read_csv(path)
    assert header["seed"] == "1"
    assert np.allclose(columns["rho_ee"], traj.rho_ee, rtol=5e-12, atol=1e-14)
    assert np.allclose(columns["time_s"], traj.times, rtol=5e-12, atol=1e-14)


def test_trajectory_sampling_budget():
    drive = DriveParams(TWO_PI * 1.3e6, 0.0, GAMMA_OP, GAMMA_D_OP)
    traj = evolve_bloch(GROUND, drive, 50e-6, max_samples=256)
    assert len(traj.times) <= 257
    assert traj.times[0] == 0.0
    assert traj.times[-1] == pytest.approx(50e-6, rel=1e-12)
