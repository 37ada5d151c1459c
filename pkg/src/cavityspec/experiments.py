"""Pulsed-experiment runners.

Each runner turns a parameter plan plus an integer seed into synthetic
data, drawing per-point generators from SeedSequence(seed, spawn_key=rank)
where rank is the point's position in the sorted grid.  Reordering a
drift-free grid therefore permutes the output without changing any value,
and a two-thread run reproduces a serial one bit for bit.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from enum import Enum

import numpy as np

from .analysis import (EXPONENTIAL, LINEAR, LORENTZIAN, FitResult,
                       count_peaks, fit_model)
from .constants import TWO_PI
from .detection import (BlinkConfig, ClickStream, DetectorConfig,
                        EmissionModel, g2_background_floor, g2_pulsed,
                        simulate_clicks)
from .dynamics import (intracavity_photon_number, pulse_excitation,
                       window_capture_fraction)
from .ensemble import IonRecord, ZeemanConfig, zeeman_lines, zeeman_splitting
from .errors import ConfigError, DomainError, FitError
from .output import write_csv_atomic
from .physics import CavityParams, EmitterConstants

GAMMA_D_DEFAULT = TWO_PI * 3.1e6  # pure dephasing at the standard temperature

# beyond this many power-broadened half-widths an ion's tail is dropped
CUTOFF_HALFWIDTHS = 30.0


@dataclass(frozen=True)
class PulseSequence:
    """Drive timing and power; the collection gate lives in DetectorConfig."""

    input_power: float           # W at the cavity input
    excite_duration: float = 10e-6
    rep_period: float = 100e-6

    def __post_init__(self):
        if self.input_power < 0 or not np.isfinite(self.input_power):
            raise DomainError(f"input_power must be non-negative, got {self.input_power}")
        if self.excite_duration <= 0:
            raise DomainError("excite_duration must be positive")
        if self.rep_period < self.excite_duration:
            raise DomainError("rep_period must cover the excitation pulse")


class ScanAxis(str, Enum):
    LASER_FREQUENCY = "laser_frequency"
    CAVITY_FREQUENCY = "cavity_frequency"
    POWER = "power"
    MAGNETIC_FIELD = "magnetic_field"


@dataclass(frozen=True)
class ScanPlan:
    """Grid of set points visited in order, all with the same pulse budget."""

    axis: ScanAxis
    grid: np.ndarray
    pulses_per_point: int
    cavity_drift_rate: float = 0.0  # Hz/s of uncommanded cavity motion

    def __post_init__(self):
        grid = np.ascontiguousarray(self.grid, dtype=float)
        object.__setattr__(self, "grid", grid)
        if grid.ndim != 1 or len(grid) < 1:
            raise DomainError("grid must be a non-empty 1-d array")
        if not np.all(np.isfinite(grid)):
            raise DomainError("grid values must be finite")
        if len(np.unique(grid)) != len(grid):
            raise DomainError("grid values must be distinct")
        if self.pulses_per_point < 1:
            raise DomainError("pulses_per_point must be at least 1")
        if not np.isfinite(self.cavity_drift_rate):
            raise DomainError("cavity_drift_rate must be finite")
        if self.cavity_drift_rate != 0.0:
            diffs = np.diff(grid)
            if not (np.all(diffs > 0) or np.all(diffs < 0)):
                raise DomainError(
                    "a drifting scan must visit the grid monotonically")

    @property
    def n_points(self) -> int:
        return len(self.grid)

    def ranks(self) -> np.ndarray:
        out = np.empty(len(self.grid), dtype=np.int64)
        out[np.argsort(self.grid, kind="stable")] = np.arange(len(self.grid))
        return out


_AXIS_COLUMN = {
    ScanAxis.LASER_FREQUENCY: "laser_freq_hz",
    ScanAxis.CAVITY_FREQUENCY: "cavity_detuning_hz",
    ScanAxis.POWER: "input_power_w",
    ScanAxis.MAGNETIC_FIELD: "b_field_t",
}


@dataclass
class ScanResult:
    axis: ScanAxis
    grid: np.ndarray
    counts: np.ndarray
    expected: np.ndarray
    cavity_freq: np.ndarray
    elapsed: np.ndarray
    pulses_per_point: int
    seed: int

    def table(self, header: dict | None = None):
        """Frequency axes are emitted relative to origin_hz (the first grid
        value) so 12 significant digits keep sub-Hz resolution."""
        meta = {"axis": self.axis.value,
                "pulses_per_point": self.pulses_per_point,
                "seed": self.seed}
        if self.axis is ScanAxis.LASER_FREQUENCY:
            origin = float(self.grid[0])
            meta["origin_hz"] = repr(origin)
            axis_col = ("laser_offset_hz", self.grid - origin)
            cav_col = ("cavity_offset_hz", self.cavity_freq - origin)
        else:
            axis_col = (_AXIS_COLUMN[self.axis], self.grid)
            cav_col = ("cavity_freq_hz", self.cavity_freq)
        if header:
            meta.update(header)
        cols = [axis_col,
                ("counts", self.counts.astype(float)),
                ("expected", self.expected),
                cav_col,
                ("elapsed_s", self.elapsed)]
        return cols, meta

    def to_csv(self, path, header: dict | None = None) -> None:
        cols, meta = self.table(header)
        write_csv_atomic(path, cols, header=meta)


def _child_rng(seed: int, rank: int) -> np.random.Generator:
    return np.random.default_rng(
        np.random.SeedSequence(entropy=seed, spawn_key=(int(rank),)))


def _child_seed(seed: int, index: int) -> int:
    ss = np.random.SeedSequence(entropy=seed, spawn_key=(int(index), 1))
    return int(ss.generate_state(1, np.uint64)[0])


def _validate_gate(seq: PulseSequence, det: DetectorConfig) -> None:
    if det.gate_start < seq.excite_duration:
        raise ConfigError("collection gate opens before the drive ends")
    if det.gate_start + det.gate_duration > seq.rep_period:
        raise ConfigError("collection gate extends past the pulse period")


def _expand_lines(ions, zeeman: ZeemanConfig | None):
    """Optical line table: (frequency, ion index, weight) per transition."""
    freqs: list[float] = []
    idx: list[int] = []
    weights: list[float] = []
    for i, ion in enumerate(ions):
        if zeeman is None:
            freqs.append(ion.f0)
            idx.append(i)
            weights.append(1.0)
        else:
            cfg = replace(zeeman, delta_g=ion.delta_g_spin)
            for f, w in zeeman_lines(ion.f0, cfg):
                freqs.append(f)
                idx.append(i)
                weights.append(w)
    return (np.asarray(freqs), np.asarray(idx, dtype=np.int64),
            np.asarray(weights))


def expected_linewidth(ion: IonRecord, cavity: CavityParams,
                       emitter: EmitterConstants, seq: PulseSequence, *,
                       gamma_d: float = GAMMA_D_DEFAULT) -> float:
    """Power-broadened FWHM in Hz with the cavity tracking the laser."""
    n_ph = intracavity_photon_number(seq.input_power, cavity.eta_cav,
                                     cavity.kappa, emitter.omega)
    gamma = emitter.gamma0 * (1.0 + ion.purcell)
    gamma2 = gamma / 2.0 + gamma_d
    s_pk = n_ph * ion.g**2 / (gamma * gamma2)
    return 2.0 * gamma2 * math.sqrt(1.0 + s_pk) / TWO_PI


def run_ple_scan(plan: ScanPlan, ions, cavity: CavityParams,
                 emitter: EmitterConstants, seq: PulseSequence,
                 det: DetectorConfig, seed: int, *,
                 gamma_d: float = GAMMA_D_DEFAULT,
                 zeeman: ZeemanConfig | None = None,
                 co_scan: bool = True,
                 background_coeff: float = 0.0,
                 threads: int = 1) -> ScanResult:
    """Pulsed excitation scan over laser frequency.

    Every grid point runs pulses_per_point cycles: excite, gate, count.
    With co_scan the cavity is servoed to the laser (plus any drift); with
    a fixed cavity the intracavity drive and each ion's enhancement roll
    off with the respective detunings.  Ions are Bernoulli click sources,
    dark counts and the unresolved-ion background are Poisson.
    """
    if plan.axis is not ScanAxis.LASER_FREQUENCY:
        raise ConfigError(f"PLE scan needs a laser_frequency axis, got {plan.axis.value}")
    if not ions:
        raise DomainError("need at least one ion")
    if background_coeff < 0:
        raise DomainError("background_coeff must be non-negative")
    if threads < 1:
        raise DomainError("threads must be at least 1")
    _validate_gate(seq, det)

    grid = plan.grid
    n_pts = plan.n_points
    n_ions = len(ions)
    point_duration = plan.pulses_per_point * seq.rep_period
    elapsed = np.arange(n_pts) * point_duration
    if co_scan:
        f_cav = grid + plan.cavity_drift_rate * elapsed
    else:
        f_cav = cavity.f_cav + plan.cavity_drift_rate * elapsed
    delta_lc = TWO_PI * (grid - f_cav)
    n_ph_res = intracavity_photon_number(seq.input_power, cavity.eta_cav,
                                         cavity.kappa, emitter.omega)
    n_ph = n_ph_res / (1.0 + (2.0 * delta_lc / cavity.kappa) ** 2)

    f_line, line_ion, line_w = _expand_lines(ions, zeeman)
    g_ion = np.array([ion.g for ion in ions])
    p_max = np.array([ion.purcell for ion in ions])

    # candidate window per line, sized at full enhancement and peak drive
    gamma_res = emitter.gamma0 * (1.0 + p_max[line_ion])
    gamma2_res = gamma_res / 2.0 + gamma_d
    s_res = n_ph.max() * g_ion[line_ion] ** 2 / (gamma_res * gamma2_res)
    cut_hz = CUTOFF_HALFWIDTHS * gamma2_res * np.sqrt(1.0 + s_res) / TWO_PI

    order = np.argsort(f_line, kind="stable")
    f_sorted = f_line[order]
    max_cut = float(cut_hz.max()) if len(cut_hz) else 0.0
    pair_pt: list[np.ndarray] = []
    pair_ln: list[np.ndarray] = []
    for k in range(n_pts):
        lo = int(np.searchsorted(f_sorted, grid[k] - max_cut))
        hi = int(np.searchsorted(f_sorted, grid[k] + max_cut))
        cand = order[lo:hi]
        cand = cand[np.abs(grid[k] - f_line[cand]) <= cut_hz[cand]]
        if len(cand):
            pair_pt.append(np.full(len(cand), k, dtype=np.int64))
            pair_ln.append(cand)
    if pair_pt:
        pt = np.concatenate(pair_pt)
        ln = np.concatenate(pair_ln)
        ion_idx = line_ion[ln]
        delta_ic = TWO_PI * (f_line[ln] - f_cav[pt])
        p_eff = p_max[ion_idx] / (1.0 + (2.0 * delta_ic / cavity.kappa) ** 2)
        gamma_pair = emitter.gamma0 * (1.0 + p_eff)
        eta_pair = p_eff / (1.0 + p_eff)
        omega_pair = np.sqrt(n_ph[pt]) * g_ion[ion_idx]
        delta_laser = TWO_PI * (grid[pt] - f_line[ln])
        p_exc = pulse_excitation(omega_pair, delta_laser, gamma_pair,
                                 np.full(len(pt), gamma_d),
                                 seq.excite_duration)
        capture = window_capture_fraction(gamma_pair, det.gate_start,
                                          det.gate_duration,
                                          seq.excite_duration)
        p_click = line_w[ln] * p_exc * eta_pair * capture * det.eta_total
        key = pt * n_ions + ion_idx
        uniq, inverse = np.unique(key, return_inverse=True)
        p_group = np.zeros(len(uniq))
        np.add.at(p_group, inverse, p_click)
        np.clip(p_group, 0.0, 1.0, out=p_group)
        group_pt = uniq // n_ions
    else:
        p_group = np.zeros(0)
        group_pt = np.zeros(0, dtype=np.int64)
    bounds = np.searchsorted(group_pt, np.arange(n_pts + 1))

    lam = plan.pulses_per_point * (det.dark_rate * det.gate_duration
                                   + background_coeff * n_ph)
    expected = lam + plan.pulses_per_point * np.bincount(
        group_pt, weights=p_group, minlength=n_pts)
    ranks = plan.ranks()

    def sample(k: int) -> int:
        gen = _child_rng(seed, ranks[k])
        sel = p_group[bounds[k]:bounds[k + 1]]
        clicks = int(gen.binomial(plan.pulses_per_point, sel).sum()) if len(sel) else 0
        return clicks + int(gen.poisson(lam[k]))

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            counts = np.fromiter(pool.map(sample, range(n_pts)),
                                 dtype=np.int64, count=n_pts)
    else:
        counts = np.fromiter((sample(k) for k in range(n_pts)),
                             dtype=np.int64, count=n_pts)

    return ScanResult(axis=plan.axis, grid=grid.copy(), counts=counts,
                      expected=expected, cavity_freq=f_cav, elapsed=elapsed,
                      pulses_per_point=plan.pulses_per_point, seed=seed)


def _operating_point(ion, cavity, emitter, power, gamma_d, cavity_detuning_hz):
    """Rates and drive for one ion with the laser parked on it."""
    delta_c = TWO_PI * cavity_detuning_hz
    roll = 1.0 / (1.0 + (2.0 * delta_c / cavity.kappa) ** 2)
    p_eff = ion.purcell * roll
    gamma = emitter.gamma0 * (1.0 + p_eff)
    eta = p_eff / (1.0 + p_eff)
    n_ph = intracavity_photon_number(power, cavity.eta_cav, cavity.kappa,
                                     emitter.omega) * roll
    omega = math.sqrt(n_ph) * ion.g
    return gamma, eta, omega, n_ph


@dataclass
class LifetimeResult:
    stream: ClickStream
    bin_mids: np.ndarray
    bin_counts: np.ndarray
    gamma: float        # decay rate used by the simulation
    p_excited: float
    seed: int

    def table(self, header: dict | None = None):
        meta = {"gamma_true": self.gamma, "p_excited": self.p_excited,
                "seed": self.seed}
        if header:
            meta.update(header)
        cols = [("time_s", self.bin_mids),
                ("counts", self.bin_counts.astype(float))]
        return cols, meta

    def to_csv(self, path, header: dict | None = None) -> None:
        cols, meta = self.table(header)
        write_csv_atomic(path, cols, header=meta)


def run_lifetime(ion: IonRecord, cavity: CavityParams,
                 emitter: EmitterConstants, seq: PulseSequence,
                 det: DetectorConfig, n_pulses: int, seed: int, *,
                 gamma_d: float = GAMMA_D_DEFAULT,
                 laser_detuning_hz: float = 0.0,
                 cavity_detuning_hz: float = 0.0,
                 background_per_pulse: float = 0.0,
                 n_bins: int = 64) -> LifetimeResult:
    """Time-tag the gated decay after each excitation pulse."""
    _validate_gate(seq, det)
    gamma, eta, omega, _ = _operating_point(ion, cavity, emitter,
                                            seq.input_power, gamma_d,
                                            cavity_detuning_hz)
    p_exc = pulse_excitation(omega, TWO_PI * laser_detuning_hz, gamma,
                             gamma_d, seq.excite_duration)
    emission = EmissionModel(p_excited=p_exc, gamma=gamma,
                             eta_into_cavity=eta,
                             decay_start=seq.excite_duration)
    stream = simulate_clicks(emission, det, n_pulses,
                             np.random.default_rng(seed),
                             rep_period=seq.rep_period,
                             background_per_pulse=background_per_pulse,
                             seed=seed)
    edges = np.linspace(det.gate_start, det.gate_start + det.gate_duration,
                        n_bins + 1)
    bin_counts, _ = np.histogram(stream.t_in_pulse, bins=edges)
    mids = 0.5 * (edges[:-1] + edges[1:])
    return LifetimeResult(stream=stream, bin_mids=mids,
                          bin_counts=bin_counts, gamma=float(gamma),
                          p_excited=float(p_exc), seed=seed)


def fit_lifetime(result: LifetimeResult) -> FitResult:
    """Exponential fit of the binned decay; tau is in seconds."""
    x = result.bin_mids - result.bin_mids[0]
    return fit_model(EXPONENTIAL, x, result.bin_counts.astype(float))


@dataclass
class CavitySweepResult:
    detuning_hz: np.ndarray
    gamma_fit: np.ndarray
    gamma_err: np.ndarray
    gamma_expected: np.ndarray
    purcell_fit: np.ndarray
    converged: np.ndarray
    pulses_per_point: int
    seed: int

    def table(self, header: dict | None = None):
        meta = {"pulses_per_point": self.pulses_per_point, "seed": self.seed}
        if header:
            meta.update(header)
        cols = [("cavity_detuning_hz", self.detuning_hz),
                ("gamma_fit", self.gamma_fit),
                ("gamma_err", self.gamma_err),
                ("gamma_expected", self.gamma_expected),
                ("purcell_fit", self.purcell_fit)]
        return cols, meta

    def to_csv(self, path, header: dict | None = None) -> None:
        cols, meta = self.table(header)
        write_csv_atomic(path, cols, header=meta)


def run_cavity_sweep(ion: IonRecord, cavity: CavityParams,
                     emitter: EmitterConstants, seq: PulseSequence,
                     detunings_hz, pulses_per_point: int, seed: int, *,
                     gamma_d: float = GAMMA_D_DEFAULT,
                     eta_total: float = 0.04,
                     dark_rate: float = 0.0,
                     n_bins: int = 48,
                     gate_factor: float = 6.0) -> CavitySweepResult:
    """Lifetime versus cavity-ion detuning, laser parked on the ion.

    The gate stretches with the expected lifetime so every point resolves
    its own decay; each point's histogram is fit for gamma.
    """
    detunings = np.ascontiguousarray(detunings_hz, dtype=float)
    if detunings.ndim != 1 or len(np.unique(detunings)) != len(detunings):
        raise DomainError("detunings must be a 1-d array of distinct values")
    ranks = np.empty(len(detunings), dtype=np.int64)
    ranks[np.argsort(detunings, kind="stable")] = np.arange(len(detunings))

    gamma_fit = np.full(len(detunings), np.nan)
    gamma_err = np.full(len(detunings), np.nan)
    gamma_expected = np.empty(len(detunings))
    converged = np.zeros(len(detunings), dtype=bool)
    for k, delta in enumerate(detunings):
        gamma, eta, omega, _ = _operating_point(ion, cavity, emitter,
                                                seq.input_power, gamma_d,
                                                delta)
        gamma_expected[k] = gamma
        p_exc = pulse_excitation(omega, 0.0, gamma, gamma_d,
                                 seq.excite_duration)
        gate = gate_factor / gamma
        det_k = DetectorConfig(eta_total=eta_total, dark_rate=dark_rate,
                               gate_start=seq.excite_duration,
                               gate_duration=gate)
        emission = EmissionModel(p_excited=p_exc, gamma=gamma,
                                 eta_into_cavity=eta,
                                 decay_start=seq.excite_duration)
        stream = simulate_clicks(emission, det_k, pulses_per_point,
                                 _child_rng(seed, ranks[k]),
                                 rep_period=seq.excite_duration + gate,
                                 seed=seed)
        edges = np.linspace(det_k.gate_start,
                            det_k.gate_start + det_k.gate_duration,
                            n_bins + 1)
        hist, _ = np.histogram(stream.t_in_pulse, bins=edges)
        mids = 0.5 * (edges[:-1] + edges[1:]) - det_k.gate_start
        try:
            fit = fit_model(EXPONENTIAL, mids, hist.astype(float))
        except FitError:
            continue
        tau = fit.params["tau"]
        # a collapsed fit can return tau ~ 0 with a wild stderr; keep such
        # points as NaN rows instead of propagating overflow
        with np.errstate(over="ignore"):
            err = np.float64(fit.stderr["tau"]) / np.float64(tau) ** 2
        if fit.converged and tau > mids[1] - mids[0] and np.isfinite(err):
            gamma_fit[k] = 1.0 / tau
            gamma_err[k] = float(err)
            converged[k] = True
    purcell = gamma_fit / emitter.gamma0 - 1.0
    return CavitySweepResult(detuning_hz=detunings, gamma_fit=gamma_fit,
                             gamma_err=gamma_err,
                             gamma_expected=gamma_expected,
                             purcell_fit=purcell, converged=converged,
                             pulses_per_point=pulses_per_point, seed=seed)


def fit_enhancement(result: CavitySweepResult) -> FitResult:
    """Lorentzian fit of the fitted enhancement versus cavity detuning."""
    ok = result.converged
    if np.count_nonzero(ok) < 5:
        raise FitError("too few converged sweep points")
    return fit_model(LORENTZIAN, result.detuning_hz[ok],
                     result.purcell_fit[ok])


@dataclass
class SaturationResult:
    powers: np.ndarray
    on_counts: np.ndarray
    off_counts: np.ndarray
    expected_on: np.ndarray
    expected_off: np.ndarray
    pulses_per_point: int
    seed: int

    def table(self, header: dict | None = None):
        meta = {"pulses_per_point": self.pulses_per_point, "seed": self.seed}
        if header:
            meta.update(header)
        cols = [("input_power_w", self.powers),
                ("on_counts", self.on_counts.astype(float)),
                ("off_counts", self.off_counts.astype(float)),
                ("expected_on", self.expected_on),
                ("expected_off", self.expected_off)]
        return cols, meta

    def to_csv(self, path, header: dict | None = None) -> None:
        cols, meta = self.table(header)
        write_csv_atomic(path, cols, header=meta)


def run_saturation_series(ion: IonRecord, cavity: CavityParams,
                          emitter: EmitterConstants, powers,
                          det: DetectorConfig, pulses_per_point: int,
                          seed: int, *,
                          excite_duration: float = 10e-6,
                          rep_period: float = 100e-6,
                          off_detuning_hz: float = 200e6,
                          gamma_d: float = GAMMA_D_DEFAULT,
                          background_coeff: float = 0.0) -> SaturationResult:
    """Peak and off-resonance click totals for a ladder of drive powers."""
    powers = np.ascontiguousarray(powers, dtype=float)
    if powers.ndim != 1 or len(np.unique(powers)) != len(powers):
        raise DomainError("powers must be a 1-d array of distinct values")
    if np.any(powers < 0):
        raise DomainError("powers must be non-negative")
    ranks = np.empty(len(powers), dtype=np.int64)
    ranks[np.argsort(powers, kind="stable")] = np.arange(len(powers))

    on_counts = np.empty(len(powers), dtype=np.int64)
    off_counts = np.empty(len(powers), dtype=np.int64)
    expected_on = np.empty(len(powers))
    expected_off = np.empty(len(powers))
    for k, power in enumerate(powers):
        seq = PulseSequence(input_power=power,
                            excite_duration=excite_duration,
                            rep_period=rep_period)
        _validate_gate(seq, det)
        gamma, eta, omega, n_ph = _operating_point(ion, cavity, emitter,
                                                   power, gamma_d, 0.0)
        capture = window_capture_fraction(gamma, det.gate_start,
                                          det.gate_duration,
                                          seq.excite_duration)
        factor = eta * capture * det.eta_total
        p_on = pulse_excitation(omega, 0.0, gamma, gamma_d,
                                excite_duration) * factor
        p_off = pulse_excitation(omega, TWO_PI * off_detuning_hz, gamma,
                                 gamma_d, excite_duration) * factor
        lam = pulses_per_point * (det.dark_rate * det.gate_duration
                                  + background_coeff * n_ph)
        gen = _child_rng(seed, ranks[k])
        on_counts[k] = int(gen.binomial(pulses_per_point, p_on)) \
            + int(gen.poisson(lam))
        off_counts[k] = int(gen.binomial(pulses_per_point, p_off)) \
            + int(gen.poisson(lam))
        expected_on[k] = pulses_per_point * p_on + lam
        expected_off[k] = pulses_per_point * p_off + lam
    return SaturationResult(powers=powers, on_counts=on_counts,
                            off_counts=off_counts, expected_on=expected_on,
                            expected_off=expected_off,
                            pulses_per_point=pulses_per_point, seed=seed)


@dataclass
class G2Result:
    offsets: np.ndarray
    g2: np.ndarray
    stderr: np.ndarray
    floor_predicted: float
    signal_per_pulse: float
    background_per_pulse: float
    stream: ClickStream

    def table(self, header: dict | None = None):
        meta = {"floor_predicted": self.floor_predicted,
                "signal_per_pulse": self.signal_per_pulse,
                "background_per_pulse": self.background_per_pulse,
                "seed": self.stream.seed}
        if header:
            meta.update(header)
        cols = [("offset", self.offsets.astype(float)),
                ("g2", self.g2),
                ("stderr", self.stderr)]
        return cols, meta

    def to_csv(self, path, header: dict | None = None) -> None:
        cols, meta = self.table(header)
        write_csv_atomic(path, cols, header=meta)


def run_g2(ion: IonRecord, cavity: CavityParams, emitter: EmitterConstants,
           seq: PulseSequence, det: DetectorConfig, n_pulses: int,
           seed: int, *,
           gamma_d: float = GAMMA_D_DEFAULT,
           blink: BlinkConfig | None = None,
           background_per_pulse: float = 0.0,
           laser_detuning_hz: float = 0.0,
           max_offset: int = 10) -> G2Result:
    """Pulse-wise autocorrelation of one driven ion."""
    _validate_gate(seq, det)
    gamma, eta, omega, _ = _operating_point(ion, cavity, emitter,
                                            seq.input_power, gamma_d, 0.0)
    p_exc = pulse_excitation(omega, TWO_PI * laser_detuning_hz, gamma,
                             gamma_d, seq.excite_duration)
    emission = EmissionModel(p_excited=p_exc, gamma=gamma,
                             eta_into_cavity=eta,
                             decay_start=seq.excite_duration)
    stream = simulate_clicks(emission, det, n_pulses,
                             np.random.default_rng(seed), blink=blink,
                             rep_period=seq.rep_period,
                             background_per_pulse=background_per_pulse,
                             seed=seed)
    offsets, g2, stderr = g2_pulsed(stream, max_offset)
    capture = window_capture_fraction(gamma, det.gate_start,
                                      det.gate_duration, seq.excite_duration)
    signal = float(p_exc * eta * capture * det.eta_total)
    if blink is not None and blink.enabled:
        signal *= blink.p_bright
    background = det.dark_rate * det.gate_duration + background_per_pulse
    floor = g2_background_floor(signal / background) if background > 0 else 0.0
    return G2Result(offsets=offsets, g2=g2, stderr=stderr,
                    floor_predicted=float(floor), signal_per_pulse=signal,
                    background_per_pulse=float(background), stream=stream)


@dataclass
class ZeemanSeriesResult:
    b_values: np.ndarray
    splittings: np.ndarray
    predicted: np.ndarray
    slope_fit: FitResult

    def table(self, header: dict | None = None):
        meta = {"slope_hz_per_t": self.slope_fit.params["slope"],
                "intercept_hz": self.slope_fit.params["intercept"]}
        if header:
            meta.update(header)
        cols = [("b_field_t", self.b_values),
                ("splitting_hz", self.splittings),
                ("predicted_hz", self.predicted)]
        return cols, meta

    def to_csv(self, path, header: dict | None = None) -> None:
        cols, meta = self.table(header)
        write_csv_atomic(path, cols, header=meta)


def run_zeeman_series(ion: IonRecord, cavity: CavityParams,
                      emitter: EmitterConstants, seq: PulseSequence,
                      det: DetectorConfig, b_values, seed: int, *,
                      zeeman_base: ZeemanConfig | None = None,
                      pulses_per_point: int = 3000,
                      gamma_d: float = GAMMA_D_DEFAULT) -> ZeemanSeriesResult:
    """Measure the line splitting at several applied fields along x.

    Each field value gets its own small scan; the two spin lines are found
    by a coarse peak search and refined with Lorentzian fits.  The returned
    linear fit of splitting versus field carries the slope and the
    zero-field intercept from any residual offset field.
    """
    b_values = np.ascontiguousarray(b_values, dtype=float)
    if b_values.ndim != 1 or len(b_values) < 3:
        raise DomainError("need at least three field values")
    base = zeeman_base if zeeman_base is not None else ZeemanConfig()
    fwhm = expected_linewidth(ion, cavity, emitter, seq, gamma_d=gamma_d)
    splittings = np.empty(len(b_values))
    predicted = np.empty(len(b_values))
    for i, b in enumerate(b_values):
        cfg = replace(base, b_applied=(float(b), 0.0, 0.0),
                      delta_g=ion.delta_g_spin)
        predicted[i] = zeeman_splitting(cfg)
        span = max(8.0 * fwhm, 1.3 * predicted[i] + 8.0 * fwhm)
        step = fwhm / 6.0
        n_half = int(math.ceil(span / 2.0 / step))
        grid = ion.f0 + np.arange(-n_half, n_half + 1) * step
        plan = ScanPlan(ScanAxis.LASER_FREQUENCY, grid, pulses_per_point)
        scan = run_ple_scan(plan, [ion], cavity, emitter, seq, det,
                            _child_seed(seed, i), gamma_d=gamma_d,
                            zeeman=cfg)
        baseline = float(np.median(scan.counts))
        y = scan.counts.astype(float) - baseline
        noise = math.sqrt(max(baseline, 1.0))
        peaks = count_peaks(grid, y, width=fwhm, noise_sigma=noise)
        if peaks.count < 2:
            raise FitError(f"splitting unresolved at B = {b} T")
        top = np.argsort(peaks.amplitudes)[-2:]
        centers = np.sort(peaks.centers[top])
        refined = []
        for c in centers:
            window = np.abs(grid - c) <= 2.5 * fwhm
            fit = fit_model(LORENTZIAN, grid[window], y[window])
            refined.append(fit.params["center"])
        splittings[i] = abs(refined[1] - refined[0])
    slope_fit = fit_model(LINEAR, b_values, splittings)
    return ZeemanSeriesResult(b_values=b_values, splittings=splittings,
                              predicted=predicted, slope_fit=slope_fit)
