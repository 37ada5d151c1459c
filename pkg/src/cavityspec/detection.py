"""Click-level detection model and pulsed photon statistics.

A pulsed experiment is reduced to a stream of detector clicks tagged with
the pulse number and the arrival time inside the pulse.  The emitter
contributes at most one photon per pulse (the drive is off once the gate
opens), thinned by the collection chain and the gate; dark counts and
residual laser background arrive as Poisson processes inside the gate.
Slow intensity switching (blinking) gates the emitter with a two-state
telegraph sampled at the pulse boundaries.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DomainError
from .output import write_bytes_atomic, write_csv_atomic, read_csv

_BINARY_MAGIC = b"CSPK"
_BINARY_VERSION = 1
_RECORD_DTYPE = np.dtype([("pulse_index", "<u8"), ("t_ns", "<f8")])


@dataclass(frozen=True)
class DetectorConfig:
    """Collection efficiency, noise, and gating of the counting hardware."""

    eta_total: float = 0.04       # photon -> click probability, all losses
    dark_rate: float = 100.0      # Hz
    gate_start: float = 10e-6     # s, relative to the pulse start
    gate_duration: float = 82e-6  # s
    dead_time: float = 0.0        # s, applied within each pulse

    def __post_init__(self):
        if not 0.0 <= self.eta_total <= 1.0:
            raise DomainError(f"eta_total must lie in [0, 1], got {self.eta_total}")
        if self.dark_rate < 0:
            raise DomainError(f"dark_rate must be non-negative, got {self.dark_rate}")
        if self.gate_start < 0 or self.gate_duration <= 0:
            raise DomainError("gate_start must be >= 0 and gate_duration > 0")
        if self.dead_time < 0:
            raise DomainError(f"dead_time must be non-negative, got {self.dead_time}")


@dataclass(frozen=True)
class BlinkConfig:
    """Telegraph intensity switching: stationary bright fraction and the
    correlation time of the bright/dark process."""

    enabled: bool = False
    p_bright: float = 1.0
    switch_time: float = 800e-6  # s

    def __post_init__(self):
        if not 0.0 < self.p_bright <= 1.0:
            raise DomainError(f"p_bright must lie in (0, 1], got {self.p_bright}")
        if self.switch_time <= 0:
            raise DomainError(f"switch_time must be positive, got {self.switch_time}")


@dataclass(frozen=True)
class EmissionModel:
    """Per-pulse emitter behaviour after the drive switches off."""

    p_excited: float          # excited-state population at the end of the drive
    gamma: float              # total decay rate, rad/s equivalent (1/s)
    eta_into_cavity: float    # fraction of decays emitting into the collected mode
    decay_start: float = 10e-6  # s, when free decay begins (end of the drive)

    def __post_init__(self):
        if not 0.0 <= self.p_excited <= 1.0:
            raise DomainError(f"p_excited must lie in [0, 1], got {self.p_excited}")
        if self.gamma <= 0:
            raise DomainError(f"gamma must be positive, got {self.gamma}")
        if not 0.0 <= self.eta_into_cavity <= 1.0:
            raise DomainError("eta_into_cavity must lie in [0, 1]")
        if self.decay_start < 0:
            raise DomainError("decay_start must be non-negative")


@dataclass(frozen=True)
class ClickStream:
    """Detector clicks, sorted by pulse and then by arrival time."""

    pulse_index: np.ndarray
    t_in_pulse: np.ndarray
    n_pulses: int
    seed: int = 0

    def __post_init__(self):
        pulse = np.ascontiguousarray(self.pulse_index, dtype=np.uint64)
        t = np.ascontiguousarray(self.t_in_pulse, dtype=float)
        object.__setattr__(self, "pulse_index", pulse)
        object.__setattr__(self, "t_in_pulse", t)
        if pulse.shape != t.shape or pulse.ndim != 1:
            raise DomainError("pulse_index and t_in_pulse must be 1-d and equal length")
        if self.n_pulses <= 0:
            raise DomainError(f"n_pulses must be positive, got {self.n_pulses}")
        if len(pulse) and int(pulse.max()) >= self.n_pulses:
            raise DomainError("click pulse_index outside the recorded range")
        if np.any(t < 0) or not np.all(np.isfinite(t)):
            raise DomainError("click times must be finite and non-negative")

    def __len__(self) -> int:
        return len(self.pulse_index)

    def counts(self) -> np.ndarray:
        """Clicks per pulse, length n_pulses."""
        return np.bincount(self.pulse_index.astype(np.int64),
                           minlength=self.n_pulses)

    def to_csv(self, path, header: dict | None = None) -> None:
        meta = {"n_pulses": self.n_pulses, "seed": self.seed}
        if header:
            meta.update(header)
        write_csv_atomic(path, [
            ("pulse_index", self.pulse_index.astype(float)),
            ("t_in_pulse_ns", self.t_in_pulse * 1e9),
        ], header=meta)

    @classmethod
    def from_csv(cls, path) -> "ClickStream":
        header, columns = read_csv(path)
        if "n_pulses" not in header:
            raise ConfigError(f"{path}: missing n_pulses header")
        return cls(columns["pulse_index"].astype(np.uint64),
                   columns["t_in_pulse_ns"] * 1e-9,
                   n_pulses=int(header["n_pulses"]),
                   seed=int(header.get("seed", 0)))

    def to_binary(self, path) -> None:
        records = np.empty(len(self), dtype=_RECORD_DTYPE)
        records["pulse_index"] = self.pulse_index
        records["t_ns"] = self.t_in_pulse * 1e9
        head = struct.pack("<4sIQQQ", _BINARY_MAGIC, _BINARY_VERSION,
                           self.n_pulses, self.seed, len(self))
        write_bytes_atomic(path, head + records.tobytes())

    @classmethod
    def from_binary(cls, path) -> "ClickStream":
        with open(path, "rb") as fh:
            raw = fh.read()
        head_size = struct.calcsize("<4sIQQQ")
        if len(raw) < head_size:
            raise ConfigError(f"{path}: truncated click file")
        magic, version, n_pulses, seed, n_records = struct.unpack_from(
            "<4sIQQQ", raw)
        if magic != _BINARY_MAGIC:
            raise ConfigError(f"{path}: not a click file (bad magic {magic!r})")
        if version != _BINARY_VERSION:
            raise ConfigError(f"{path}: unsupported click file version {version}")
        body = raw[head_size:]
        if len(body) != n_records * _RECORD_DTYPE.itemsize:
            raise ConfigError(f"{path}: click record payload has the wrong size")
        records = np.frombuffer(body, dtype=_RECORD_DTYPE)
        return cls(records["pulse_index"].copy(), records["t_ns"] * 1e-9,
                   n_pulses=int(n_pulses), seed=int(seed))


def _telegraph_bright(n_pulses, p_bright, rep_period, switch_time, rng):
    """Per-pulse bright flags for the stationary two-state telegraph."""
    decay = math.exp(-rep_period / switch_time)
    flip_from_bright = (1.0 - p_bright) * (1.0 - decay)
    flip_from_dark = p_bright * (1.0 - decay)
    bright = np.empty(n_pulses, dtype=bool)
    state = bool(rng.random() < p_bright)
    filled = 0
    while filled < n_pulses:
        flip_a = flip_from_bright if state else flip_from_dark
        flip_b = flip_from_dark if state else flip_from_bright
        if flip_a <= 0.0:  # absorbing state: stay put for the remainder
            bright[filled:] = state
            break
        block = 2048
        runs = np.empty(2 * block, dtype=np.int64)
        runs[0::2] = rng.geometric(flip_a, size=block)
        runs[1::2] = rng.geometric(max(flip_b, 1e-12), size=block)
        states = np.empty(2 * block, dtype=bool)
        states[0::2] = state
        states[1::2] = not state
        cum = np.cumsum(runs)
        remaining = n_pulses - filled
        k = int(np.searchsorted(cum, remaining)) + 1
        if k > len(runs):  # block exhausted; even run count, state unchanged
            k = len(runs)
        use = runs[:k].copy()
        overshoot = int(cum[k - 1]) - remaining
        if overshoot > 0:
            use[-1] -= overshoot
        chunk = np.repeat(states[:k], use)
        bright[filled:filled + len(chunk)] = chunk
        filled += len(chunk)
        if overshoot > 0:
            # resuming an interrupted sojourn is free: runs are memoryless
            state = bool(states[k - 1])
        else:
            state = not bool(states[k - 1])
    return bright


def simulate_clicks(emission: EmissionModel, detector: DetectorConfig,
                    n_pulses: int, rng: np.random.Generator, *,
                    blink: BlinkConfig | None = None,
                    rep_period: float = 100e-6,
                    background_per_pulse: float = 0.0,
                    seed: int = 0) -> ClickStream:
    """Generate the click record of a pulsed single-emitter run.

    Draw order is fixed (telegraph, excitation, decay times, background) so
    a given generator state always yields the same stream.
    """
    if n_pulses <= 0:
        raise DomainError(f"n_pulses must be positive, got {n_pulses}")
    if background_per_pulse < 0:
        raise DomainError("background_per_pulse must be non-negative")
    if rep_period <= 0:
        raise DomainError(f"rep_period must be positive, got {rep_period}")

    p_click = emission.p_excited * emission.eta_into_cavity * detector.eta_total
    if blink is not None and blink.enabled and blink.p_bright < 1.0:
        bright = _telegraph_bright(n_pulses, blink.p_bright, rep_period,
                                   blink.switch_time, rng)
        fire = rng.random(n_pulses) < (p_click * bright)
    else:
        fire = rng.random(n_pulses) < p_click
    src_pulse = np.flatnonzero(fire).astype(np.uint64)
    src_t = emission.decay_start + rng.exponential(1.0 / emission.gamma,
                                                   size=len(src_pulse))
    gate_end = detector.gate_start + detector.gate_duration
    in_gate = (src_t >= detector.gate_start) & (src_t < gate_end)
    src_pulse, src_t = src_pulse[in_gate], src_t[in_gate]

    lam = detector.dark_rate * detector.gate_duration + background_per_pulse
    if lam > 0:
        total_bg = rng.poisson(lam * n_pulses)
        bg_pulse = rng.integers(0, n_pulses, size=total_bg, dtype=np.uint64)
        bg_t = detector.gate_start + rng.random(total_bg) * detector.gate_duration
        pulse = np.concatenate([src_pulse, bg_pulse])
        t = np.concatenate([src_t, bg_t])
    else:
        pulse, t = src_pulse, src_t

    order = np.lexsort((t, pulse))
    pulse, t = pulse[order], t[order]
    if detector.dead_time > 0 and len(pulse) > 1:
        pulse, t = _prune_dead_time(pulse, t, detector.dead_time)
    return ClickStream(pulse, t, n_pulses=n_pulses, seed=seed)


def _prune_dead_time(pulse, t, dead_time):
    keep = np.ones(len(pulse), dtype=bool)
    starts = np.flatnonzero(np.r_[True, pulse[1:] != pulse[:-1]])
    bounds = np.r_[starts, len(pulse)]
    for s, e in zip(bounds[:-1], bounds[1:]):
        if e - s < 2:
            continue
        last = t[s]
        for j in range(s + 1, e):
            if t[j] - last < dead_time:
                keep[j] = False
            else:
                last = t[j]
    return pulse[keep], t[keep]


def g2_pulsed(stream: ClickStream, max_offset: int = 10):
    """Pulse-wise normalised intensity correlation.

    Returns (offsets, g2, stderr).  Offset 0 uses the factorial moment
    <n(n-1)>/<n>^2; offsets m >= 1 use <n_i n_{i+m}>/<n>^2.  The standard
    error treats the per-pulse products as independent samples and ignores
    the (smaller) uncertainty of the mean rate.
    """
    if max_offset < 0:
        raise DomainError(f"max_offset must be non-negative, got {max_offset}")
    if stream.n_pulses < max_offset + 2:
        raise DomainError("not enough pulses for the requested offset range")
    counts = stream.counts().astype(float)
    mu = counts.mean()
    if mu == 0.0:
        raise DomainError("click stream is empty; g2 is undefined")
    offsets = np.arange(max_offset + 1)
    g2 = np.empty(max_offset + 1)
    stderr = np.empty(max_offset + 1)
    mu_sq = mu * mu
    for m in offsets:
        x = counts * (counts - 1.0) if m == 0 else counts[:-m] * counts[m:]
        g2[m] = x.mean() / mu_sq
        stderr[m] = x.std(ddof=1) / math.sqrt(len(x)) / mu_sq
    return offsets, g2, stderr


def g2_background_floor(signal_to_background):
    """Zero-delay correlation of one quiet emitter over Poisson background.

    With per-pulse mean counts a*b (emitter) and b (background),
    g2(0) -> (2a + 1) / (a + 1)^2 for a perfectly antibunched source.
    """
    a = np.asarray(signal_to_background, dtype=float)
    if np.any(a < 0) or not np.all(np.isfinite(a)):
        raise DomainError("signal_to_background must be finite and non-negative")
    out = (2.0 * a + 1.0) / (a + 1.0) ** 2
    return float(out) if out.ndim == 0 else out


def bunching_profile(blink: BlinkConfig, rep_period: float, max_offset: int):
    """Blinking envelope g2(m) = 1 + ((1-p)/p) exp(-m T / tau) for m >= 0."""
    if rep_period <= 0:
        raise DomainError(f"rep_period must be positive, got {rep_period}")
    if max_offset < 0:
        raise DomainError(f"max_offset must be non-negative, got {max_offset}")
    m = np.arange(max_offset + 1)
    p = blink.p_bright
    return 1.0 + ((1.0 - p) / p) * np.exp(-m * rep_period / blink.switch_time)
