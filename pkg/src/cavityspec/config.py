"""Run configuration: unit-suffixed `key = value` text grouped in [sections].

Dimensioned fields require an explicit unit ("kappa = 3.85 GHz"); a bare
number there is an error, not a guess.  Rates and couplings entered as
frequencies (kappa, g_interface, gamma0, gamma_dephasing) are cycles and
get multiplied by 2*pi internally; dark_rate stays a plain counts/s.
Frequencies inside a file are absolute, except the keys named *_offset,
which are relative to the cavity frequency.

dump_config writes the fully resolved settings back in the same syntax;
parsing that text reproduces the configuration exactly, and its SHA-256 is
the config hash recorded in run manifests.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .constants import TWO_PI
from .detection import BlinkConfig, DetectorConfig
from .ensemble import EnsembleConfig, IonRecord, ZeemanConfig
from .errors import ConfigError
from .experiments import PulseSequence
from .output import sha256_text
from .physics import CavityParams, EmitterConstants, TransverseEnvelope

EXPERIMENTS = ("ple", "lifetime", "cavity_sweep", "saturation", "zeeman",
               "g2", "spin_t1", "purcell_stats")


class Kind(Enum):
    STR = "string"
    INT = "integer"
    BOOL = "boolean"
    PLAIN = "dimensionless number"
    FREQ = "frequency"
    TIME = "time"
    POWER = "power"
    LENGTH = "length"
    BFIELD = "magnetic field"
    TEMP = "temperature"
    DRIFT = "frequency drift rate"
    VEC_LENGTH = "length 3-vector"
    VEC_BFIELD = "field 3-vector"
    BFIELD_LIST = "field list"
    INTERVALS = "interval list"
    TEMP_GRID = "temperature grid"


_UNITS: dict[Kind, dict[str, float]] = {
    Kind.FREQ: {"hz": 1.0, "khz": 1e3, "mhz": 1e6, "ghz": 1e9, "thz": 1e12},
    Kind.TIME: {"s": 1.0, "ms": 1e-3, "us": 1e-6, "µs": 1e-6, "ns": 1e-9},
    Kind.POWER: {"w": 1.0, "mw": 1e-3, "uw": 1e-6, "µw": 1e-6,
                 "nw": 1e-9, "pw": 1e-12},
    Kind.LENGTH: {"m": 1.0, "mm": 1e-3, "um": 1e-6, "µm": 1e-6, "nm": 1e-9},
    Kind.BFIELD: {"t": 1.0, "mt": 1e-3, "ut": 1e-6, "µt": 1e-6, "g": 1e-4},
    Kind.TEMP: {"k": 1.0},
    Kind.DRIFT: {"hz/s": 1.0, "khz/s": 1e3, "mhz/s": 1e6, "ghz/s": 1e9,
                 "mhz/hr": 1e6 / 3600.0, "ghz/hr": 1e9 / 3600.0},
}
_UNITS[Kind.VEC_LENGTH] = _UNITS[Kind.LENGTH]
_UNITS[Kind.VEC_BFIELD] = _UNITS[Kind.BFIELD]
_UNITS[Kind.BFIELD_LIST] = _UNITS[Kind.BFIELD]
_UNITS[Kind.INTERVALS] = _UNITS[Kind.FREQ]
_UNITS[Kind.TEMP_GRID] = _UNITS[Kind.TEMP]

_EXAMPLE = {Kind.FREQ: "3.85 GHz", Kind.TIME: "10 us", Kind.POWER: "1 nW",
            Kind.LENGTH: "45 nm", Kind.BFIELD: "2 mT", Kind.TEMP: "4 K",
            Kind.DRIFT: "1 MHz/s"}


def _fail(where: str, message: str) -> ConfigError:
    return ConfigError(f"{where}: {message}")


def _number(token: str, where: str) -> float:
    try:
        value = float(token)
    except ValueError:
        raise _fail(where, f"not a number: {token!r}") from None
    if not math.isfinite(value):
        raise _fail(where, f"value must be finite, got {token!r}")
    return value


def _unit_factor(token: str, kind: Kind, where: str) -> float:
    table = _UNITS[kind]
    factor = table.get(token.lower())
    if factor is None:
        raise _fail(where, f"unknown {kind.value} unit {token!r} "
                           f"(expected one of {', '.join(sorted(table))})")
    return factor


def _scalar_with_unit(text: str, kind: Kind, where: str) -> float:
    parts = text.split()
    if len(parts) == 1:
        raise _fail(where, f"{kind.value} needs a unit, e.g. "
                           f"'{_EXAMPLE[kind]}'; got bare {text!r}")
    if len(parts) != 2:
        raise _fail(where, f"expected '<number> <unit>', got {text!r}")
    return _number(parts[0], where) * _unit_factor(parts[1], kind, where)


def _vector_with_unit(text: str, kind: Kind, where: str) -> tuple[float, ...]:
    body = text.strip()
    if not body.startswith("("):
        raise _fail(where, f"expected '(x, y, z) <unit>', got {text!r}")
    close = body.find(")")
    if close < 0:
        raise _fail(where, "unterminated '(' in vector value")
    comps = [c.strip() for c in body[1:close].split(",")]
    unit = body[close + 1:].strip()
    if len(comps) != 3 or not unit:
        raise _fail(where, f"expected '(x, y, z) <unit>', got {text!r}")
    factor = _unit_factor(unit, kind, where)
    return tuple(_number(c, where) * factor for c in comps)


def _intervals(text: str, where: str) -> tuple[tuple[float, float], ...]:
    if not text.strip():
        return ()
    out = []
    for chunk in text.split(";"):
        body = chunk.strip()
        close = body.find(")")
        if not body.startswith("(") or close < 0:
            raise _fail(where, f"expected '(lo, hi) <unit>', got {body!r}")
        comps = [c.strip() for c in body[1:close].split(",")]
        unit = body[close + 1:].strip()
        if len(comps) != 2 or not unit:
            raise _fail(where, f"expected '(lo, hi) <unit>', got {body!r}")
        factor = _unit_factor(unit, Kind.FREQ, where)
        lo, hi = (_number(c, where) * factor for c in comps)
        if not lo < hi:
            raise _fail(where, f"interval bounds must satisfy lo < hi, got {body!r}")
        out.append((lo, hi))
    return tuple(out)


def _temp_grid(text: str, where: str) -> tuple[float, float, float]:
    parts = text.split()
    if len(parts) != 2:
        raise _fail(where, f"expected 'start:stop:step K', got {text!r}")
    factor = _unit_factor(parts[1], Kind.TEMP, where)
    pieces = parts[0].split(":")
    if len(pieces) != 3:
        raise _fail(where, f"expected 'start:stop:step K', got {text!r}")
    start, stop, step = (_number(p, where) * factor for p in pieces)
    if step <= 0 or stop < start:
        raise _fail(where, "grid needs step > 0 and stop >= start")
    return (start, stop, step)


def parse_value(text: str, kind: Kind, where: str):
    if kind is Kind.STR:
        return text
    if kind is Kind.BOOL:
        low = text.lower()
        if low in ("true", "yes", "on", "1"):
            return True
        if low in ("false", "no", "off", "0"):
            return False
        raise _fail(where, f"expected true/false, got {text!r}")
    if kind is Kind.INT:
        try:
            return int(text)
        except ValueError:
            raise _fail(where, f"expected an integer, got {text!r}") from None
    if kind is Kind.PLAIN:
        if len(text.split()) != 1:
            raise _fail(where, f"takes a bare number (no unit), got {text!r}")
        return _number(text, where)
    if kind in (Kind.VEC_LENGTH, Kind.VEC_BFIELD):
        return _vector_with_unit(text, kind, where)
    if kind is Kind.BFIELD_LIST:
        return tuple(_scalar_with_unit(c.strip(), Kind.BFIELD, where)
                     for c in text.split(",") if c.strip())
    if kind is Kind.INTERVALS:
        return _intervals(text, where)
    if kind is Kind.TEMP_GRID:
        return _temp_grid(text, where)
    return _scalar_with_unit(text, kind, where)


# (section, key) -> value kind; DEFAULTS below must cover the same keys.
REGISTRY: dict[tuple[str, str], Kind] = {
    ("", "experiment"): Kind.STR,
    ("", "seed"): Kind.INT,
    ("", "output_dir"): Kind.STR,
    ("cavity", "frequency"): Kind.FREQ,
    ("cavity", "kappa"): Kind.FREQ,
    ("cavity", "eta_cav"): Kind.PLAIN,
    ("cavity", "g_interface"): Kind.FREQ,
    ("cavity", "z_half"): Kind.LENGTH,
    ("cavity", "interface_fraction"): Kind.PLAIN,
    ("emitter", "gamma0"): Kind.FREQ,
    ("emitter", "beta"): Kind.PLAIN,
    ("emitter", "n_host"): Kind.PLAIN,
    ("emitter", "frequency"): Kind.FREQ,
    ("emitter", "gamma_dephasing"): Kind.FREQ,
    ("ion", "offset"): Kind.FREQ,
    ("ion", "purcell"): Kind.PLAIN,
    ("ion", "delta_g"): Kind.PLAIN,
    ("detector", "eta_total"): Kind.PLAIN,
    ("detector", "dark_rate"): Kind.FREQ,
    ("detector", "gate_start"): Kind.TIME,
    ("detector", "gate_duration"): Kind.TIME,
    ("detector", "dead_time"): Kind.TIME,
    ("sequence", "power"): Kind.POWER,
    ("sequence", "excite"): Kind.TIME,
    ("sequence", "period"): Kind.TIME,
    ("ensemble", "enabled"): Kind.BOOL,
    ("ensemble", "ppm"): Kind.PLAIN,
    ("ensemble", "density_per_m3"): Kind.PLAIN,
    ("ensemble", "site1_fraction"): Kind.PLAIN,
    ("ensemble", "center_offset"): Kind.FREQ,
    ("ensemble", "sigma"): Kind.FREQ,
    ("ensemble", "region"): Kind.VEC_LENGTH,
    ("ensemble", "max_count"): Kind.INT,
    ("ensemble", "waist_x"): Kind.LENGTH,
    ("ensemble", "waist_y"): Kind.LENGTH,
    ("scan", "center_offset"): Kind.FREQ,
    ("scan", "span"): Kind.FREQ,
    ("scan", "step"): Kind.FREQ,
    ("scan", "pulses_per_point"): Kind.INT,
    ("scan", "drift"): Kind.DRIFT,
    ("scan", "co_scan"): Kind.BOOL,
    ("scan", "background_coeff"): Kind.PLAIN,
    ("scan", "mask"): Kind.INTERVALS,
    ("lifetime", "n_pulses"): Kind.INT,
    ("lifetime", "n_bins"): Kind.INT,
    ("lifetime", "laser_detuning"): Kind.FREQ,
    ("lifetime", "cavity_detuning"): Kind.FREQ,
    ("lifetime", "background_per_pulse"): Kind.PLAIN,
    ("cavity_sweep", "span"): Kind.FREQ,
    ("cavity_sweep", "n_points"): Kind.INT,
    ("cavity_sweep", "pulses_per_point"): Kind.INT,
    ("cavity_sweep", "gate_factor"): Kind.PLAIN,
    ("cavity_sweep", "n_bins"): Kind.INT,
    ("saturation", "power_min"): Kind.POWER,
    ("saturation", "power_max"): Kind.POWER,
    ("saturation", "n_points"): Kind.INT,
    ("saturation", "off_detuning"): Kind.FREQ,
    ("zeeman", "b_offset"): Kind.VEC_BFIELD,
    ("zeeman", "spin_flip_strength"): Kind.PLAIN,
    ("zeeman", "sum_g"): Kind.PLAIN,
    ("zeeman", "fields"): Kind.BFIELD_LIST,
    ("zeeman", "pulses_per_point"): Kind.INT,
    ("g2", "n_pulses"): Kind.INT,
    ("g2", "max_offset"): Kind.INT,
    ("g2", "background_per_pulse"): Kind.PLAIN,
    ("g2", "blink"): Kind.BOOL,
    ("g2", "p_bright"): Kind.PLAIN,
    ("g2", "switch_time"): Kind.TIME,
    ("spin_t1", "temp_grid"): Kind.TEMP_GRID,
    ("spin_t1", "nu"): Kind.FREQ,
    ("spin_t1", "a_direct"): Kind.PLAIN,
    ("spin_t1", "a_raman"): Kind.PLAIN,
    ("spin_t1", "a_orbach"): Kind.PLAIN,
    ("spin_t1", "delta_orbach"): Kind.PLAIN,
    ("purcell_stats", "fraction_min"): Kind.PLAIN,
    ("purcell_stats", "fraction_max"): Kind.PLAIN,
    ("purcell_stats", "n_points"): Kind.INT,
}

DEFAULTS: dict[tuple[str, str], str] = {
    ("", "experiment"): "ple",
    ("", "seed"): "1",
    ("", "output_dir"): "cavityspec-out",
    ("cavity", "frequency"): "195.1188 THz",
    ("cavity", "kappa"): "3.85 GHz",
    ("cavity", "eta_cav"): "0.16",
    ("cavity", "g_interface"): "2.62 MHz",
    ("cavity", "z_half"): "45 nm",
    ("cavity", "interface_fraction"): "0.36",
    ("emitter", "gamma0"): "14 Hz",
    ("emitter", "beta"): "0.21",
    ("emitter", "n_host"): "1.80",
    ("emitter", "frequency"): "195 THz",
    ("emitter", "gamma_dephasing"): "3.1 MHz",
    ("ion", "offset"): "0 Hz",
    ("ion", "purcell"): "320",
    ("ion", "delta_g"): "1.55",
    ("detector", "eta_total"): "0.04",
    ("detector", "dark_rate"): "100 Hz",
    ("detector", "gate_start"): "10 us",
    ("detector", "gate_duration"): "82 us",
    ("detector", "dead_time"): "0 s",
    ("sequence", "power"): "50 pW",
    ("sequence", "excite"): "10 us",
    ("sequence", "period"): "100 us",
    ("ensemble", "enabled"): "false",
    ("ensemble", "ppm"): "3",
    ("ensemble", "density_per_m3"): "0",
    ("ensemble", "site1_fraction"): "0.5",
    ("ensemble", "center_offset"): "0 Hz",
    ("ensemble", "sigma"): "2.9 GHz",
    ("ensemble", "region"): "(2, 1, 0.15) um",
    ("ensemble", "max_count"): "10000000",
    ("ensemble", "waist_x"): "800 nm",
    ("ensemble", "waist_y"): "325 nm",
    ("scan", "center_offset"): "0 Hz",
    ("scan", "span"): "100 MHz",
    ("scan", "step"): "0.5 MHz",
    ("scan", "pulses_per_point"): "2000",
    ("scan", "drift"): "0 Hz/s",
    ("scan", "co_scan"): "true",
    ("scan", "background_coeff"): "0",
    ("scan", "mask"): "",
    ("lifetime", "n_pulses"): "100000",
    ("lifetime", "n_bins"): "64",
    ("lifetime", "laser_detuning"): "0 Hz",
    ("lifetime", "cavity_detuning"): "0 Hz",
    ("lifetime", "background_per_pulse"): "0",
    ("cavity_sweep", "span"): "9.24 GHz",
    ("cavity_sweep", "n_points"): "13",
    ("cavity_sweep", "pulses_per_point"): "30000",
    ("cavity_sweep", "gate_factor"): "6",
    ("cavity_sweep", "n_bins"): "48",
    ("saturation", "power_min"): "10 pW",
    ("saturation", "power_max"): "10 nW",
    ("saturation", "n_points"): "9",
    ("saturation", "off_detuning"): "200 MHz",
    ("zeeman", "b_offset"): "(1, 0, 0) G",
    ("zeeman", "spin_flip_strength"): "0",
    ("zeeman", "sum_g"): "0",
    ("zeeman", "fields"): "2 mT, 4 mT, 6 mT, 8 mT, 10 mT",
    # the short default excite pulse undersettles the ion, so peak finding
    # needs more shots per point than the other scans
    ("zeeman", "pulses_per_point"): "30000",
    ("g2", "n_pulses"): "1000000",
    ("g2", "max_offset"): "10",
    ("g2", "background_per_pulse"): "0",
    ("g2", "blink"): "false",
    ("g2", "p_bright"): "1",
    ("g2", "switch_time"): "800 us",
    ("spin_t1", "temp_grid"): "2:8:0.5 K",
    ("spin_t1", "nu"): "9 GHz",
    ("spin_t1", "a_direct"): "5e-5",
    ("spin_t1", "a_raman"): "1.3e-3",
    ("spin_t1", "a_orbach"): "2.5e10",
    ("spin_t1", "delta_orbach"): "6.4",
    ("purcell_stats", "fraction_min"): "0.02",
    ("purcell_stats", "fraction_max"): "1",
    ("purcell_stats", "n_points"): "25",
}

_SECTION_ORDER = ("", "cavity", "emitter", "ion", "detector", "sequence",
                  "ensemble", "scan", "lifetime", "cavity_sweep",
                  "saturation", "zeeman", "g2", "spin_t1", "purcell_stats")


@dataclass(frozen=True)
class ScanOptions:
    center: float
    span: float
    step: float
    pulses_per_point: int
    drift_rate: float
    co_scan: bool
    background_coeff: float
    mask: tuple[tuple[float, float], ...]  # Hz, relative to center

    def grid(self) -> np.ndarray:
        """Symmetric grid around the centre with masked intervals removed."""
        if self.step <= 0 or self.span <= 0:
            raise ConfigError("[scan]: span and step must be positive")
        n_half = int(round(self.span / 2.0 / self.step))
        offsets = np.arange(-n_half, n_half + 1) * self.step
        keep = np.ones(len(offsets), dtype=bool)
        for lo, hi in self.mask:
            keep &= ~((offsets >= lo) & (offsets <= hi))
        if not np.any(keep):
            raise ConfigError("[scan]: mask removes every grid point")
        return self.center + offsets[keep]


@dataclass(frozen=True)
class LifetimeOptions:
    n_pulses: int
    n_bins: int
    laser_detuning: float
    cavity_detuning: float
    background_per_pulse: float


@dataclass(frozen=True)
class SweepOptions:
    span: float
    n_points: int
    pulses_per_point: int
    gate_factor: float
    n_bins: int


@dataclass(frozen=True)
class SaturationOptions:
    power_min: float
    power_max: float
    n_points: int
    off_detuning: float


@dataclass(frozen=True)
class G2Options:
    n_pulses: int
    max_offset: int
    background_per_pulse: float
    blink: BlinkConfig


@dataclass(frozen=True)
class SpinT1Options:
    temp_grid: tuple[float, float, float]
    nu_hz: float
    a_direct: float
    a_raman: float
    a_orbach: float
    delta_orbach: float

    def temperatures(self) -> np.ndarray:
        start, stop, step = self.temp_grid
        return np.arange(start, stop + step / 2.0, step)


@dataclass(frozen=True)
class StatsOptions:
    fraction_min: float
    fraction_max: float
    n_points: int


@dataclass
class RunConfig:
    experiment: str
    seed: int
    output_dir: str
    cavity: CavityParams
    emitter: EmitterConstants
    gamma_d: float
    ion: IonRecord
    detector: DetectorConfig
    sequence: PulseSequence
    ensemble_enabled: bool
    ensemble: EnsembleConfig
    envelope: TransverseEnvelope
    zeeman: ZeemanConfig
    zeeman_fields: tuple[float, ...]
    zeeman_pulses: int
    scan: ScanOptions
    lifetime: LifetimeOptions
    sweep: SweepOptions
    saturation: SaturationOptions
    g2: G2Options
    spin: SpinT1Options
    stats: StatsOptions
    raw: dict[tuple[str, str], str]

    def config_hash(self) -> str:
        return sha256_text(dump_config(self))


def parse_config_text(text: str, source: str = "<config>") -> dict[tuple[str, str], str]:
    """Raw (section, key) -> value strings, validated against the registry."""
    entries: dict[tuple[str, str], str] = {}
    section = ""
    known_sections = {s for s, _ in REGISTRY}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        where = f"{source}: line {lineno}"
        if line.startswith("["):
            if not line.endswith("]"):
                raise _fail(where, f"unterminated section header {line!r}")
            section = line[1:-1].strip().lower()
            if section not in known_sections:
                raise _fail(where, f"unknown section [{section}]")
            continue
        if "=" not in line:
            raise _fail(where, f"expected 'key = value', got {line!r}")
        key, _, value = line.partition("=")
        key = key.strip().lower()
        if (section, key) not in REGISTRY:
            place = f"[{section}]" if section else "the top level"
            raise _fail(where, f"unknown key {key!r} in {place}")
        entries[(section, key)] = value.strip()
    return entries


def build_config(overrides: dict[tuple[str, str], str] | None = None) -> RunConfig:
    """Resolve defaults plus overrides into a typed RunConfig."""
    raw = dict(DEFAULTS)
    raw.update(overrides or {})
    v: dict[tuple[str, str], object] = {}
    for (section, key), text in raw.items():
        where = f"[{section}] {key}" if section else key
        v[(section, key)] = parse_value(text, REGISTRY[(section, key)], where)

    experiment = str(v[("", "experiment")]).lower()
    if experiment not in EXPERIMENTS:
        raise ConfigError(f"experiment: unknown experiment {experiment!r}, "
                          f"expected one of {', '.join(EXPERIMENTS)}")

    cavity = CavityParams(
        f_cav=v[("cavity", "frequency")],
        kappa=TWO_PI * v[("cavity", "kappa")],
        eta_cav=v[("cavity", "eta_cav")],
        g_if=TWO_PI * v[("cavity", "g_interface")],
        z_half=v[("cavity", "z_half")],
        interface_intensity_fraction=v[("cavity", "interface_fraction")])
    emitter = EmitterConstants(
        gamma0=TWO_PI * v[("emitter", "gamma0")],
        beta=v[("emitter", "beta")],
        n_host=v[("emitter", "n_host")],
        omega=TWO_PI * v[("emitter", "frequency")])
    gamma_d = TWO_PI * v[("emitter", "gamma_dephasing")]

    purcell = v[("ion", "purcell")]
    g_ion = math.sqrt(max(purcell, 0.0) * cavity.kappa * emitter.gamma0 / 4.0)
    ion = IonRecord(position=(0.0, 0.0, 0.0),
                    f0=cavity.f_cav + v[("ion", "offset")],
                    g=g_ion, purcell=purcell,
                    delta_g_spin=v[("ion", "delta_g")])

    detector = DetectorConfig(
        eta_total=v[("detector", "eta_total")],
        dark_rate=v[("detector", "dark_rate")],
        gate_start=v[("detector", "gate_start")],
        gate_duration=v[("detector", "gate_duration")],
        dead_time=v[("detector", "dead_time")])
    sequence = PulseSequence(
        input_power=v[("sequence", "power")],
        excite_duration=v[("sequence", "excite")],
        rep_period=v[("sequence", "period")])

    density = v[("ensemble", "density_per_m3")]
    if density <= 0:
        density = v[("ensemble", "ppm")] * 1e-6 * 1.87e28
    ensemble = EnsembleConfig(
        density=density,
        site1_fraction=v[("ensemble", "site1_fraction")],
        f_center=cavity.f_cav + v[("ensemble", "center_offset")],
        sigma_inh=v[("ensemble", "sigma")],
        region=v[("ensemble", "region")],
        max_count=v[("ensemble", "max_count")])
    envelope = TransverseEnvelope(waist_x=v[("ensemble", "waist_x")],
                                  waist_y=v[("ensemble", "waist_y")])

    sum_g = v[("zeeman", "sum_g")]
    zeeman = ZeemanConfig(
        b_applied=(0.0, 0.0, 0.0),
        b_offset=v[("zeeman", "b_offset")],
        delta_g=v[("ion", "delta_g")],
        spin_flip_strength=v[("zeeman", "spin_flip_strength")],
        sum_g=sum_g if sum_g > 0 else None)

    scan = ScanOptions(
        center=cavity.f_cav + v[("scan", "center_offset")],
        span=v[("scan", "span")],
        step=v[("scan", "step")],
        pulses_per_point=v[("scan", "pulses_per_point")],
        drift_rate=v[("scan", "drift")],
        co_scan=v[("scan", "co_scan")],
        background_coeff=v[("scan", "background_coeff")],
        mask=v[("scan", "mask")])
    lifetime = LifetimeOptions(
        n_pulses=v[("lifetime", "n_pulses")],
        n_bins=v[("lifetime", "n_bins")],
        laser_detuning=v[("lifetime", "laser_detuning")],
        cavity_detuning=v[("lifetime", "cavity_detuning")],
        background_per_pulse=v[("lifetime", "background_per_pulse")])
    sweep = SweepOptions(
        span=v[("cavity_sweep", "span")],
        n_points=v[("cavity_sweep", "n_points")],
        pulses_per_point=v[("cavity_sweep", "pulses_per_point")],
        gate_factor=v[("cavity_sweep", "gate_factor")],
        n_bins=v[("cavity_sweep", "n_bins")])
    saturation = SaturationOptions(
        power_min=v[("saturation", "power_min")],
        power_max=v[("saturation", "power_max")],
        n_points=v[("saturation", "n_points")],
        off_detuning=v[("saturation", "off_detuning")])
    g2 = G2Options(
        n_pulses=v[("g2", "n_pulses")],
        max_offset=v[("g2", "max_offset")],
        background_per_pulse=v[("g2", "background_per_pulse")],
        blink=BlinkConfig(enabled=v[("g2", "blink")],
                          p_bright=v[("g2", "p_bright")],
                          switch_time=v[("g2", "switch_time")]))
    spin = SpinT1Options(
        temp_grid=v[("spin_t1", "temp_grid")],
        nu_hz=v[("spin_t1", "nu")],
        a_direct=v[("spin_t1", "a_direct")],
        a_raman=v[("spin_t1", "a_raman")],
        a_orbach=v[("spin_t1", "a_orbach")],
        delta_orbach=v[("spin_t1", "delta_orbach")])
    stats = StatsOptions(
        fraction_min=v[("purcell_stats", "fraction_min")],
        fraction_max=v[("purcell_stats", "fraction_max")],
        n_points=v[("purcell_stats", "n_points")])

    return RunConfig(
        experiment=experiment, seed=v[("", "seed")],
        output_dir=v[("", "output_dir")], cavity=cavity, emitter=emitter,
        gamma_d=gamma_d, ion=ion, detector=detector, sequence=sequence,
        ensemble_enabled=v[("ensemble", "enabled")], ensemble=ensemble,
        envelope=envelope, zeeman=zeeman,
        zeeman_fields=v[("zeeman", "fields")],
        zeeman_pulses=v[("zeeman", "pulses_per_point")],
        scan=scan, lifetime=lifetime, sweep=sweep, saturation=saturation,
        g2=g2, spin=spin, stats=stats, raw=raw)


def load_config(path) -> RunConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from None
    return build_config(parse_config_text(text, source=str(path)))


def default_config(experiment: str) -> RunConfig:
    return build_config({("", "experiment"): experiment})


def dump_config(cfg: RunConfig) -> str:
    """Resolved settings in the input syntax; parsing it reproduces cfg.

    output_dir is omitted: it names a filesystem location, not a physics
    setting, and keeping it out makes the config hash independent of where
    the bundle lands.
    """
    lines: list[str] = []
    for section in _SECTION_ORDER:
        keys = [k for (s, k) in REGISTRY
                if s == section and (s, k) != ("", "output_dir")]
        if section:
            lines.append("")
            lines.append(f"[{section}]")
        for key in keys:
            lines.append(f"{key} = {cfg.raw[(section, key)]}")
    return "\n".join(lines) + "\n"
