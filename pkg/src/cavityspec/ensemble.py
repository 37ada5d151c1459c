"""Doped-ion ensembles: spatial/spectral sampling and Zeeman line positions.

A sampling region is a box: x and y centred on the cavity field maximum,
z from 0 (interface) down into the substrate.  Only site-1 ions couple in
the band of interest, hence the site1_fraction multiplier on the density.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from enum import IntEnum

import numpy as np

from .constants import MU_BOHR, H_PLANCK, TWO_PI
from .errors import CapacityError, DomainError
from .physics import CavityParams, EmitterConstants, TransverseEnvelope, coupling_at_depth

ENSEMBLE_FORMAT = "cavityspec-ensemble-v1"

YTTRIUM_SITE_DENSITY = 1.87e28  # substitutional host sites per m^3


class Site(IntEnum):
    SITE1 = 1
    SITE2 = 2


@dataclass(frozen=True)
class IonRecord:
    """One sampled ion.

    position: (x, y, z) metres, z >= 0 into the substrate
    f0: optical transition frequency, Hz
    g: cavity coupling at the ion's position, rad/s
    purcell: 4 g^2 / (kappa gamma0) for the owning cavity
    delta_g_spin: difference of ground/excited spin g-factors
    """

    position: tuple[float, float, float]
    f0: float
    g: float
    purcell: float
    delta_g_spin: float = 1.55
    site: Site = Site.SITE1

    def __post_init__(self):
        if self.position[2] < 0.0:
            raise DomainError(f"ion depth must be >= 0, got {self.position[2]}")
        if not (self.f0 > 0 and self.g >= 0 and self.purcell >= 0):
            raise DomainError("f0 must be positive; g and purcell non-negative")


@dataclass(frozen=True)
class EnsembleConfig:
    """Sampling recipe for a doped region around the cavity."""

    density: float                  # total dopant density, m^-3
    site1_fraction: float = 0.5
    f_center: float = 195.1188e12   # inhomogeneous line centre, Hz
    sigma_inh: float = 2.9e9        # inhomogeneous standard deviation, Hz
    region: tuple[float, float, float] = (2e-6, 1e-6, 0.2e-6)  # (Lx, Ly, Lz), m
    max_count: int = 10_000_000

    def __post_init__(self):
        if not (self.density > 0 and np.isfinite(self.density)):
            raise DomainError(f"density must be positive, got {self.density}")
        if not 0.0 < self.site1_fraction <= 1.0:
            raise DomainError("site1_fraction must lie in (0, 1]")
        if not (self.f_center > 0 and self.sigma_inh > 0):
            raise DomainError("f_center and sigma_inh must be positive")
        if any(not (d > 0 and np.isfinite(d)) for d in self.region):
            raise DomainError(f"region dimensions must be positive, got {self.region}")
        if self.max_count < 1:
            raise DomainError("max_count must be at least 1")

    @classmethod
    def from_ppm(cls, ppm: float, yttrium_density: float = YTTRIUM_SITE_DENSITY,
                 **kwargs) -> "EnsembleConfig":
        """Doping quoted in parts per million of host sites."""
        if not (ppm > 0 and yttrium_density > 0):
            raise DomainError("ppm and yttrium_density must be positive")
        return cls(density=ppm * 1e-6 * yttrium_density, **kwargs)

    @property
    def volume(self) -> float:
        lx, ly, lz = self.region
        return lx * ly * lz

    @property
    def mean_count(self) -> float:
        return self.density * self.site1_fraction * self.volume


@dataclass(frozen=True)
class ZeemanConfig:
    """Magnetic configuration for spin-split optical lines.

    b_offset models a stray/remanent field that adds vectorially to the
    applied one; delta_g is the |g_ground - g_excited| difference governing
    spin-conserving lines.  Spin-flip lines need the g-factor sum and are
    off by default.
    """

    b_applied: tuple[float, float, float] = (0.0, 0.0, 0.0)  # Tesla
    b_offset: tuple[float, float, float] = (1e-4, 0.0, 0.0)  # Tesla
    delta_g: float = 1.55
    spin_flip_strength: float = 0.0   # relative to a spin-conserving line
    sum_g: float | None = None

    def __post_init__(self):
        for vec in (self.b_applied, self.b_offset):
            if len(vec) != 3 or any(not np.isfinite(c) for c in vec):
                raise DomainError(f"field vectors must be finite 3-vectors, got {vec}")
        if not (self.delta_g > 0 and np.isfinite(self.delta_g)):
            raise DomainError(f"delta_g must be positive, got {self.delta_g}")
        if self.spin_flip_strength < 0:
            raise DomainError("spin_flip_strength must be non-negative")
        if self.spin_flip_strength > 0 and self.sum_g is None:
            raise DomainError("spin-flip lines require sum_g")

    @property
    def total_field(self) -> float:
        ax, ay, az = self.b_applied
        ox, oy, oz = self.b_offset
        return math.sqrt((ax + ox) ** 2 + (ay + oy) ** 2 + (az + oz) ** 2)


def mean_separation(density: float) -> float:
    """Nearest-neighbour distance heuristic density^(-1/3)."""
    if not (density > 0 and np.isfinite(density)):
        raise DomainError(f"density must be positive, got {density}")
    return density ** (-1.0 / 3.0)


def sample_ensemble(cfg: EnsembleConfig, cavity: CavityParams,
                    emitter: EmitterConstants, rng: np.random.Generator,
                    envelope: TransverseEnvelope | None = None) -> list[IonRecord]:
    """Draw one random ensemble.

    Ion count is Poisson with mean density*site1_fraction*volume; positions
    are uniform in the region; frequencies are normal around f_center with
    the inhomogeneous sigma.  Each ion's coupling combines the exponential
    depth law with the transverse envelope, and its Purcell factor follows
    from the owning cavity.
    """
    if envelope is None:
        envelope = TransverseEnvelope()
    n = int(rng.poisson(cfg.mean_count))
    if n > cfg.max_count:
        raise CapacityError(
            f"sampled {n} ions, exceeding max_count={cfg.max_count}")
    lx, ly, lz = cfg.region
    x = rng.uniform(-lx / 2.0, lx / 2.0, size=n)
    y = rng.uniform(-ly / 2.0, ly / 2.0, size=n)
    z = rng.uniform(0.0, lz, size=n)
    f0 = rng.normal(cfg.f_center, cfg.sigma_inh, size=n)
    g = coupling_at_depth(cavity.g_if, z, cavity.z_half) * envelope.amplitude(x, y)
    purcell = 4.0 * g * g / (cavity.kappa * emitter.gamma0)
    return [
        IonRecord(position=(float(x[i]), float(y[i]), float(z[i])),
                  f0=float(f0[i]), g=float(g[i]), purcell=float(purcell[i]))
        for i in range(n)
    ]


def ions_above_purcell(cfg: EnsembleConfig, cavity: CavityParams,
                       p_star_fraction: float,
                       envelope: TransverseEnvelope | None = None,
                       depth_step: float = 1e-9,
                       transverse_step: float = 5e-9) -> float:
    """Expected number of ions with P >= p_star_fraction * P_max.

    P(r)/P_max = 2^(-z/z_half) * envelope(x, y)^2, so the count is the
    site-1 density times the volume where that product clears the fraction,
    integrated on a midpoint grid (depth_step in z, transverse_step in x/y).
    """
    if not 0.0 < p_star_fraction <= 1.0:
        raise DomainError(f"p_star_fraction must lie in (0, 1], got {p_star_fraction}")
    if envelope is None:
        envelope = TransverseEnvelope()
    lx, ly, lz = cfg.region
    nx = max(2, int(round(lx / transverse_step)))
    ny = max(2, int(round(ly / transverse_step)))
    nz = max(2, int(round(lz / depth_step)))
    x = (np.arange(nx) + 0.5) * lx / nx - lx / 2.0
    y = (np.arange(ny) + 0.5) * ly / ny - ly / 2.0
    z = (np.arange(nz) + 0.5) * lz / nz
    t_sq = envelope.amplitude(x[:, None], y[None, :]) ** 2
    cell_area = (lx / nx) * (ly / ny)
    # per-depth threshold on the transverse intensity
    thresholds = p_star_fraction * np.exp2(z / cavity.z_half)
    area = np.array([np.count_nonzero(t_sq >= thr) for thr in thresholds],
                    dtype=float) * cell_area
    volume = float(np.sum(area) * (lz / nz))
    return cfg.density * cfg.site1_fraction * volume


def zeeman_splitting(zcfg: ZeemanConfig) -> float:
    """Spin-conserving line separation delta_g * mu_B * |B| / h, in Hz."""
    return zcfg.delta_g * MU_BOHR * zcfg.total_field / H_PLANCK


def zeeman_frequencies(f0: float, zcfg: ZeemanConfig) -> tuple[float, float]:
    """The two spin-conserving line frequencies (lower, upper), Hz."""
    if not (f0 > 0 and np.isfinite(f0)):
        raise DomainError(f"f0 must be positive, got {f0}")
    half = zeeman_splitting(zcfg) / 2.0
    return (f0 - half, f0 + half)


def zeeman_lines(f0: float, zcfg: ZeemanConfig) -> list[tuple[float, float]]:
    """All optical lines as (frequency, weight); weights sum to 1.

    Spin-conserving lines carry weight 1 each and spin-flip lines carry
    spin_flip_strength, before normalisation.
    """
    lo, hi = zeeman_frequencies(f0, zcfg)
    r = zcfg.spin_flip_strength
    norm = 2.0 * (1.0 + r)
    lines = [(lo, 1.0 / norm), (hi, 1.0 / norm)]
    if r > 0:
        half_flip = zcfg.sum_g * MU_BOHR * zcfg.total_field / H_PLANCK / 2.0
        lines += [(f0 - half_flip, r / norm), (f0 + half_flip, r / norm)]
    return lines


def background_ion_rate(n_ph: float, coeff: float) -> float:
    """Mean background counts per pulse from weakly coupled ions, coeff * n_ph."""
    if n_ph < 0 or coeff < 0 or not (np.isfinite(n_ph) and np.isfinite(coeff)):
        raise DomainError("n_ph and coeff must be non-negative and finite")
    return coeff * n_ph


def save_ensemble_json(path, ions: list[IonRecord], f_center: float) -> None:
    """Write ions to JSON: positions in nm, frequencies in GHz from f_center.

    Schema: {"format", "f_center_hz", "ions": [{"position_nm": [x, y, z],
    "frequency_offset_ghz", "coupling_mhz" (g / 2 pi, MHz), "purcell",
    "delta_g_spin", "site"}]}
    """
    payload = {
        "format": ENSEMBLE_FORMAT,
        "f_center_hz": f_center,
        "ions": [
            {
                "position_nm": [c * 1e9 for c in ion.position],
                "frequency_offset_ghz": (ion.f0 - f_center) / 1e9,
                "coupling_mhz": ion.g / TWO_PI / 1e6,
                "purcell": ion.purcell,
                "delta_g_spin": ion.delta_g_spin,
                "site": int(ion.site),
            }
            for ion in ions
        ],
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=1)
        fh.write("\n")


def load_ensemble_json(path) -> tuple[list[IonRecord], float]:
    """Inverse of save_ensemble_json; returns (ions, f_center)."""
    with open(path, encoding="utf-8") as fh:
        payload = json.load(fh)
    if payload.get("format") != ENSEMBLE_FORMAT:
        raise DomainError(f"unrecognised ensemble format {payload.get('format')!r}")
    f_center = float(payload["f_center_hz"])
    ions = []
    for entry in payload["ions"]:
        x, y, z = (c * 1e-9 for c in entry["position_nm"])
        g = entry["coupling_mhz"] * 1e6 * TWO_PI
        ions.append(IonRecord(
            position=(x, y, z),
            f0=f_center + entry["frequency_offset_ghz"] * 1e9,
            g=g,
            purcell=entry["purcell"],
            delta_g_spin=entry["delta_g_spin"],
            site=Site(entry["site"]),
        ))
    return ions, f_center
