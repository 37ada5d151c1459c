"""Command-line surface: run experiments, fit data files, inspect bundles.

`run` executes one experiment from a config file (or built-in defaults named
by experiment), writing data files, the resolved config, and a manifest of
SHA-256 hashes into the output directory.  Identical configs and seeds
produce byte-identical bundles; wall time is reported on stderr only.

Exit codes: 0 success, 1 numeric failure, 2 input error.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
import time

import numpy as np

from . import __version__
from .analysis import MODELS, count_peaks, fit_model
from .config import (EXPERIMENTS, RunConfig, build_config, dump_config,
                     parse_config_text)
from .dynamics import SpinRelaxParams, spin_relaxation_rate
from .ensemble import ions_above_purcell, sample_ensemble
from .errors import (CapacityError, ConfigError, DomainError, FitError,
                     IntegrationError)
from .experiments import (ScanAxis, ScanPlan, run_cavity_sweep, run_g2,
                          run_lifetime, run_ple_scan, run_saturation_series,
                          run_zeeman_series)
from .output import (read_csv, write_csv_atomic, write_json_atomic,
                     write_text_atomic)

# rank keys 0..n-1 belong to scan points; the ensemble draw gets its own slot
_ENSEMBLE_STREAM = 2**32


def _write_table(outdir: str, base: str, cols, meta, fmt: str) -> str:
    if fmt == "json":
        name = base + ".json"
        payload = {"header": meta,
                   "columns": {k: [float(x) for x in arr] for k, arr in cols}}
        write_json_atomic(os.path.join(outdir, name), payload)
    else:
        name = base + ".csv"
        write_csv_atomic(os.path.join(outdir, name), cols, header=meta)
    return name


def _execute(cfg: RunConfig, threads: int, outdir: str, fmt: str) -> list[str]:
    """Run cfg.experiment and return the data file names written."""
    extra = {"config_hash": cfg.config_hash()}
    files: list[str] = []

    if cfg.experiment == "ple":
        if cfg.ensemble_enabled:
            rng = np.random.default_rng(np.random.SeedSequence(
                entropy=cfg.seed, spawn_key=(_ENSEMBLE_STREAM,)))
            ions = sample_ensemble(cfg.ensemble, cfg.cavity, cfg.emitter,
                                   rng, cfg.envelope)
        else:
            ions = [cfg.ion]
        plan = ScanPlan(ScanAxis.LASER_FREQUENCY, cfg.scan.grid(),
                        cfg.scan.pulses_per_point,
                        cavity_drift_rate=cfg.scan.drift_rate)
        res = run_ple_scan(plan, ions, cfg.cavity, cfg.emitter, cfg.sequence,
                           cfg.detector, cfg.seed, gamma_d=cfg.gamma_d,
                           co_scan=cfg.scan.co_scan,
                           background_coeff=cfg.scan.background_coeff,
                           threads=threads)
        cols, meta = res.table({**extra, "n_ions": len(ions)})
        files.append(_write_table(outdir, "ple", cols, meta, fmt))

    elif cfg.experiment == "lifetime":
        res = run_lifetime(cfg.ion, cfg.cavity, cfg.emitter, cfg.sequence,
                           cfg.detector, cfg.lifetime.n_pulses, cfg.seed,
                           gamma_d=cfg.gamma_d,
                           laser_detuning_hz=cfg.lifetime.laser_detuning,
                           cavity_detuning_hz=cfg.lifetime.cavity_detuning,
                           background_per_pulse=cfg.lifetime.background_per_pulse,
                           n_bins=cfg.lifetime.n_bins)
        cols, meta = res.table(extra)
        files.append(_write_table(outdir, "lifetime", cols, meta, fmt))
        res.stream.to_binary(os.path.join(outdir, "clicks.bin"))
        files.append("clicks.bin")

    elif cfg.experiment == "cavity_sweep":
        detunings = np.linspace(-cfg.sweep.span / 2.0, cfg.sweep.span / 2.0,
                                cfg.sweep.n_points)
        res = run_cavity_sweep(cfg.ion, cfg.cavity, cfg.emitter, cfg.sequence,
                               detunings, cfg.sweep.pulses_per_point,
                               cfg.seed, gamma_d=cfg.gamma_d,
                               eta_total=cfg.detector.eta_total,
                               dark_rate=cfg.detector.dark_rate,
                               n_bins=cfg.sweep.n_bins,
                               gate_factor=cfg.sweep.gate_factor)
        cols, meta = res.table(extra)
        files.append(_write_table(outdir, "cavity_sweep", cols, meta, fmt))

    elif cfg.experiment == "saturation":
        if not 0 < cfg.saturation.power_min < cfg.saturation.power_max:
            raise ConfigError("[saturation]: need 0 < power_min < power_max")
        powers = np.geomspace(cfg.saturation.power_min,
                              cfg.saturation.power_max,
                              cfg.saturation.n_points)
        res = run_saturation_series(cfg.ion, cfg.cavity, cfg.emitter, powers,
                                    cfg.detector,
                                    cfg.scan.pulses_per_point, cfg.seed,
                                    excite_duration=cfg.sequence.excite_duration,
                                    rep_period=cfg.sequence.rep_period,
                                    off_detuning_hz=cfg.saturation.off_detuning,
                                    gamma_d=cfg.gamma_d,
                                    background_coeff=cfg.scan.background_coeff)
        cols, meta = res.table(extra)
        files.append(_write_table(outdir, "saturation", cols, meta, fmt))

    elif cfg.experiment == "zeeman":
        res = run_zeeman_series(cfg.ion, cfg.cavity, cfg.emitter,
                                cfg.sequence, cfg.detector,
                                np.asarray(cfg.zeeman_fields), cfg.seed,
                                zeeman_base=cfg.zeeman,
                                pulses_per_point=cfg.zeeman_pulses,
                                gamma_d=cfg.gamma_d)
        cols, meta = res.table(extra)
        files.append(_write_table(outdir, "zeeman", cols, meta, fmt))

    elif cfg.experiment == "g2":
        blink = cfg.g2.blink if cfg.g2.blink.enabled else None
        res = run_g2(cfg.ion, cfg.cavity, cfg.emitter, cfg.sequence,
                     cfg.detector, cfg.g2.n_pulses, cfg.seed,
                     gamma_d=cfg.gamma_d, blink=blink,
                     background_per_pulse=cfg.g2.background_per_pulse,
                     max_offset=cfg.g2.max_offset)
        cols, meta = res.table(extra)
        files.append(_write_table(outdir, "g2", cols, meta, fmt))
        res.stream.to_binary(os.path.join(outdir, "clicks.bin"))
        files.append("clicks.bin")

    elif cfg.experiment == "spin_t1":
        temps = cfg.spin.temperatures()
        rates = np.empty(len(temps))
        for i, t in enumerate(temps):
            params = SpinRelaxParams(temperature=float(t),
                                     spin_splitting=cfg.spin.nu_hz / 1e9,
                                     a_direct=cfg.spin.a_direct,
                                     a_raman=cfg.spin.a_raman,
                                     a_orbach=cfg.spin.a_orbach,
                                     delta_orbach=cfg.spin.delta_orbach)
            rates[i] = spin_relaxation_rate(params)
        with np.errstate(divide="ignore"):
            t1 = np.where(rates > 0, 1.0 / np.maximum(rates, 1e-300), np.inf)
        cols = [("temperature_k", temps), ("rate_per_s", rates), ("t1_s", t1)]
        meta = {**extra, "nu_ghz": cfg.spin.nu_hz / 1e9, "seed": cfg.seed}
        files.append(_write_table(outdir, "spin_t1", cols, meta, fmt))

    elif cfg.experiment == "purcell_stats":
        fracs = np.linspace(cfg.stats.fraction_min, cfg.stats.fraction_max,
                            cfg.stats.n_points)
        counts = np.array([
            ions_above_purcell(cfg.ensemble, cfg.cavity, float(f),
                               envelope=cfg.envelope) for f in fracs])
        cols = [("p_star_fraction", fracs), ("expected_count", counts)]
        meta = {**extra, "seed": cfg.seed}
        files.append(_write_table(outdir, "purcell_stats", cols, meta, fmt))

    else:  # unreachable: build_config validates the name
        raise ConfigError(f"unknown experiment {cfg.experiment!r}")
    return files


def _sha256_file(path: str) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def _cmd_run(args) -> int:
    if args.target in EXPERIMENTS:
        entries = {("", "experiment"): args.target}
    elif os.path.exists(args.target):
        with open(args.target, encoding="utf-8") as fh:
            entries = parse_config_text(fh.read(), source=args.target)
    else:
        raise ConfigError(
            f"{args.target!r} is neither an experiment name "
            f"({', '.join(EXPERIMENTS)}) nor a config file")
    if args.seed is not None:
        entries[("", "seed")] = str(args.seed)
    if args.output is not None:
        entries[("", "output_dir")] = args.output
    if args.temp_grid is not None:
        entries[("spin_t1", "temp_grid")] = f"{args.temp_grid} K"
    if args.nu is not None:
        entries[("spin_t1", "nu")] = f"{args.nu:g} GHz"
    cfg = build_config(entries)

    outdir = os.path.join(cfg.output_dir, f"{cfg.experiment}-seed{cfg.seed}")
    os.makedirs(outdir, exist_ok=True)
    started = time.monotonic()
    files = _execute(cfg, args.threads, outdir, args.format)
    write_text_atomic(os.path.join(outdir, "config.txt"), dump_config(cfg))
    files.append("config.txt")
    manifest = {
        "experiment": cfg.experiment,
        "seed": cfg.seed,
        "config_hash": cfg.config_hash(),
        "package_version": __version__,
        "format": args.format,
        "files": {name: _sha256_file(os.path.join(outdir, name))
                  for name in sorted(files)},
    }
    write_json_atomic(os.path.join(outdir, "manifest.json"), manifest)
    print(outdir)
    print(f"run {cfg.experiment}: {len(files) + 1} files, "
          f"{time.monotonic() - started:.2f} s", file=sys.stderr)
    return 0


def _estimate_noise(y: np.ndarray) -> float:
    mad = float(np.median(np.abs(y - np.median(y))))
    return 1.4826 * mad


def _cmd_fit(args) -> int:
    try:
        header, cols = read_csv(args.data)
    except OSError as exc:
        raise ConfigError(f"cannot read {args.data}: {exc}") from None
    names = list(cols)
    if len(names) < 2:
        raise ConfigError(f"{args.data}: need at least two columns, "
                          f"got {names}")
    x = cols[names[0]]
    y = cols[names[1]]
    finite = np.isfinite(x) & np.isfinite(y)
    if not np.all(finite):
        print(f"note: skipping {int(np.sum(~finite))} non-finite rows",
              file=sys.stderr)
        x, y = x[finite], y[finite]
        cols = {k: v[finite] for k, v in cols.items()}
    if len(x) == 0:
        raise ConfigError(f"{args.data}: no finite data rows")
    out_path = args.output or args.data + ".fit.json"

    if args.model == "peaks":
        baseline = float(np.median(y))
        noise = args.noise_sigma if args.noise_sigma else _estimate_noise(y)
        if noise <= 0:
            raise ConfigError("noise sigma is zero; pass --noise-sigma")
        peaks = count_peaks(x, y - baseline, width=args.width,
                            noise_sigma=noise)
        result = {"model": "peaks", "count": peaks.count,
                  "width": args.width, "noise_sigma": noise,
                  "baseline": baseline,
                  "centers": [float(c) for c in peaks.centers],
                  "amplitudes": [float(a) for a in peaks.amplitudes]}
        print(f"peaks found: {peaks.count} "
              f"(width {args.width:g}, threshold 3 x {noise:g})")
        write_json_atomic(out_path, result)
        return 0

    weights = None
    if args.weights == "uniform":
        weights = np.ones_like(y)
    elif "weight" in cols:
        weights = cols["weight"]
    keep = slice(None)
    if args.model == "bunching":
        keep = x > 0  # the zero-offset point is antibunched, not bunching
    fit = fit_model(MODELS[args.model], x[keep], y[keep], weights=(
        weights[keep] if weights is not None else None))
    print(f"model       {fit.model}")
    state = "yes" if fit.converged else "NO"
    print(f"converged   {state} ({fit.n_iter} iterations)")
    for key in fit.params:
        print(f"{key:<11} {fit.params[key]:.6g} +- {fit.stderr[key]:.3g}")
    print(f"residual    {fit.residual_norm:.6g}")
    write_json_atomic(out_path, fit.to_json())
    if not fit.converged:
        raise FitError("fit did not converge")
    return 0


def _cmd_inspect(args) -> int:
    path = args.bundle
    if os.path.isdir(path):
        path = os.path.join(path, "manifest.json")
    try:
        with open(path, encoding="utf-8") as fh:
            manifest = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read manifest: {exc}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: not a manifest: {exc}") from None
    for key in ("experiment", "seed", "config_hash", "package_version",
                "format"):
        print(f"{key:<16} {manifest.get(key)}")
    bundle_dir = os.path.dirname(path)
    bad = 0
    for name, digest in sorted(manifest.get("files", {}).items()):
        target = os.path.join(bundle_dir, name)
        if not os.path.exists(target):
            status = "MISSING"
            bad += 1
        elif _sha256_file(target) != digest:
            status = "MODIFIED"
            bad += 1
        else:
            status = "ok"
        print(f"  {name:<20} {status}  {digest[:16]}")
    return 1 if bad else 0


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cavityspec",
        description="Synthetic cavity-enhanced spectroscopy runs and fits.")
    sub = parser.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", help="execute one experiment")
    run_p.add_argument("target",
                       help="experiment name (" + ", ".join(EXPERIMENTS)
                            + ") or a config file path")
    run_p.add_argument("--seed", type=int, help="override the RNG seed")
    run_p.add_argument("--output", help="override the output directory")
    run_p.add_argument("--threads", type=int, default=1,
                       help="worker threads for scan points (default 1)")
    run_p.add_argument("--format", choices=("csv", "json"), default="csv",
                       help="data file format (default csv)")
    run_p.add_argument("--temp-grid", dest="temp_grid",
                       help="spin_t1 only: start:stop:step in kelvin")
    run_p.add_argument("--nu", type=float,
                       help="spin_t1 only: spin splitting in GHz")

    fit_p = sub.add_parser("fit", help="fit a CSV data file")
    fit_p.add_argument("data", help="CSV whose first two columns are x, y")
    fit_p.add_argument("--model", required=True,
                       choices=tuple(MODELS) + ("peaks",))
    fit_p.add_argument("--width", type=float, default=6e6,
                       help="peaks: fixed Lorentzian width in x units "
                            "(default 6e6)")
    fit_p.add_argument("--noise-sigma", dest="noise_sigma", type=float,
                       help="peaks: noise level; default is estimated "
                            "from the data")
    fit_p.add_argument("--weights", choices=("poisson", "uniform"),
                       default="poisson")
    fit_p.add_argument("--output", help="where to write the JSON result")

    ins_p = sub.add_parser("inspect", help="print and verify a run manifest")
    ins_p.add_argument("bundle", help="bundle directory or manifest path")
    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        if args.command == "run":
            return _cmd_run(args)
        if args.command == "fit":
            return _cmd_fit(args)
        return _cmd_inspect(args)
    except (ConfigError, DomainError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (FitError, IntegrationError, CapacityError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
