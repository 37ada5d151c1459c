"""End-to-end checks of the command-line interface.

Everything runs main() in process; bundles land in pytest tmp dirs.
"""

import json
import os

import numpy as np
import pytest

from cavityspec.cli import main
from cavityspec.output import read_csv, write_csv_atomic


def _bundle_files(bundle: str) -> dict[str, bytes]:
    out = {}
    for name in sorted(os.listdir(bundle)):
        with open(os.path.join(bundle, name), "rb") as fh:
            out[name] = fh.read()
    return out


def _write_cfg(tmp_path, text: str) -> str:
    path = str(tmp_path / "run.cfg")
    with open(path, "w") as fh:
        fh.write(text)
    return path


def test_g2_rerun_is_byte_identical(tmp_path):
    cfg = _write_cfg(tmp_path, "experiment = g2\n\n[g2]\nn_pulses = 20000\n")
    a = str(tmp_path / "a")
    b = str(tmp_path / "b")
    assert main(["run", cfg, "--seed", "7", "--output", a]) == 0
    assert main(["run", cfg, "--seed", "7", "--output", b]) == 0
    files_a = _bundle_files(os.path.join(a, "g2-seed7"))
    files_b = _bundle_files(os.path.join(b, "g2-seed7"))
    assert files_a.keys() == files_b.keys()
    assert set(files_a) == {"g2.csv", "clicks.bin", "config.txt",
                            "manifest.json"}
    for name in files_a:
        assert files_a[name] == files_b[name], name


def test_seed_flag_changes_data_not_config_hash(tmp_path):
    cfg = _write_cfg(tmp_path, "experiment = g2\n\n[g2]\nn_pulses = 20000\n")
    a = str(tmp_path / "a")
    assert main(["run", cfg, "--seed", "1", "--output", a]) == 0
    assert main(["run", cfg, "--seed", "2", "--output", a]) == 0
    with open(os.path.join(a, "g2-seed1", "manifest.json")) as fh:
        m1 = json.load(fh)
    with open(os.path.join(a, "g2-seed2", "manifest.json")) as fh:
        m2 = json.load(fh)
    assert m1["seed"] == 1 and m2["seed"] == 2
    # the seed lives in the config, so the hash moves with it
    assert m1["config_hash"] != m2["config_hash"]
    assert m1["files"]["clicks.bin"] != m2["files"]["clicks.bin"]


def test_run_rejects_unknown_target(tmp_path, capsys):
    assert main(["run", "nosuch", "--output", str(tmp_path)]) == 2
    err = capsys.readouterr().err
    assert "nosuch" in err and "ple" in err


def test_run_reports_config_line_number(tmp_path, capsys):
    cfg = _write_cfg(tmp_path,
                     "experiment = ple\n\n[cavity]\nkappa = 3.85\n")
    assert main(["run", cfg, "--output", str(tmp_path / "o")]) == 2
    err = capsys.readouterr().err
    assert "kappa" in err and "unit" in err


def test_fit_malformed_csv_names_line(tmp_path, capsys):
    path = str(tmp_path / "bad.csv")
    with open(path, "w") as fh:
        fh.write("x,y\n1,2\n3\n")
    assert main(["fit", path, "--model", "linear"]) == 2
    assert "line 3" in capsys.readouterr().err


def test_fit_empty_csv(tmp_path, capsys):
    path = str(tmp_path / "empty.csv")
    with open(path, "w") as fh:
        fh.write("x,y\n")
    assert main(["fit", path, "--model", "linear"]) == 2
    assert "no data rows" in capsys.readouterr().err


def test_fit_exponential_recovers_lifetime(tmp_path, capsys):
    cfg = _write_cfg(tmp_path, "\n".join([
        "experiment = lifetime",
        "",
        "[sequence]",
        "power = 8 nW",
        "excite = 30 us",
        "period = 250 us",
        "",
        "[detector]",
        "gate_start = 30 us",
        "gate_duration = 200 us",
        "dark_rate = 0 Hz",
        "",
        "[lifetime]",
        "n_pulses = 300000",
    ]) + "\n")
    out = str(tmp_path / "o")
    assert main(["run", cfg, "--seed", "12", "--output", out]) == 0
    data = os.path.join(out, "lifetime-seed12", "lifetime.csv")
    header, _ = read_csv(data)
    fit_path = str(tmp_path / "fit.json")
    assert main(["fit", data, "--model", "exponential",
                 "--output", fit_path]) == 0
    with open(fit_path) as fh:
        fit = json.load(fh)
    tau = fit["params"]["tau"]
    err = fit["stderr"]["tau"]
    tau_true = 1.0 / float(header["gamma_true"])
    assert fit["converged"]
    assert abs(tau - tau_true) < 4.0 * err
    assert abs(tau - tau_true) / tau_true < 0.05


def test_fit_lorentzian_on_cavity_sweep(tmp_path):
    cfg = _write_cfg(tmp_path, "\n".join([
        "experiment = cavity_sweep",
        "",
        "[sequence]",
        "power = 8 nW",
        "excite = 30 us",
        "",
        "[detector]",
        "dark_rate = 0 Hz",
        "",
        "[cavity_sweep]",
        "n_points = 17",
        "pulses_per_point = 60000",
    ]) + "\n")
    out = str(tmp_path / "o")
    assert main(["run", cfg, "--seed", "11", "--output", out]) == 0
    data = os.path.join(out, "cavity_sweep-seed11", "cavity_sweep.csv")
    fit_path = str(tmp_path / "fit.json")
    assert main(["fit", data, "--model", "lorentzian",
                 "--weights", "uniform", "--output", fit_path]) == 0
    with open(fit_path) as fh:
        fit = json.load(fh)
    # first two columns are detuning and fitted gamma, so the fitted width
    # is the cavity linewidth in Hz
    assert abs(fit["params"]["width"] - 3.85e9) / 3.85e9 < 0.10
    assert abs(fit["params"]["center"]) < 0.4e9


def test_spin_t1_grid_flags(tmp_path):
    out = str(tmp_path / "o")
    assert main(["run", "spin_t1", "--temp-grid", "2:8:0.5", "--nu", "9",
                 "--output", out]) == 0
    header, cols = read_csv(os.path.join(out, "spin_t1-seed1",
                                         "spin_t1.csv"))
    assert len(cols["temperature_k"]) == 13
    assert float(header["nu_ghz"]) == 9.0
    i4 = int(np.argmin(np.abs(cols["temperature_k"] - 4.0)))
    assert cols["t1_s"][i4] == pytest.approx(1.63547e-3, rel=1e-4)


def test_purcell_stats_counts_decrease(tmp_path):
    out = str(tmp_path / "o")
    assert main(["run", "purcell_stats", "--output", out]) == 0
    _, cols = read_csv(os.path.join(out, "purcell_stats-seed1",
                                    "purcell_stats.csv"))
    counts = cols["expected_count"]
    assert np.all(np.diff(counts) <= 1e-9)
    assert counts[0] > 100.0


def test_json_format_matches_csv(tmp_path):
    cfg = _write_cfg(tmp_path, "\n".join([
        "experiment = ple",
        "",
        "[scan]",
        "span = 20 MHz",
        "pulses_per_point = 500",
    ]) + "\n")
    a = str(tmp_path / "a")
    b = str(tmp_path / "b")
    assert main(["run", cfg, "--seed", "4", "--output", a]) == 0
    assert main(["run", cfg, "--seed", "4", "--output", b,
                 "--format", "json"]) == 0
    _, csv_cols = read_csv(os.path.join(a, "ple-seed4", "ple.csv"))
    with open(os.path.join(b, "ple-seed4", "ple.json")) as fh:
        js = json.load(fh)
    for name, arr in csv_cols.items():
        # CSV went through 12-digit formatting, JSON carries full floats
        np.testing.assert_allclose(js["columns"][name], arr, rtol=1e-11)


def test_inspect_flags_tampering(tmp_path, capsys):
    cfg = _write_cfg(tmp_path, "experiment = g2\n\n[g2]\nn_pulses = 5000\n")
    out = str(tmp_path / "o")
    assert main(["run", cfg, "--seed", "3", "--output", out]) == 0
    bundle = os.path.join(out, "g2-seed3")
    assert main(["inspect", bundle]) == 0
    report = capsys.readouterr().out
    assert "experiment       g2" in report
    assert "MODIFIED" not in report
    with open(os.path.join(bundle, "g2.csv"), "a") as fh:
        fh.write("tampered\n")
    assert main(["inspect", bundle]) == 1
    assert "MODIFIED" in capsys.readouterr().out
    assert main(["inspect", str(tmp_path / "nowhere")]) == 2


def test_peaks_model_counts_separable_lines(tmp_path, capsys):
    x = np.linspace(0.0, 1e9, 4001)
    width = 6e6
    y = np.full_like(x, 5.0)
    centers = [2e8, 5e8, 8.1e8]
    for c in centers:
        y += 40.0 / (1.0 + (2.0 * (x - c) / width) ** 2)
    path = str(tmp_path / "scan.csv")
    write_csv_atomic(path, [("frequency_hz", x), ("counts", y)], header={})
    out = str(tmp_path / "peaks.json")
    assert main(["fit", path, "--model", "peaks", "--width", "6e6",
                 "--noise-sigma", "0.5", "--output", out]) == 0
    assert "peaks found: 3" in capsys.readouterr().out
    with open(out) as fh:
        found = json.load(fh)
    assert found["count"] == 3
    assert np.allclose(sorted(found["centers"]), centers, atol=width)


def test_fit_bunching_skips_zero_offset(tmp_path):
    m = np.arange(0, 11, dtype=float)
    g2 = 1.0 + 0.8 * np.exp(-m / 4.0)
    g2[0] = 0.02  # antibunched point must not drag the envelope fit
    path = str(tmp_path / "g2.csv")
    write_csv_atomic(path, [("offset", m), ("g2", g2)], header={})
    out = str(tmp_path / "fit.json")
    assert main(["fit", path, "--model", "bunching", "--weights", "uniform",
                 "--output", out]) == 0
    with open(out) as fh:
        fit = json.load(fh)
    assert fit["params"]["amplitude"] == pytest.approx(0.8, rel=1e-6)
    assert fit["params"]["switch_time"] == pytest.approx(4.0, rel=1e-6)
