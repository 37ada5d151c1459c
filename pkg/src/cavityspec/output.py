"""Atomic file writers and the CSV dialect shared by all outputs.

Every file is written to a temporary name in the destination directory and
renamed into place, so readers never observe a partial file.  Numbers are
formatted with 12 significant digits; identical inputs therefore produce
byte-identical files.
"""

from __future__ import annotations

import hashlib
import json
import os
import tempfile

import numpy as np

from .errors import ConfigError


def format_number(x) -> str:
    return "%.12g" % float(x)


def sha256_text(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def _atomic_write(path, data: bytes) -> None:
    path = os.fspath(path)
    parent = os.path.dirname(path) or "."
    fd, tmp = tempfile.mkstemp(dir=parent, prefix=".tmp-", suffix="~")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_bytes_atomic(path, data: bytes) -> None:
    _atomic_write(path, data)


def write_text_atomic(path, text: str) -> None:
    _atomic_write(path, text.encode("utf-8"))


def write_json_atomic(path, obj) -> None:
    _atomic_write(path, (json.dumps(obj, indent=1, sort_keys=True) + "\n").encode("utf-8"))


def write_csv_atomic(path, columns: list[tuple[str, np.ndarray]],
                     header: dict | None = None) -> None:
    """Write named columns with '# key: value' header lines before the data."""
    lines = []
    for key, value in (header or {}).items():
        lines.append(f"# {key}: {value}")
    lines.append(",".join(name for name, _ in columns))
    arrays = [np.asarray(col, dtype=float) for _, col in columns]
    n = len(arrays[0]) if arrays else 0
    if any(len(a) != n for a in arrays):
        raise ValueError("all columns must have equal length")
    for i in range(n):
        lines.append(",".join(format_number(a[i]) for a in arrays))
    _atomic_write(path, ("\n".join(lines) + "\n").encode("utf-8"))


def read_csv(path) -> tuple[dict, dict[str, np.ndarray]]:
    """Read a file written by write_csv_atomic: (header dict, column dict)."""
    header = {}
    names = None
    rows = []
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.strip()
            if not line:
                continue
            if line.startswith("#"):
                body = line.lstrip("#").strip()
                if ":" in body:
                    key, _, value = body.partition(":")
                    header[key.strip()] = value.strip()
                continue
            if names is None:
                names = [c.strip() for c in line.split(",")]
                continue
            cells = line.split(",")
            if len(cells) != len(names):
                raise ConfigError(
                    f"{path}: line {lineno}: expected {len(names)} columns, got {len(cells)}")
            try:
                rows.append([float(c) for c in cells])
            except ValueError as exc:
                raise ConfigError(
                    f"{path}: line {lineno}: malformed data row {line!r}") from exc
    if names is None:
        raise ConfigError(f"{path}: no column header found")
    if not rows:
        raise ConfigError(f"{path}: no data rows")
    data = np.asarray(rows, dtype=float)
    return header, {name: data[:, i] for i, name in enumerate(names)}
