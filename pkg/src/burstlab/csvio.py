"""Small CSV helpers shared by the exporters and the CLI."""

from __future__ import annotations

import csv
import hashlib
from fractions import Fraction
from pathlib import Path

import numpy as np


class DataError(ValueError):
    """Malformed or unreadable input data."""


def format_number(v) -> str:
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, Fraction):
        if v.denominator == 1:
            return str(v.numerator)
        return f"{float(v):.6f}"
    return f"{float(v):.9g}"


def write_rows(path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(format_number(v) if not isinstance(v, str) else v
                              for v in row) + "\n")


def read_columns(path, expected_header=None) -> dict[str, np.ndarray]:
    """Read a headed numeric CSV into float columns."""
    path = Path(path)
    try:
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader)
            rows = [r for r in reader if r]
    except (OSError, StopIteration) as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    header = [h.strip() for h in header]
    if expected_header is not None and header != list(expected_header):
        raise DataError(f"{path}: expected header {expected_header}, got {header}")
    try:
        data = np.array([[float(x) for x in r] for r in rows], dtype=float)
    except ValueError as exc:
        raise DataError(f"{path}: non-numeric value ({exc})") from exc
    if data.size == 0:
        data = data.reshape(0, len(header))
    return {h: data[:, i] for i, h in enumerate(header)}


def file_digest(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()
