"""Packet traces and the binned arrival functions built from them."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from fractions import Fraction
from functools import cached_property
from typing import Iterable, NamedTuple, Sequence

import numpy as np

from .csvio import DataError
from .netcalc import NS_PER_S, Curve, TimeGrid, as_fraction, from_increments

DEFAULT_BIN_NS = 1000
DEFAULT_REORDER_WINDOW_NS = 1000


class PacketRecord(NamedTuple):
    timestamp_ns: int
    size: int


@dataclass(frozen=True, eq=False)
class ArrivalFunction:
    """Cumulative bytes of one flow on a uniform grid."""

    cumulative: Curve

    def __post_init__(self):
        if not self.cumulative.is_exact_int:
            raise ValueError("arrival functions carry integer byte counts")

    @classmethod
    def from_bins(cls, per_bin, bin_width_ns=DEFAULT_BIN_NS) -> "ArrivalFunction":
        per_bin = np.asarray(per_bin, dtype=np.int64)
        grid = TimeGrid(bin_width_ns, len(per_bin))
        return cls(from_increments(grid, per_bin))

    @property
    def grid(self) -> TimeGrid:
        return self.cumulative.grid

    @property
    def bin_count(self) -> int:
        return self.grid.bin_count

    @cached_property
    def per_bin(self) -> np.ndarray:
        return self.cumulative.increments()

    @property
    def total_bytes(self) -> int:
        return int(self.cumulative.values[-1])

    @property
    def duration(self) -> Fraction:
        """Trace length in seconds."""
        return self.grid.duration_s

    @property
    def mean_rate(self) -> Fraction:
        """Average rate in bytes per second."""
        if self.bin_count == 0:
            return Fraction(0)
        return Fraction(self.total_bytes) / self.duration

    def __eq__(self, other):
        if not isinstance(other, ArrivalFunction):
            return NotImplemented
        return self.cumulative == other.cumulative

    def __repr__(self):
        return (f"ArrivalFunction(bins={self.bin_count}, "
                f"bin={self.grid.bin_width_ns}ns, total={self.total_bytes}B)")


# -- ingestion ---------------------------------------------------------------

def _bin_index(ts: np.ndarray, bin_width_ns: Fraction) -> np.ndarray:
    bw = as_fraction(bin_width_ns)
    return (ts * bw.denominator) // bw.numerator


def ingest_arrays(timestamps, sizes, bin_width_ns=DEFAULT_BIN_NS,
                  bin_count: int | None = None,
                  reorder_window_ns: int = DEFAULT_REORDER_WINDOW_NS
                  ) -> ArrivalFunction:
    ts = np.asarray(timestamps, dtype=np.int64)
    sz = np.asarray(sizes, dtype=np.int64)
    if ts.shape != sz.shape or ts.ndim != 1:
        raise ValueError("timestamps and sizes must be 1-d and equal length")
    if len(ts) == 0:
        raise ValueError("empty trace")
    if np.any(sz <= 0):
        raise ValueError("packet sizes must be positive")
    if np.any(ts < 0):
        raise ValueError("timestamps must be nonnegative")
    if len(ts) > 1:
        back = np.maximum.accumulate(ts)[:-1] - ts[1:]
        if np.any(back > reorder_window_ns):
            warnings.warn(f"{int(np.sum(back > 0))} packets out of order "
                          "beyond the reorder window; sorting trace",
                          stacklevel=2)
        if np.any(back > 0):
            order = np.argsort(ts, kind="stable")
            ts, sz = ts[order], sz[order]
    bw = as_fraction(bin_width_ns)
    idx = _bin_index(ts, bw)
    needed = int(idx[-1]) + 1
    if bin_count is None:
        bin_count = needed
    elif bin_count < needed:
        raise ValueError(f"bin_count {bin_count} too small for trace "
                         f"({needed} bins needed)")
    # bincount(weights=...) goes through float64, so accumulate exactly
    per_bin = np.zeros(bin_count, dtype=np.int64)
    np.add.at(per_bin, idx, sz)
    return ArrivalFunction(from_increments(TimeGrid(bw, bin_count), per_bin))


def ingest(records: Iterable, bin_width_ns=DEFAULT_BIN_NS,
           bin_count: int | None = None,
           reorder_window_ns: int = DEFAULT_REORDER_WINDOW_NS) -> ArrivalFunction:
    """Bin packet records (``(timestamp_ns, size)`` pairs) into an arrival function.

    Each packet is a point arrival in the bin containing its timestamp.
    """
    recs = list(records)
    if not recs:
        raise ValueError("empty trace")
    ts = np.fromiter((int(r[0]) for r in recs), dtype=np.int64, count=len(recs))
    sz = np.fromiter((int(r[1]) for r in recs), dtype=np.int64, count=len(recs))
    return ingest_arrays(ts, sz, bin_width_ns, bin_count, reorder_window_ns)


# -- trace CSV ---------------------------------------------------------------

def read_trace_csv(path) -> tuple[np.ndarray, np.ndarray]:
    """Read ``timestamp_ns,bytes`` rows; a header line is optional."""
    try:
        with open(path) as fh:
            lines = fh.read().splitlines()
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    start = 0
    if lines and not lines[0].split(",")[0].strip().lstrip("-").isdigit():
        start = 1
    ts, sz = [], []
    for lineno, line in enumerate(lines[start:], start=start + 1):
        if not line.strip():
            continue
        parts = line.split(",")
        try:
            if len(parts) != 2:
                raise ValueError("expected 2 fields")
            t, s = int(parts[0]), int(parts[1])
        except ValueError as exc:
            raise DataError(f"{path}:{lineno}: malformed row {line!r} ({exc})") from None
        if s <= 0 or t < 0:
            raise DataError(f"{path}:{lineno}: invalid packet {line!r}")
        ts.append(t)
        sz.append(s)
    if not ts:
        raise DataError(f"{path}: empty trace")
    return np.array(ts, dtype=np.int64), np.array(sz, dtype=np.int64)


def write_trace_csv(path, timestamps, sizes) -> None:
    ts = np.asarray(timestamps, dtype=np.int64)
    sz = np.asarray(sizes, dtype=np.int64)
    with open(path, "w") as fh:
        fh.write("timestamp_ns,bytes\n")
        if len(ts):
            fh.write("\n".join(f"{t},{s}" for t, s in zip(ts.tolist(), sz.tolist())))
            fh.write("\n")


def write_binned_csv(a: ArrivalFunction, path) -> None:
    starts = np.arange(a.bin_count) * float(a.grid.bin_width_s)
    with open(path, "w") as fh:
        fh.write("bin_start_s,bytes\n")
        for t, b in zip(starts.tolist(), a.per_bin.tolist()):
            fh.write(f"{t:.9f},{b}\n")


def read_binned_csv(path) -> ArrivalFunction:
    from .csvio import read_columns
    cols = read_columns(path, ["bin_start_s", "bytes"])
    starts, counts = cols["bin_start_s"], cols["bytes"]
    if len(starts) < 1:
        raise DataError(f"{path}: empty trace")
    bw_ns = round((starts[1] - starts[0]) * NS_PER_S) if len(starts) > 1 else DEFAULT_BIN_NS
    return ArrivalFunction.from_bins(np.rint(counts).astype(np.int64), bw_ns)


# -- manipulation ------------------------------------------------------------

def _interval_bins(a: ArrivalFunction, interval) -> tuple[int, int]:
    lo, hi = (as_fraction(x) for x in interval)
    if lo > hi:
        raise ValueError(f"interval {interval} has start after end")
    if lo < 0 or hi > a.duration:
        raise ValueError(f"interval {interval} outside trace "
                         f"[0, {float(a.duration)}] s")
    bw = a.grid.bin_width_s
    return math.ceil(lo / bw), math.ceil(hi / bw)


def splice(a: ArrivalFunction, remove, source) -> ArrivalFunction:
    """Overwrite the bins of ``remove`` with a copy of the bins of ``source``.

    Intervals are ``(start_s, end_s)``, half-open, and must have equal length.
    """
    r0, r1 = (as_fraction(x) for x in remove)
    s0, s1 = (as_fraction(x) for x in source)
    if r1 - r0 != s1 - s0:
        raise ValueError("remove and source intervals differ in length")
    rb = _interval_bins(a, remove)
    sb = _interval_bins(a, source)
    if rb[1] - rb[0] != sb[1] - sb[0]:
        raise ValueError("intervals cover different numbers of bins; "
                         "align them to the bin width")
    per_bin = a.per_bin.copy()
    per_bin[rb[0]:rb[1]] = a.per_bin[sb[0]:sb[1]]
    return ArrivalFunction(from_increments(a.grid, per_bin))


def splice_records(timestamps, sizes, remove, source) -> tuple[np.ndarray, np.ndarray]:
    """Packet-level splice: drop packets in ``remove``, copy packets of
    ``source`` shifted onto ``remove``."""
    ts = np.asarray(timestamps, dtype=np.int64)
    sz = np.asarray(sizes, dtype=np.int64)
    r0, r1 = (as_fraction(x) * NS_PER_S for x in remove)
    s0, s1 = (as_fraction(x) * NS_PER_S for x in source)
    if r1 - r0 != s1 - s0:
        raise ValueError("remove and source intervals differ in length")
    if min(r0, s0) < 0 or r0 > r1:
        raise ValueError("invalid interval")
    end = int(ts.max()) + 1 if len(ts) else 0
    if max(r1, s1) > end:
        raise ValueError("interval extends past the end of the trace")
    shift = r0 - s0
    if shift.denominator != 1:
        raise ValueError("interval offset must be a whole number of nanoseconds")
    keep = (ts < r0) | (ts >= r1)
    src = (ts >= s0) & (ts < s1)
    out_ts = np.concatenate([ts[keep], ts[src] + int(shift)])
    out_sz = np.concatenate([sz[keep], sz[src]])
    order = np.argsort(out_ts, kind="stable")
    return out_ts[order], out_sz[order]


def rebin(a: ArrivalFunction, bin_width_ns) -> ArrivalFunction:
    """Coarsen ``a`` to a bin width that is an integer multiple of its own."""
    new = as_fraction(bin_width_ns)
    ratio = new / a.grid.bin_width_ns
    if ratio.denominator != 1 or ratio < 1:
        raise ValueError("new bin width must be an integer multiple of the old one")
    ratio = int(ratio)
    if ratio == 1:
        return a
    n = a.bin_count
    count = -(-n // ratio)
    idx = np.minimum(np.arange(count + 1) * ratio, n)
    return ArrivalFunction(Curve(TimeGrid(new, count), a.cumulative.values[idx]))


def extend(a: ArrivalFunction, bin_count: int) -> ArrivalFunction:
    """Pad with empty bins up to ``bin_count``."""
    if bin_count < a.bin_count:
        raise ValueError("cannot shrink an arrival function")
    if bin_count == a.bin_count:
        return a
    vals = np.concatenate([a.cumulative.values,
                           np.full(bin_count - a.bin_count, a.total_bytes, dtype=np.int64)])
    return ArrivalFunction(Curve(a.grid.with_count(bin_count), vals))


def _lcm_fraction(a: Fraction, b: Fraction) -> Fraction:
    return Fraction(math.lcm(a.numerator, b.numerator),
                    math.gcd(a.denominator, b.denominator))


def common_grid(flows: Sequence[ArrivalFunction]) -> list[ArrivalFunction]:
    """Re-bin and pad flows onto one grid (the coarsest common bin width)."""
    if not flows:
        raise ValueError("no flows given")
    bw = flows[0].grid.bin_width_ns
    for f in flows[1:]:
        bw = _lcm_fraction(bw, f.grid.bin_width_ns)
    flows = [rebin(f, bw) for f in flows]
    n = max(f.bin_count for f in flows)
    return [extend(f, n) for f in flows]


def aggregate(flows: Sequence[ArrivalFunction]) -> ArrivalFunction:
    """Sum of arrival functions."""
    if not flows:
        raise ValueError("aggregate needs at least one flow")
    flows = common_grid(flows)
    total = np.zeros_like(flows[0].cumulative.values)
    for f in flows:
        total = total + f.cumulative.values
    return ArrivalFunction(Curve(flows[0].grid, total))
