"""Min-plus algebra on a uniform discrete time grid.

Curves hold byte quantities at the grid points ``t = 0, 1, ..., bin_count``.
Values are integers whenever possible; curves produced from rational rates
fall back to ``Fraction`` entries so no float rounding creeps into the
algebra.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from numbers import Rational
from typing import Sequence, Union

import numpy as np

Number = Union[int, Fraction]

NS_PER_S = 1_000_000_000


class GridMismatchError(ValueError):
    """Raised when curves on different grids are combined."""


def as_fraction(x) -> Fraction:
    """Convert ``x`` to an exact Fraction.

    Floats go through their shortest decimal repr, so ``0.05`` becomes
    ``1/20`` rather than the nearest binary fraction.
    """
    if isinstance(x, Fraction):
        return x
    if isinstance(x, (int, np.integer)):
        return Fraction(int(x))
    if isinstance(x, Rational):
        return Fraction(x.numerator, x.denominator)
    if isinstance(x, (float, np.floating)):
        if not np.isfinite(x):
            raise ValueError(f"non-finite value {x!r}")
        return Fraction(repr(float(x)))
    if isinstance(x, str):
        return Fraction(x.strip())
    raise TypeError(f"cannot convert {type(x).__name__} to Fraction")


@dataclass(frozen=True)
class TimeGrid:
    """``bin_count`` bins of ``bin_width_ns`` nanoseconds each.

    The bin width may be a Fraction of a nanosecond; this lets periodic
    examples such as "three bursts evenly spaced over 10 ms" live on an
    exact grid.
    """

    bin_width_ns: Fraction
    bin_count: int

    def __post_init__(self):
        bw = as_fraction(self.bin_width_ns)
        if bw <= 0:
            raise ValueError("bin_width must be positive")
        if self.bin_count < 0:
            raise ValueError("bin_count must be nonnegative")
        object.__setattr__(self, "bin_width_ns", bw)
        object.__setattr__(self, "bin_count", int(self.bin_count))

    @property
    def bin_width_s(self) -> Fraction:
        return self.bin_width_ns / NS_PER_S

    @property
    def duration_s(self) -> Fraction:
        return self.bin_count * self.bin_width_s

    def times_s(self) -> np.ndarray:
        """Grid point times in seconds (float, for export only)."""
        return np.arange(self.bin_count + 1) * float(self.bin_width_s)

    def compatible(self, other: "TimeGrid") -> bool:
        return self.bin_width_ns == other.bin_width_ns

    def with_count(self, bin_count: int) -> "TimeGrid":
        return TimeGrid(self.bin_width_ns, bin_count)


def _normalize_values(values) -> np.ndarray:
    arr = np.asarray(values)
    if arr.dtype == object:
        if all(isinstance(v, (int, np.integer)) or
               (isinstance(v, Fraction) and v.denominator == 1) for v in arr):
            return np.array([int(v) for v in arr], dtype=np.int64)
        return np.array([as_fraction(v) for v in arr], dtype=object)
    if arr.dtype.kind in "iu":
        return arr.astype(np.int64, copy=False)
    if arr.dtype.kind == "b":
        return arr.astype(np.int64)
    raise TypeError("curve values must be integers or Fractions, got "
                    f"dtype {arr.dtype}")


class Curve:
    """Nonnegative, nondecreasing byte function with ``values[0] == 0``.

    ``values`` has ``grid.bin_count + 1`` entries. Pass ``validate=False``
    for intermediate results (e.g. a general deconvolution) that need not
    satisfy the arrival-curve invariants.
    """

    __slots__ = ("grid", "values")

    def __init__(self, grid: TimeGrid, values, validate: bool = True):
        vals = _normalize_values(values)
        if vals.ndim != 1 or len(vals) != grid.bin_count + 1:
            raise ValueError(f"expected {grid.bin_count + 1} values, "
                             f"got shape {vals.shape}")
        if validate:
            if vals[0] != 0:
                raise ValueError("curve must start at 0")
            if len(vals) > 1 and np.any(vals[1:] < vals[:-1]):
                raise ValueError("curve must be nondecreasing")
        vals.setflags(write=False)
        self.grid = grid
        self.values = vals

    def __len__(self):
        return len(self.values)

    def __getitem__(self, k):
        return self.values[k]

    def __eq__(self, other):
        if not isinstance(other, Curve):
            return NotImplemented
        return (self.grid == other.grid
                and len(self.values) == len(other.values)
                and bool(np.all(self.values == other.values)))

    def __repr__(self):
        head = ", ".join(str(v) for v in self.values[:6])
        more = ", ..." if len(self.values) > 6 else ""
        return f"Curve(bins={self.grid.bin_count}, [{head}{more}])"

    @property
    def is_exact_int(self) -> bool:
        return self.values.dtype != object

    def increments(self) -> np.ndarray:
        """Per-bin quantities ``values[k+1] - values[k]``."""
        return np.diff(self.values)


def _check_grids(f: Curve, g: Curve):
    if not f.grid.compatible(g.grid) or f.grid.bin_count != g.grid.bin_count:
        raise GridMismatchError(
            f"grid mismatch: {f.grid} vs {g.grid}")


def _common_array(f: Curve, g: Curve):
    if f.is_exact_int and g.is_exact_int:
        return f.values, g.values
    return f.values.astype(object), g.values.astype(object)


def minplus_convolve(f: Curve, g: Curve) -> Curve:
    """``(f ⊗ g)(t) = min_{0<=s<=t} f(s) + g(t-s)``."""
    _check_grids(f, g)
    fv, gv = _common_array(f, g)
    n = len(fv)
    out = np.empty(n, dtype=fv.dtype)
    g_rev = gv[::-1]
    for t in range(n):
        # g_rev[n-1-t:] is g(t), g(t-1), ..., g(0)
        out[t] = (fv[:t + 1] + g_rev[n - 1 - t:]).min()
    return Curve(f.grid, out, validate=False)


def minplus_deconvolve(f: Curve, g: Curve) -> Curve:
    """``(f ⊘ g)(t) = max_{s>=0, t+s<=horizon} f(t+s) - g(s)``.

    The maximum is truncated at the last grid point, so ``A ⊘ A`` is the
    envelope of the observed trace only.
    """
    _check_grids(f, g)
    fv, gv = _common_array(f, g)
    n = len(fv)
    out = np.empty(n, dtype=fv.dtype)
    for t in range(n):
        out[t] = (fv[t:] - gv[:n - t]).max()
    return Curve(f.grid, out, validate=False)


def rate_curve(rate, grid: TimeGrid) -> Curve:
    """Exact service curve ``S(t) = r t`` of a work-conserving link.

    ``rate`` is in bytes per second.
    """
    r = as_fraction(rate)
    if r <= 0:
        raise ValueError("rate must be positive")
    per_bin = r * grid.bin_width_s
    k = np.arange(grid.bin_count + 1)
    if per_bin.denominator == 1:
        return Curve(grid, k * int(per_bin))
    return Curve(grid, np.array([per_bin * int(i) for i in k], dtype=object))


def from_increments(grid: TimeGrid, per_bin: Sequence[Number]) -> Curve:
    """Build a cumulative curve from per-bin byte counts."""
    arr = _normalize_values(np.asarray(per_bin))
    if len(arr) != grid.bin_count:
        raise ValueError("need one increment per bin")
    if len(arr) and np.any(arr < 0):
        raise ValueError("per-bin quantities must be nonnegative")
    cum = np.zeros(len(arr) + 1, dtype=arr.dtype)
    if arr.dtype == object:
        cum[:] = Fraction(0)
    np.cumsum(arr, out=cum[1:])
    return Curve(grid, cum)


def write_curve_csv(curve: Curve, path, value_header: str = "bytes") -> None:
    from .csvio import format_number
    times = curve.grid.times_s()
    with open(path, "w", newline="") as fh:
        fh.write(f"tau_seconds,{value_header}\n")
        for t, v in zip(times, curve.values):
            fh.write(f"{t:.9f},{format_number(v)}\n")
