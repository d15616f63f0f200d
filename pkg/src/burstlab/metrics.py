"""Burstiness metrics of arrival functions.

All byte quantities are exact: envelopes are integer, backlogs behind a
rational drain rate are kept as integer numerators over a common
denominator, and maxima come back as ``Fraction``.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from fractions import Fraction
from typing import Sequence

import numpy as np

from .csvio import write_rows
from .netcalc import Curve, TimeGrid, as_fraction
from .trace import ArrivalFunction, aggregate, common_grid

DENSE_LAG_LIMIT_S = Fraction(1, 100)
LOG_POINTS_PER_DECADE = 32


# -- lag sets ----------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class LagSet:
    """Strictly increasing lags, in bins."""

    lags: np.ndarray

    def __post_init__(self):
        lags = np.asarray(self.lags, dtype=np.int64)
        if lags.ndim != 1:
            raise ValueError("lags must be one-dimensional")
        if len(lags) and (lags[0] < 0 or np.any(np.diff(lags) <= 0)):
            raise ValueError("lags must be nonnegative and strictly increasing")
        lags.setflags(write=False)
        object.__setattr__(self, "lags", lags)

    def __len__(self):
        return len(self.lags)

    def __iter__(self):
        return iter(self.lags.tolist())

    @classmethod
    def full(cls, bin_count: int) -> "LagSet":
        return cls(np.arange(bin_count + 1))

    @classmethod
    def default(cls, grid: TimeGrid) -> "LagSet":
        """Every bin up to 10 ms, then 32 log-spaced lags per decade."""
        n = grid.bin_count
        dense = min(n, int(DENSE_LAG_LIMIT_S / grid.bin_width_s))
        lags = [np.arange(dense + 1)]
        if dense < n:
            lo = np.log10(max(dense, 1))
            hi = np.log10(n)
            count = max(2, int(np.ceil((hi - lo) * LOG_POINTS_PER_DECADE)) + 1)
            lags.append(np.rint(np.logspace(lo, hi, count)).astype(np.int64))
            lags.append(np.array([n]))
        merged = np.unique(np.concatenate(lags))
        return cls(merged[merged <= n])

    @classmethod
    def from_seconds(cls, taus, grid: TimeGrid) -> "LagSet":
        bw = grid.bin_width_s
        lags = sorted({round(as_fraction(t) / bw) for t in taus})
        return cls(np.array(lags, dtype=np.int64))

    def check(self, bin_count: int) -> None:
        if len(self.lags) and self.lags[-1] > bin_count:
            raise ValueError(f"lag {int(self.lags[-1])} exceeds trace length "
                             f"{bin_count} bins")


def _resolve_lags(a: ArrivalFunction, lags) -> LagSet:
    if lags is None:
        lags = LagSet.default(a.grid)
    elif isinstance(lags, str):
        if lags == "full":
            lags = LagSet.full(a.bin_count)
        elif lags == "default":
            lags = LagSet.default(a.grid)
        else:
            raise ValueError(f"unknown lag set {lags!r}")
    elif not isinstance(lags, LagSet):
        lags = LagSet(lags)
    lags.check(a.bin_count)
    return lags


# -- result containers -------------------------------------------------------

@dataclass(frozen=True, eq=False)
class LagSeries:
    """Values indexed by lag (in bins) on a grid."""

    grid: TimeGrid
    lags: np.ndarray
    values: np.ndarray

    def __len__(self):
        return len(self.lags)

    @property
    def tau_seconds(self) -> np.ndarray:
        return self.lags * float(self.grid.bin_width_s)

    def at_lag(self, k: int):
        i = np.searchsorted(self.lags, k)
        if i >= len(self.lags) or self.lags[i] != k:
            raise KeyError(f"lag {k} not in series")
        return self.values[i]

    def at(self, tau_s):
        return self.at_lag(round(as_fraction(tau_s) / self.grid.bin_width_s))

    def argmax(self) -> int:
        """Lag of the maximum; ties go to the smallest lag."""
        best = max(self.values)
        for k, v in zip(self.lags.tolist(), self.values):
            if v == best:
                return k
        raise ValueError("empty series")

    def write_csv(self, path, value_header: str) -> None:
        write_rows(path, ["tau_seconds", value_header],
                   ((f"{t:.9f}", v) for t, v in zip(self.tau_seconds, self.values)))


class BurstinessCurve(LagSeries):
    """Empirical envelope ``E(tau) = max_t A(t+tau) - A(t)`` over a lag set."""

    @property
    def is_full(self) -> bool:
        return (len(self.lags) == self.grid.bin_count + 1
                and bool(np.all(self.lags == np.arange(self.grid.bin_count + 1))))

    def as_curve(self) -> Curve:
        if not self.is_full:
            raise ValueError("envelope restricted to a lag subset")
        return Curve(self.grid, self.values)

    def write_csv(self, path, value_header: str = "bytes") -> None:
        super().write_csv(path, value_header)


@dataclass(frozen=True, eq=False)
class Backlog:
    """Backlog at bin boundaries, stored as ``numerators / denominator``."""

    grid: TimeGrid
    numerators: np.ndarray
    denominator: int

    def __len__(self):
        return len(self.numerators)

    def __getitem__(self, k) -> Fraction:
        return Fraction(int(self.numerators[k]), self.denominator)

    def max(self) -> Fraction:
        return Fraction(int(self.numerators.max()), self.denominator)

    def argmax(self) -> int:
        return int(np.argmax(self.numerators))

    def to_float(self) -> np.ndarray:
        return np.array([float(self[k]) for k in range(len(self))]) \
            if self.numerators.dtype == object \
            else self.numerators / self.denominator

    def as_fractions(self) -> list[Fraction]:
        return [self[k] for k in range(len(self))]


# -- envelope ----------------------------------------------------------------

def burstiness_curve(a: ArrivalFunction, lags=None) -> BurstinessCurve:
    """Maximum bytes in any window of each lag length (prefix-sum scan)."""
    lags = _resolve_lags(a, lags)
    cum = a.cumulative.values
    n = a.bin_count
    out = np.empty(len(lags), dtype=np.int64)
    for i, k in enumerate(lags.lags.tolist()):
        out[i] = (cum[k:] - cum[:n + 1 - k]).max()
    return BurstinessCurve(a.grid, lags.lags, out)


def worst_window(a: ArrivalFunction, lag: int) -> int:
    """Start bin of the earliest window of ``lag`` bins holding the most bytes."""
    cum = a.cumulative.values
    n = a.bin_count
    if not 0 <= lag <= n:
        raise ValueError("lag outside trace")
    return int(np.argmax(cum[lag:] - cum[:n + 1 - lag]))


def peak_to_mean(e: BurstinessCurve, mean_rate) -> LagSeries:
    """``E(tau) / (mean_rate * tau)`` for every lag of at least one bin."""
    lam = as_fraction(mean_rate)
    if lam <= 0:
        raise ValueError("empty trace")
    bw = e.grid.bin_width_s
    keep = e.lags >= 1
    lags = e.lags[keep]
    vals = np.array([float(Fraction(int(v)) / (lam * bw * int(k)))
                     for k, v in zip(lags.tolist(), e.values[keep].tolist())])
    return LagSeries(e.grid, lags, vals)


# -- backlog -----------------------------------------------------------------

_INT64_SAFE = 2 ** 62


def _drain_per_bin(rate, grid: TimeGrid) -> Fraction:
    r = as_fraction(rate)
    if r <= 0:
        raise ValueError("rate must be positive")
    return r * grid.bin_width_s


def backlog_series(a: ArrivalFunction, rate) -> Backlog:
    """Backlog behind a work-conserving server of ``rate`` bytes/s.

    Lindley recursion ``B[k+1] = max(B[k] + a[k] - r*bin, 0)`` evaluated in
    closed form ``B[k] = W[k] - min_{j<=k} W[j]`` with ``W[k] = A[k] - r*k*bin``,
    scaled by the drain denominator so everything stays integer.
    """
    d = _drain_per_bin(rate, a.grid)
    p, q = d.numerator, d.denominator
    cum = a.cumulative.values
    n = a.bin_count
    if max(q * a.total_bytes, p * n) < _INT64_SAFE:
        w = q * cum - p * np.arange(n + 1, dtype=np.int64)
    else:
        w = (np.array([int(v) for v in cum], dtype=object) * q
             - np.arange(n + 1).astype(object) * p)
    b = w - np.minimum.accumulate(w)
    return Backlog(a.grid, b, q)


def max_backlog(a: ArrivalFunction, rate) -> Fraction:
    return backlog_series(a, rate).max()


def max_backlog_from_envelope(e: BurstinessCurve, rate) -> Fraction:
    """``max(0, max_tau E(tau) - r tau)`` over the envelope's lags.

    Equals :func:`max_backlog` for a full lag set and is a lower bound
    otherwise.
    """
    d = _drain_per_bin(rate, e.grid)
    p, q = d.numerator, d.denominator
    best = max(q * int(v) - p * int(k) for k, v in zip(e.lags, e.values))
    return max(Fraction(best, q), Fraction(0))


def interval_bmax(e: BurstinessCurve, rate) -> LagSeries:
    """``max(E(tau) - r tau, 0)`` per lag."""
    d = _drain_per_bin(rate, e.grid)
    vals = np.array([max(Fraction(int(v)) - d * int(k), Fraction(0))
                     for k, v in zip(e.lags.tolist(), e.values.tolist())],
                    dtype=object)
    return LagSeries(e.grid, e.lags, vals)


@dataclass(frozen=True)
class SweepPoint:
    inv_utilization: Fraction
    rate: Fraction          # bytes/s
    bmax: Fraction          # bytes


@dataclass(frozen=True)
class BmaxSweep:
    points: tuple[SweepPoint, ...]

    def __len__(self):
        return len(self.points)

    def by_rate(self) -> list[SweepPoint]:
        return sorted(self.points, key=lambda p: p.rate)

    def is_nonincreasing(self) -> bool:
        pts = self.by_rate()
        return all(b.bmax <= a.bmax for a, b in zip(pts, pts[1:]))

    def convexity_violations(self) -> list[tuple[SweepPoint, SweepPoint, SweepPoint]]:
        """Triples ``r1 < r2 < r3`` where ``bmax(r2)`` lies above the chord."""
        bad = []
        for p1, p2, p3 in itertools.combinations(self.by_rate(), 3):
            if not p1.rate < p2.rate < p3.rate:
                continue
            w = (p3.rate - p2.rate) / (p3.rate - p1.rate)
            if p2.bmax > w * p1.bmax + (1 - w) * p3.bmax:
                bad.append((p1, p2, p3))
        return bad

    def is_convex(self) -> bool:
        return not self.convexity_violations()

    def at_utilization(self, u) -> Fraction:
        inv = 1 / as_fraction(u)
        for p in self.points:
            if p.inv_utilization == inv:
                return p.bmax
        raise KeyError(f"utilization {u} not in sweep")

    def write_csv(self, path) -> None:
        write_rows(path, ["inv_utilization", "rate_bps", "bmax_bytes"],
                   ((p.inv_utilization, 8 * p.rate, p.bmax) for p in self.points))


DEFAULT_UTILIZATIONS = tuple(Fraction(1, k) for k in range(20, 0, -1))


def bmax_sweep(a: ArrivalFunction, utilizations=DEFAULT_UTILIZATIONS) -> BmaxSweep:
    """Maximum backlog at available rate ``mean_rate / U`` for each ``U``."""
    lam = a.mean_rate
    if lam <= 0:
        raise ValueError("empty trace")
    pts = []
    for u in utilizations:
        u = as_fraction(u)
        if not 0 < u <= 1:
            raise ValueError(f"utilization {u} outside (0, 1]")
        r = lam / u
        pts.append(SweepPoint(1 / u, r, max_backlog(a, r)))
    return BmaxSweep(tuple(pts))


# -- burstiness potential -----------------------------------------------------

@dataclass(frozen=True)
class Potential:
    sum_env: BurstinessCurve     # worst-case alignment: sum of per-flow envelopes
    agg_env: BurstinessCurve     # envelope of the observed aggregate
    potential: BurstinessCurve   # sum_env - agg_env, nonnegative


def burstiness_potential(flows: Sequence[ArrivalFunction], lags=None) -> Potential:
    if len(flows) < 2:
        raise ValueError("burstiness potential needs at least two flows")
    flows = common_grid(flows)
    agg = aggregate(flows)
    lags = _resolve_lags(agg, lags)
    envs = [burstiness_curve(f, lags) for f in flows]
    sum_vals = np.sum([e.values for e in envs], axis=0)
    agg_env = burstiness_curve(agg, lags)
    grid = agg.grid
    return Potential(BurstinessCurve(grid, lags.lags, sum_vals),
                     agg_env,
                     BurstinessCurve(grid, lags.lags, sum_vals - agg_env.values))


__all__ = [
    "LagSet", "LagSeries", "BurstinessCurve", "Backlog", "BmaxSweep",
    "SweepPoint", "Potential", "burstiness_curve", "worst_window",
    "peak_to_mean", "backlog_series", "max_backlog",
    "max_backlog_from_envelope", "interval_bmax", "bmax_sweep",
    "burstiness_potential", "DEFAULT_UTILIZATIONS",
]
