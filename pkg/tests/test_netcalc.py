from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from burstlab.netcalc import (Curve, GridMismatchError, TimeGrid, as_fraction,
                              from_increments, minplus_convolve, minplus_deconvolve,
                              rate_curve, write_curve_csv)


def conv_oracle(f, g):
    n = len(f)
    return [min(f[s] + g[t - s] for s in range(t + 1)) for t in range(n)]


def deconv_oracle(f, g):
    n = len(f)
    return [max(f[t + s] - g[s] for s in range(n - t)) for t in range(n)]


increments = st.lists(st.integers(0, 50), min_size=1, max_size=25)


def curve_of(inc):
    return from_increments(TimeGrid(Fraction(1000), len(inc)), inc)


@given(increments, st.data())
@settings(max_examples=150, deadline=None)
def test_convolution_matches_brute_force(inc, data):
    other = data.draw(st.lists(st.integers(0, 50), min_size=len(inc), max_size=len(inc)))
    f, g = curve_of(inc), curve_of(other)
    assert minplus_convolve(f, g).values.tolist() == conv_oracle(f.values, g.values)
    assert minplus_deconvolve(f, g).values.tolist() == deconv_oracle(f.values, g.values)


@given(st.lists(st.tuples(st.integers(0, 40), st.integers(0, 40), st.integers(0, 40)),
                min_size=1, max_size=20))
@settings(max_examples=100, deadline=None)
def test_convolution_commutative_and_associative(triples):
    f, g, h = (curve_of([t[i] for t in triples]) for i in range(3))
    assert minplus_convolve(f, g) == minplus_convolve(g, f)
    assert minplus_convolve(minplus_convolve(f, g), h) == \
        minplus_convolve(f, minplus_convolve(g, h))


def test_self_deconvolution_is_envelope():
    f = curve_of([0, 5, 0, 0, 7, 1])
    env = minplus_deconvolve(f, f)
    assert env.values.tolist() == [0, 7, 8, 8, 12, 13, 13]


def test_rate_curve_exact():
    grid = TimeGrid(Fraction(10_000, 3), 6)
    c = rate_curve(37_500_000, grid)          # 125 bytes per bin
    assert c.is_exact_int and c.values.tolist() == [125 * k for k in range(7)]
    frac = rate_curve(1000, TimeGrid(Fraction(1000), 3))   # 1/1000 byte per bin
    assert frac.values.tolist() == [Fraction(k, 1000) for k in range(4)]
    with pytest.raises(ValueError):
        rate_curve(0, grid)


def test_convolution_with_zero_and_fast_link():
    grid = TimeGrid(Fraction(1000), 4)
    f = curve_of([3, 1, 4, 1])
    zero = Curve(grid, [0] * 5)
    assert minplus_convolve(f, zero).values.tolist() == [0] * 5
    # a rate curve faster than f leaves min(f, r t) = convolution
    r = rate_curve(10 ** 12, grid)
    assert minplus_convolve(f, r) == f


def test_curve_invariants():
    grid = TimeGrid(Fraction(1000), 2)
    with pytest.raises(ValueError):
        Curve(grid, [1, 2, 3])
    with pytest.raises(ValueError):
        Curve(grid, [0, 2, 1])
    with pytest.raises(ValueError):
        Curve(grid, [0, 1])
    with pytest.raises(ValueError):
        from_increments(grid, [1, -1])


def test_grid_mismatch():
    f = curve_of([1, 2])
    g = from_increments(TimeGrid(Fraction(500), 2), [1, 2])
    with pytest.raises(GridMismatchError):
        minplus_convolve(f, g)


def test_as_fraction_uses_decimal_repr():
    assert as_fraction(0.05) == Fraction(1, 20)
    assert as_fraction("1e-6") == Fraction(1, 10 ** 6)
    assert as_fraction(np.int64(7)) == 7
    with pytest.raises(ValueError):
        as_fraction(float("nan"))


def test_write_curve_csv(tmp_path):
    p = tmp_path / "c.csv"
    write_curve_csv(curve_of([2, 3]), p)
    assert p.read_text().splitlines() == [
        "tau_seconds,bytes", "0.000000000,0", "0.000001000,2", "0.000002000,5"]
