import numpy as np
import pytest

from burstlab.trace import ArrivalFunction

ACCEPTANCE_LINES: list[str] = []


def random_arrival(rng, n_bins, bin_width_ns=1000, density=0.3, max_bytes=9000):
    """Sparse, bursty per-bin byte counts."""
    mask = rng.random(n_bins) < density
    per_bin = np.where(mask, rng.integers(1, max_bytes, n_bins), 0)
    if per_bin.sum() == 0:
        per_bin[rng.integers(n_bins)] = 1500
    return ArrivalFunction.from_bins(per_bin, bin_width_ns)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
