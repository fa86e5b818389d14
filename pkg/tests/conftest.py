import numpy as np
import pytest

from natex.dataset import FullDataset


def random_full(n, d=2, seed=0, p_low=0.1, p_high=0.9):
    """Small instance with arbitrary outcomes and propensities."""
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n, d))
    p = rng.uniform(p_low, p_high, size=n)
    y0 = rng.normal(size=n)
    y1 = y0 + rng.normal(0.5, 1.0, size=n)
    return FullDataset(X, y1, y0, p)


@pytest.fixture
def small_full():
    return random_full(8, d=2, seed=11)


def pytest_configure(config):
    config.acceptance_lines = []


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = getattr(config, "acceptance_lines", [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
