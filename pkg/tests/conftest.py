from __future__ import annotations

import numpy as np
import pytest

from shadowlab.flow import BlockLinearField, Real1D, Spiral2D

# acceptance lines collected by tests/test_acceptance.py, printed at the end of the run
ACCEPTANCE: dict[int, str] = {}


def random_field(rng: np.random.Generator, max_blocks: int = 3, radius: float = 3.0) -> BlockLinearField:
    """Random block field with spectral radius <= ``radius``."""
    blocks = []
    for _ in range(int(rng.integers(1, max_blocks + 1))):
        if rng.random() < 0.5:
            blocks.append(Real1D(float(rng.uniform(-radius, radius))))
        else:
            r = rng.uniform(0.05, radius)
            th = rng.uniform(0.0, 2 * np.pi)
            b = r * np.sin(th)
            blocks.append(Spiral2D(float(r * np.cos(th)), float(b if abs(b) > 1e-3 else 1e-3)))
    return BlockLinearField(blocks)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[k])
