from __future__ import annotations

import numpy as np
import pytest

from cellwatch.data import Dataset
from cellwatch.simulator.generate import generate_group

DAY = 86400


def make_dataset(k: int = 5, n: int = 3, seed: int = 0, t0: float = 0.0, dt: float = 1.0, **changes) -> Dataset:
    rng = np.random.default_rng(seed)
    fields = dict(
        t=t0 + dt * np.arange(k),
        current=rng.normal(0, 50, k),
        ambient=22 + rng.normal(0, 0.1, k),
        fan=np.ones(k, dtype=int),
        balancing=np.zeros(k, dtype=int),
        voltages=3.8 + rng.normal(0, 0.01, (k, n)),
        temperatures=25 + rng.normal(0, 0.1, (k, n)),
        sample_interval=dt,
    )
    fields.update(changes)
    return Dataset(**fields)


@pytest.fixture(scope="session")
def two_day_group():
    """Two simulated days of the default 11-cell group (seed 0)."""
    return generate_group(duration=2 * DAY, seed=0)


@pytest.fixture(scope="session")
def train_day(two_day_group):
    return two_day_group.dataset.slice(0, DAY)


@pytest.fixture(scope="session")
def test_day(two_day_group):
    return two_day_group.dataset.slice(DAY)
