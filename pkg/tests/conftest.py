from __future__ import annotations

import numpy as np
import pytest

from mprlnav.gridmap import OccupancyGrid


def open_grid(n: int = 64, cell_size: float = 3.125) -> OccupancyGrid:
    return OccupancyGrid(np.ones((n, n), dtype=np.uint8), cell_size)


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(12345)
