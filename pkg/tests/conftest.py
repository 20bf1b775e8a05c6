import numpy as np
import pytest

from fcir.fbm import FbmPath, TimeGrid, sample_paths
from fcir.rng import derive_seed


def draw_many(
    grid: TimeGrid, h: float, n: int, method: str, master: int, chunk: int = 1000, columns=None
):
    """``n`` independent driver paths as rows; ``columns`` keeps only those grid indices."""
    parts = []
    for start in range(0, n, chunk):
        seeds = [derive_seed(master, i) for i in range(start, min(n, start + chunk))]
        w, used = sample_paths(grid, h, seeds, method)
        assert used == method
        parts.append(w if columns is None else w[:, columns])
    return np.concatenate(parts)


def moment_with_se(a: np.ndarray, b: np.ndarray) -> tuple[float, float]:
    """Mean of ``a * b`` (a zero-mean covariance estimate) and its standard error."""
    prod = a * b
    return float(prod.mean()), float(prod.std(ddof=1) / np.sqrt(prod.size))


def zero_driver(grid: TimeGrid, h: float = 0.7) -> FbmPath:
    return FbmPath(grid, np.zeros(grid.n_steps + 1), h, seed=0)


def driver_from(values, dt: float, h: float = 0.7) -> FbmPath:
    values = np.asarray(values, dtype=float)
    return FbmPath(TimeGrid(values.size - 1, dt), values, h, seed=0)


@pytest.fixture
def unit_grid():
    return TimeGrid(1000, 0.001)
