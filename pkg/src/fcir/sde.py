"""Pathwise solvers for ``dZ = f(t, Z) / (2 Z) dt + (sigma / 2) dW^H``.

The squared process ``X = Z^2 1_[0, tau)`` is stored alongside ``Z``. Both
solvers take the driving fBm path as input, so they are deterministic
functions of their arguments.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import csvio
from .drift import DriftSpec
from .fbm import FbmPath, TimeGrid

__all__ = [
    "SdePath",
    "PicardResult",
    "PicardConvergenceError",
    "euler_maruyama",
    "euler_batch",
    "picard_solve",
    "square_process",
    "hitting_time",
    "write_path_csv",
]


class PicardConvergenceError(RuntimeError):
    def __init__(self, iterations: int, last_delta: float):
        super().__init__(
            f"Picard iteration did not converge after {iterations} iterations "
            f"(last sup-distance {last_delta:.3e}); try a coarser tolerance, "
            f"a larger stop level or a shorter horizon"
        )
        self.iterations = iterations
        self.last_delta = last_delta


def _readonly(a) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class SdePath:
    """A solved trajectory. ``hit_index`` is the first grid index with
    ``z <= 0``; from there on ``z`` and ``x`` are zero."""

    grid: TimeGrid
    z: np.ndarray
    x: np.ndarray
    hit_index: int | None
    driver: FbmPath | None
    sigma: float
    z0: float

    def __post_init__(self):
        object.__setattr__(self, "z", _readonly(self.z))
        object.__setattr__(self, "x", _readonly(self.x))
        n = self.grid.n_steps + 1
        if self.z.shape != (n,) or self.x.shape != (n,):
            raise ValueError(f"z and x must have {n} entries")
        if self.z[0] != self.z0:
            raise ValueError("z[0] must equal z0")
        k = self.alive_until
        if not (0 < k <= n):
            raise ValueError(f"hit_index must lie in 1..{n - 1}, got {self.hit_index}")
        if np.any(self.x[:k] != self.z[:k] * self.z[:k]):
            raise ValueError("x must equal z**2 before absorption")
        if np.any(self.z[k:] != 0) or np.any(self.x[k:] != 0):
            raise ValueError("z and x must be 0 from hit_index on")

    @property
    def times(self) -> np.ndarray:
        return self.grid.times

    @property
    def alive_until(self) -> int:
        """Number of leading grid points before absorption."""
        return self.grid.n_steps + 1 if self.hit_index is None else self.hit_index


@dataclass(frozen=True)
class PicardResult:
    path: SdePath
    iterations: int
    final_delta: float
    stop_level: float
    stop_index: int | None  # first index frozen at stop_level


def _check_common(sigma: float, z0: float) -> None:
    if not (sigma > 0 and math.isfinite(sigma)):
        raise ValueError(f"sigma must be positive, got {sigma}")
    if not (z0 > 0 and math.isfinite(z0)):
        raise ValueError(f"z0 must be positive, got {z0}")


def _square(z: np.ndarray) -> np.ndarray:
    return z * z


def euler_batch(
    f, sigma: float, z0: float, dt: float, w: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Euler-Maruyama with absorption for many drivers at once.

    Parameters
    ----------
    f : callable
        Drift ``f(t, z)`` evaluated with scalar ``t`` and an array ``z``.
    w : ndarray, shape (M, N + 1)
        Driver paths, one per row.

    Returns
    -------
    z : ndarray, shape (M, N + 1)
    hit : ndarray of int, shape (M,)
        First absorbed index per row, ``-1`` if the row never hits zero.

    Each row depends only on its own driver: the arithmetic is elementwise,
    so a row gives bit-identical output whatever else is in the batch.
    """
    w = np.atleast_2d(np.asarray(w, dtype=float))
    m, n1 = w.shape
    dw = np.ascontiguousarray(np.diff(w, axis=1).T)
    zt = np.empty((n1, m))
    zt[0] = z0
    hit = np.full(m, -1, dtype=np.int64)
    alive = np.ones(m, dtype=bool)
    half_sigma = sigma / 2.0
    cur = zt[0].copy()
    for i in range(1, n1):
        t = (i - 1) * dt
        # absorbed entries are parked at 1.0 so f/(2z) stays finite
        safe = np.where(alive, cur, 1.0)
        nxt = safe + f(t, safe) / (2.0 * safe) * dt + half_sigma * dw[i - 1]
        newly = alive & ~(nxt > 0.0)
        if newly.any():
            hit[newly] = i
            alive &= ~newly
        cur = np.where(alive, nxt, 0.0)
        zt[i] = cur
    return zt.T.copy(), hit


def euler_maruyama(spec: DriftSpec, sigma: float, z0: float, driver: FbmPath) -> SdePath:
    """Explicit Euler scheme on the driver's grid.

    ``z[n] = z[n-1] + f(t_{n-1}, z[n-1]) / (2 z[n-1]) dt + (sigma/2) dW[n]``
    while ``z[n-1] > 0``. The first non-positive update is set to exactly 0
    and the path stays there.
    """
    _check_common(sigma, z0)
    z, hit = euler_batch(spec.f, sigma, z0, driver.grid.dt, driver.values[None, :])
    return _make_path(driver.grid, z[0], int(hit[0]), driver, sigma, z0)


def _make_path(grid, z, hit, driver, sigma, z0) -> SdePath:
    hit_index = None if hit < 0 else hit
    return SdePath(grid, z, _square(z), hit_index, driver, sigma, z0)


def _freeze_below(z: np.ndarray, level: float) -> int | None:
    below = np.flatnonzero(z <= level)
    if below.size == 0:
        return None
    k = int(below[0])
    z[k:] = level
    return k


def picard_solve(
    spec: DriftSpec,
    sigma: float,
    z0: float,
    driver: FbmPath,
    level: float | None = None,
    tol: float = 1e-8,
    max_iter: int = 200,
) -> PicardResult:
    """Fixed-point iteration ``Z <- z0 + int_0^t g(s, Z) ds + (sigma/2) W``.

    The integral is the cumulative trapezoid rule on the grid and every
    iterate is frozen at ``level`` from its first grid index at or below
    ``level``. Iteration stops once successive iterates are within ``tol``
    in sup-norm. ``level`` defaults to ``0.1 * z0``.

    Raises
    ------
    PicardConvergenceError
        After ``max_iter`` iterations without reaching ``tol``.
    """
    _check_common(sigma, z0)
    if level is None:
        level = 0.1 * z0
    if not (0 < level < z0):
        raise ValueError(f"stop level must satisfy 0 < level < z0={z0}, got {level}")
    if not tol > 0:
        raise ValueError(f"tol must be positive, got {tol}")

    grid = driver.grid
    t = grid.times
    base = z0 + (sigma / 2.0) * driver.values
    half_dt = grid.dt / 2.0
    z = np.full(grid.n_steps + 1, float(z0))
    delta = math.inf
    for iteration in range(1, max_iter + 1):
        g = spec.f(t, z) / (2.0 * z)
        integral = np.zeros_like(z)
        np.cumsum(half_dt * (g[1:] + g[:-1]), out=integral[1:])
        new = base + integral
        new[0] = z0
        stop = _freeze_below(new, level)
        delta = float(np.max(np.abs(new - z)))
        z = new
        if delta < tol:
            path = SdePath(grid, z, _square(z), None, driver, sigma, z0)
            return PicardResult(path, iteration, delta, level, stop)
    raise PicardConvergenceError(max_iter, delta)


def square_process(path: SdePath) -> np.ndarray:
    """``X = Z^2`` before absorption and 0 from the hitting index on."""
    return path.x


def hitting_time(path: SdePath) -> float | None:
    """Grid time ``t_{hit_index}`` of absorption, ``None`` if never absorbed."""
    if path.hit_index is None:
        return None
    return path.hit_index * path.grid.dt


def write_path_csv(path: SdePath, dest: str | Path) -> Path:
    return csvio.write_columns(dest, ["t", "z", "x"], [path.times, path.z, path.x])
