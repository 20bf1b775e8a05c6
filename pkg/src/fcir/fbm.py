"""Fractional Brownian motion on uniform grids.

Two exact samplers of the same Gaussian law are provided:

* :func:`generate_cholesky` factors the covariance of ``(W_{t_1}, ..., W_{t_N})``.
  O(N^3) setup, used as the reference sampler (N up to a few thousand).
* :func:`generate_circulant` embeds the covariance of the increments
  (fractional Gaussian noise) in a circulant matrix of size 2N and samples
  with the FFT (Davies-Harte). O(N log N) per path.

The two samplers own independent seed-to-path maps: the same seed gives two
different realisations of the same law.
"""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from . import csvio
from .rng import standard_normals

__all__ = [
    "TimeGrid",
    "FbmPath",
    "HolderReport",
    "FactorizationError",
    "check_hurst",
    "fbm_covariance",
    "generate_cholesky",
    "generate_circulant",
    "circulant_embeddable",
    "fgn_autocovariance",
    "generate",
    "sample_paths",
    "increments",
    "empirical_holder_check",
    "write_path_csv",
]

EIGEN_TOLERANCE = 1e-10
HOLDER_MAX_POINTS = 8192
METHODS = ("cholesky", "circulant")


class FactorizationError(ArithmeticError):
    """The fBm covariance matrix could not be Cholesky-factored."""


def check_hurst(h: float) -> float:
    h = float(h)
    if not (0.0 < h < 1.0):
        raise ValueError(f"Hurst parameter must lie in the open interval (0, 1), got {h}")
    return h


@dataclass(frozen=True)
class TimeGrid:
    """Uniform grid ``t_i = i * dt`` for ``i = 0..n_steps``."""

    n_steps: int
    dt: float

    def __post_init__(self):
        if int(self.n_steps) != self.n_steps or self.n_steps < 1:
            raise ValueError(f"n_steps must be a positive integer, got {self.n_steps}")
        if not (self.dt > 0.0 and math.isfinite(self.dt)):
            raise ValueError(f"dt must be positive and finite, got {self.dt}")
        object.__setattr__(self, "n_steps", int(self.n_steps))
        object.__setattr__(self, "dt", float(self.dt))

    @classmethod
    def from_horizon(cls, horizon: float, dt: float) -> "TimeGrid":
        """Grid on ``[0, horizon]``; ``horizon / dt`` must be (close to) an integer."""
        if horizon <= 0:
            raise ValueError(f"horizon must be positive, got {horizon}")
        n = round(horizon / dt)
        if n < 1 or abs(n * dt - horizon) > 1e-9 * horizon:
            raise ValueError(f"horizon {horizon} is not a whole number of steps of {dt}")
        return cls(n, dt)

    @property
    def horizon(self) -> float:
        return self.n_steps * self.dt

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.n_steps + 1) * self.dt

    def subsample(self, factor: int) -> "TimeGrid":
        if self.n_steps % factor:
            raise ValueError(f"{self.n_steps} steps are not divisible by {factor}")
        return TimeGrid(self.n_steps // factor, self.dt * factor)


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class FbmPath:
    grid: TimeGrid
    values: np.ndarray
    hurst: float
    seed: int
    method: str = "circulant"
    fallback: bool = False  # circulant sampler fell back to Cholesky

    def __post_init__(self):
        values = _frozen(self.values)
        if values.shape != (self.grid.n_steps + 1,):
            raise ValueError(f"expected {self.grid.n_steps + 1} values, got shape {values.shape}")
        if values[0] != 0.0:
            raise ValueError("fBm paths start at 0")
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "hurst", check_hurst(self.hurst))

    @property
    def times(self) -> np.ndarray:
        return self.grid.times

    def subsample(self, factor: int) -> "FbmPath":
        """The same realisation observed on a grid ``factor`` times coarser."""
        return FbmPath(
            self.grid.subsample(factor),
            self.values[::factor],
            self.hurst,
            self.seed,
            self.method,
            self.fallback,
        )


@dataclass(frozen=True)
class HolderReport:
    alpha: float
    max_ratio: float
    worst_pair: tuple[float, float]
    stride: int = 1


def fbm_covariance(s, t, h: float):
    """``Cov(W_s, W_t) = (s^{2H} + t^{2H} - |t - s|^{2H}) / 2``; broadcasts."""
    h = check_hurst(h)
    s = np.asarray(s, dtype=float)
    t = np.asarray(t, dtype=float)
    if np.any(s < 0) or np.any(t < 0):
        raise ValueError("fBm covariance is defined for non-negative times only")
    two_h = 2.0 * h
    out = 0.5 * (s**two_h + t**two_h - np.abs(t - s) ** two_h)
    return float(out) if out.ndim == 0 else out


# ---------------------------------------------------------------------------
# Cholesky sampler
# ---------------------------------------------------------------------------


@functools.lru_cache(maxsize=4)
def _cholesky_factor(n_steps: int, dt: float, h: float) -> np.ndarray:
    t = np.arange(1, n_steps + 1) * dt
    cov = fbm_covariance(t[:, None], t[None, :], h)
    try:
        factor = np.linalg.cholesky(cov)
    except np.linalg.LinAlgError as exc:
        raise FactorizationError(
            f"fBm covariance is numerically not positive definite "
            f"(n_steps={n_steps}, dt={dt}, H={h})"
        ) from exc
    factor.setflags(write=False)
    return factor


def _cholesky_paths(grid: TimeGrid, h: float, seeds: Sequence[int]) -> np.ndarray:
    factor = _cholesky_factor(grid.n_steps, grid.dt, h)
    out = np.zeros((len(seeds), grid.n_steps + 1))
    for row, seed in enumerate(seeds):
        out[row, 1:] = factor @ standard_normals(seed, grid.n_steps)
    return out


def generate_cholesky(grid: TimeGrid, h: float, seed: int) -> FbmPath:
    """Exact fBm sample by Cholesky factorisation of the full covariance.

    Raises
    ------
    FactorizationError
        If the covariance matrix is numerically not positive definite.
        The matrix is never jittered.
    """
    h = check_hurst(h)
    values = _cholesky_paths(grid, h, [seed])[0]
    return FbmPath(grid, values, h, seed, method="cholesky")


# ---------------------------------------------------------------------------
# Circulant embedding sampler
# ---------------------------------------------------------------------------


def fgn_autocovariance(n: int, dt: float, h: float) -> np.ndarray:
    """Autocovariance of increments over lags ``0..n``."""
    k = np.arange(n + 1, dtype=float)
    two_h = 2.0 * h
    return 0.5 * dt**two_h * ((k + 1.0) ** two_h - 2.0 * k**two_h + np.abs(k - 1.0) ** two_h)


@functools.lru_cache(maxsize=16)
def _circulant_scale(n_steps: int, dt: float, h: float) -> np.ndarray | None:
    """``sqrt(eigenvalues / m)`` of the size-``m = 2N`` embedding, or ``None``
    when an eigenvalue is negative beyond the relative tolerance."""
    gamma = fgn_autocovariance(n_steps, dt, h)
    row = np.concatenate([gamma, gamma[-2:0:-1]])
    eig = np.fft.fft(row).real
    if eig.min() < -EIGEN_TOLERANCE * eig.max():
        return None
    scale = np.sqrt(np.clip(eig, 0.0, None) / row.size)
    scale.setflags(write=False)
    return scale


def circulant_embeddable(grid: TimeGrid, h: float) -> bool:
    return _circulant_scale(grid.n_steps, grid.dt, check_hurst(h)) is not None


def _circulant_paths(grid: TimeGrid, h: float, seeds: Sequence[int]) -> np.ndarray:
    scale = _circulant_scale(grid.n_steps, grid.dt, h)
    m = scale.size
    noise = np.empty((len(seeds), m), dtype=complex)
    for row, seed in enumerate(seeds):
        xi = standard_normals(seed, 2 * m)
        noise[row].real = xi[:m]
        noise[row].imag = xi[m:]
    # Re(F diag(sqrt(lam/m)) xi) has the circulant covariance for complex xi
    fgn = np.fft.fft(noise * scale, axis=-1).real[:, : grid.n_steps]
    out = np.zeros((len(seeds), grid.n_steps + 1))
    np.cumsum(fgn, axis=-1, out=out[:, 1:])
    return out


def generate_circulant(grid: TimeGrid, h: float, seed: int) -> FbmPath:
    """Exact fBm sample by circulant embedding of the increment covariance.

    If the embedding has an eigenvalue below ``-1e-10 * max eigenvalue`` the
    sample is drawn with :func:`generate_cholesky` instead and the returned
    path has ``fallback=True``.
    """
    h = check_hurst(h)
    if not circulant_embeddable(grid, h):
        path = generate_cholesky(grid, h, seed)
        return FbmPath(grid, path.values, h, seed, method="cholesky", fallback=True)
    values = _circulant_paths(grid, h, [seed])[0]
    return FbmPath(grid, values, h, seed, method="circulant")


def sample_paths(
    grid: TimeGrid, h: float, seeds: Sequence[int], method: str = "circulant"
) -> tuple[np.ndarray, str]:
    """Draw one path per seed as rows of a ``(len(seeds), n_steps + 1)`` array.

    Row ``i`` equals ``generate(grid, h, seeds[i], method).values`` bit for bit
    (verified by the test-suite for both methods). Returns the array and the
    method actually used.
    """
    h = check_hurst(h)
    if method not in METHODS:
        raise ValueError(f"unknown fBm method {method!r}; expected one of {METHODS}")
    if method == "circulant" and circulant_embeddable(grid, h):
        return _circulant_paths(grid, h, seeds), "circulant"
    return _cholesky_paths(grid, h, seeds), "cholesky"


def generate(grid: TimeGrid, h: float, seed: int, method: str = "circulant") -> FbmPath:
    if method == "cholesky":
        return generate_cholesky(grid, h, seed)
    if method == "circulant":
        return generate_circulant(grid, h, seed)
    raise ValueError(f"unknown fBm method {method!r}; expected one of {METHODS}")


# ---------------------------------------------------------------------------
# Path utilities
# ---------------------------------------------------------------------------


def increments(path: FbmPath | np.ndarray) -> np.ndarray:
    """``values[n] - values[n-1]`` for ``n = 1..n_steps``."""
    values = path.values if isinstance(path, FbmPath) else np.asarray(path, dtype=float)
    return np.diff(values)


def empirical_holder_check(path: FbmPath, alpha: float | None = None) -> HolderReport:
    """Largest ratio ``|W_t - W_s| / |t - s|^(H - alpha)`` over grid pairs.

    All pairs are examined when ``n_steps <= 8192``. Longer paths are
    thinned to every ``ceil(n_steps / 8192)``-th grid point (the last point
    is always kept) and all pairs of the thinned grid are examined.
    """
    h = path.hurst
    if alpha is None:
        alpha = h / 10.0
    if not (0.0 < alpha < h):
        raise ValueError(f"alpha must lie in (0, H) = (0, {h}), got {alpha}")
    exponent = h - alpha
    stride = max(1, math.ceil(path.grid.n_steps / HOLDER_MAX_POINTS))
    idx = np.arange(0, path.grid.n_steps + 1, stride)
    if idx[-1] != path.grid.n_steps:
        idx = np.append(idx, path.grid.n_steps)
    w = path.values[idx]
    t = path.grid.times[idx]

    best, pair = 0.0, (float(t[0]), float(t[-1]))
    for lag in range(1, w.size):
        gap = np.abs(t[lag:] - t[:-lag]) ** exponent
        ratio = np.abs(w[lag:] - w[:-lag]) / gap
        j = int(np.argmax(ratio))
        if ratio[j] > best:
            best, pair = float(ratio[j]), (float(t[j]), float(t[j + lag]))
    return HolderReport(alpha=alpha, max_ratio=best, worst_pair=pair, stride=stride)


def write_path_csv(path: FbmPath, dest: str | Path) -> Path:
    """Dump ``t,w`` rows, one per grid point."""
    return csvio.write_columns(dest, ["t", "w"], [path.times, path.values])
