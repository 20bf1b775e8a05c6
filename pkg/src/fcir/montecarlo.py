"""Ensembles of fCIR paths: statistics, hitting probabilities, drift sweeps
and Stratonovich-identity convergence studies.

Paths are simulated in fixed blocks of ``BLOCK_SIZE`` consecutive path
indices. Path ``i`` is driven by the seed ``derive_seed(master_seed, i)``
and blocks are merged in index order, so every result is bit-identical for
any number of workers.
"""

from __future__ import annotations

import math
import os
import statistics
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from . import csvio
from .drift import DriftSpec, builtin
from .fbm import FbmPath, TimeGrid, check_hurst, generate, sample_paths
from .rng import derive_seed
from .sde import SdePath, euler_batch, euler_maruyama
from .stratonovich import ResidualReport, verify_identity

__all__ = [
    "BLOCK_SIZE",
    "EnsembleConfig",
    "EnsembleStats",
    "EnsembleError",
    "HitProbability",
    "SweepRow",
    "StudyRow",
    "wilson_interval",
    "simulate",
    "run_ensemble",
    "hitting_probability",
    "drift_sweep",
    "convergence_study",
    "write_stats_csv",
    "write_hitprob_csv",
    "write_residual_csv",
]

BLOCK_SIZE = 128
Z95 = statistics.NormalDist().inv_cdf(0.975)


class EnsembleError(RuntimeError):
    def __init__(self, path_index: int, cause: BaseException):
        super().__init__(f"path {path_index}: {type(cause).__name__}: {cause}")
        self.path_index = path_index


@dataclass(frozen=True)
class EnsembleConfig:
    n_paths: int
    master_seed: int
    grid: TimeGrid
    spec: DriftSpec
    sigma: float
    z0: float
    hurst: float
    fbm_method: str = "circulant"

    def __post_init__(self):
        if int(self.n_paths) != self.n_paths or self.n_paths < 1:
            raise ValueError(f"n_paths must be a positive integer, got {self.n_paths}")
        if not (0 <= int(self.master_seed) < 2**64):
            raise ValueError("master_seed must be an unsigned 64-bit integer")
        if not (self.sigma > 0 and math.isfinite(self.sigma)):
            raise ValueError(f"sigma must be positive, got {self.sigma}")
        if not (self.z0 > 0 and math.isfinite(self.z0)):
            raise ValueError(f"z0 must be positive, got {self.z0}")
        if self.fbm_method not in ("cholesky", "circulant"):
            raise ValueError(
                f"fbm_method must be 'cholesky' or 'circulant', got {self.fbm_method!r}"
            )
        object.__setattr__(self, "hurst", check_hurst(self.hurst))

    def path_seed(self, index: int) -> int:
        return derive_seed(self.master_seed, index)


@dataclass(frozen=True)
class HitProbability:
    n_paths: int
    hits: int
    p_hat: float
    ci95: tuple[float, float]


@dataclass
class EnsembleStats:
    times: np.ndarray
    mean_x: np.ndarray
    var_x: np.ndarray
    q05: np.ndarray
    q50: np.ndarray
    q95: np.ndarray
    alive_fraction: np.ndarray
    hit_count: int
    n_paths: int
    p_hat: float
    ci95: tuple[float, float]
    hit_indices: np.ndarray = field(repr=False)  # -1 for never absorbed


@dataclass(frozen=True)
class SweepRow:
    k: float
    n_paths: int
    hits: int
    p_hat: float
    ci95: tuple[float, float]
    hit_indices: np.ndarray = field(repr=False, compare=False)


@dataclass(frozen=True)
class StudyRow:
    dt: float
    median_sup_residual: float
    diagnostic: bool
    reports: tuple[ResidualReport, ...] = field(repr=False, compare=False)


def wilson_interval(hits: int, n: int, z: float = Z95) -> tuple[float, float]:
    """Wilson score interval for a binomial proportion."""
    if n < 1 or not (0 <= hits <= n):
        raise ValueError(f"need 0 <= hits <= n and n >= 1, got hits={hits}, n={n}")
    p = hits / n
    z2 = z * z
    denom = 1.0 + z2 / n
    centre = (p + z2 / (2.0 * n)) / denom
    half = z * math.sqrt(p * (1.0 - p) / n + z2 / (4.0 * n * n)) / denom
    low = 0.0 if hits == 0 else min(p, max(0.0, centre - half))
    high = 1.0 if hits == n else max(p, min(1.0, centre + half))
    return low, high


def _hit_probability(hit: np.ndarray) -> HitProbability:
    n = int(hit.size)
    hits = int(np.count_nonzero(hit >= 0))
    return HitProbability(n, hits, hits / n, wilson_interval(hits, n))


# ---------------------------------------------------------------------------
# Block execution
# ---------------------------------------------------------------------------


def _blocks(n_paths: int) -> list[tuple[int, int]]:
    return [(s, min(s + BLOCK_SIZE, n_paths)) for s in range(0, n_paths, BLOCK_SIZE)]


def default_workers() -> int:
    return os.cpu_count() or 1


def _map(fn: Callable, tasks: Sequence, workers: int | None) -> list:
    workers = default_workers() if workers is None else int(workers)
    if workers <= 1 or len(tasks) <= 1:
        return [fn(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=min(workers, len(tasks))) as pool:
        return list(pool.map(fn, tasks))


def _locate(start: int, n_rows: int, attempt: Callable[[int], object], exc: BaseException):
    """Re-run a failed block row by row to name the first failing path."""
    for row in range(n_rows):
        try:
            attempt(row)
        except Exception as row_exc:
            return EnsembleError(start + row, row_exc)
    return EnsembleError(start, exc)


def _drivers(config: EnsembleConfig, start: int, stop: int) -> np.ndarray:
    seeds = [config.path_seed(i) for i in range(start, stop)]
    try:
        w, _ = sample_paths(config.grid, config.hurst, seeds, config.fbm_method)
    except Exception as exc:

        def retry(row):
            sample_paths(config.grid, config.hurst, seeds[row : row + 1], config.fbm_method)

        raise _locate(start, len(seeds), retry, exc) from exc
    return w


def _solve(config: EnsembleConfig, spec: DriftSpec, w: np.ndarray, start: int):
    try:
        return euler_batch(spec.f, config.sigma, config.z0, config.grid.dt, w)
    except Exception as exc:

        def retry(row):
            euler_batch(spec.f, config.sigma, config.z0, config.grid.dt, w[row])

        raise _locate(start, w.shape[0], retry, exc) from exc


def _block_paths(task) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    config, start, stop = task
    w = _drivers(config, start, stop)
    z, hit = _solve(config, config.spec, w, start)
    return w, z, hit


def _block_hits(task) -> np.ndarray:
    return _block_paths(task)[2]


def _block_sweep(task) -> list[np.ndarray]:
    config, specs, start, stop = task
    w = _drivers(config, start, stop)
    return [_solve(config, spec, w, start)[1] for spec in specs]


def simulate(config: EnsembleConfig, workers: int | None = 1):
    """All driver paths, solutions and hit indices as ``(w, z, hit)`` arrays."""
    parts = _map(_block_paths, [(config, a, b) for a, b in _blocks(config.n_paths)], workers)
    w = np.concatenate([p[0] for p in parts])
    z = np.concatenate([p[1] for p in parts])
    hit = np.concatenate([p[2] for p in parts])
    return w, z, hit


def path_at(config: EnsembleConfig, index: int) -> SdePath:
    """Path ``index`` of the ensemble as an :class:`SdePath`."""
    driver = generate(config.grid, config.hurst, config.path_seed(index), config.fbm_method)
    return euler_maruyama(config.spec, config.sigma, config.z0, driver)


# ---------------------------------------------------------------------------
# Public operations
# ---------------------------------------------------------------------------


def _alive_fraction(hit: np.ndarray, n_points: int) -> np.ndarray:
    dead_from = np.bincount(hit[hit >= 0], minlength=n_points)[:n_points]
    return 1.0 - np.cumsum(dead_from) / hit.size


def run_ensemble(config: EnsembleConfig, workers: int | None = 1) -> EnsembleStats:
    """Per-time statistics of ``X`` and the hitting probability over ``[0, T]``."""
    _, z, hit = simulate(config, workers)
    x = z * z
    q05, q50, q95 = np.quantile(x, [0.05, 0.5, 0.95], axis=0)
    prob = _hit_probability(hit)
    return EnsembleStats(
        times=config.grid.times,
        mean_x=x.mean(axis=0),
        var_x=x.var(axis=0),
        q05=q05,
        q50=q50,
        q95=q95,
        alive_fraction=_alive_fraction(hit, config.grid.n_steps + 1),
        hit_count=prob.hits,
        n_paths=prob.n_paths,
        p_hat=prob.p_hat,
        ci95=prob.ci95,
        hit_indices=hit,
    )


def hitting_probability(config: EnsembleConfig, workers: int | None = 1) -> HitProbability:
    """Fraction of paths absorbed at some grid time ``<= T`` (final point
    included) with its Wilson 95% interval."""
    tasks = [(config, a, b) for a, b in _blocks(config.n_paths)]
    hit = np.concatenate(_map(_block_hits, tasks, workers))
    return _hit_probability(hit)


def drift_sweep(
    base: EnsembleConfig,
    ks: Sequence[float],
    a: float,
    coupled: bool = True,
    workers: int | None = 1,
) -> list[SweepRow]:
    """Hitting probability for each ``f_k(t, z) = k - a z^2``.

    With ``coupled=True`` every ``k`` reuses the same driver paths (those of
    ``base.master_seed``). Otherwise ``k`` number ``j`` uses the master seed
    ``derive_seed(base.master_seed, j)``.
    """
    ks = [float(k) for k in ks]
    if not ks or any(k <= 0 for k in ks) or any(b <= a_ for a_, b in zip(ks, ks[1:])):
        raise ValueError("ks must be positive and strictly increasing")
    if not a > 0:
        raise ValueError(f"a must be positive, got {a}")
    horizon = base.grid.horizon
    specs = [builtin("level_sequence", {"k": k, "a": a}, horizon) for k in ks]
    if coupled:
        tasks = [(base, specs, lo, hi) for lo, hi in _blocks(base.n_paths)]
        parts = _map(_block_sweep, tasks, workers)
        hits = [np.concatenate([p[j] for p in parts]) for j in range(len(ks))]
    else:
        hits = []
        for j, spec in enumerate(specs):
            cfg = replace(base, spec=spec, master_seed=derive_seed(base.master_seed, j))
            tasks = [(cfg, lo, hi) for lo, hi in _blocks(cfg.n_paths)]
            hits.append(np.concatenate(_map(_block_hits, tasks, workers)))
    rows = []
    for k, hit in zip(ks, hits):
        prob = _hit_probability(hit)
        rows.append(SweepRow(k, prob.n_paths, prob.hits, prob.p_hat, prob.ci95, hit))
    return rows


def _block_residuals(task) -> list[ResidualReport]:
    config, start, stop = task
    w, z, hit = _block_paths(task)
    reports = []
    for row in range(w.shape[0]):
        driver = FbmPath(
            config.grid, w[row], config.hurst, config.path_seed(start + row), config.fbm_method
        )
        h = int(hit[row])
        path = SdePath(
            config.grid,
            z[row],
            z[row] * z[row],
            None if h < 0 else h,
            driver,
            config.sigma,
            config.z0,
        )
        reports.append(verify_identity(path, config.spec))
    return reports


def convergence_study(
    base: EnsembleConfig,
    dts: Sequence[float],
    n_paths_per_dt: int,
    workers: int | None = 1,
) -> list[StudyRow]:
    """Median sup-residual of the Stratonovich identity for each step size.

    Step size number ``j`` uses fresh paths from the master seed
    ``derive_seed(base.master_seed, j)`` on ``[0, base.grid.horizon]``.
    Rows are flagged ``diagnostic`` when ``H < 1/2``.
    """
    dts = [float(d) for d in dts]
    if not dts or any(b >= a for a, b in zip(dts, dts[1:])):
        raise ValueError("dts must be strictly decreasing")
    rows = []
    for j, dt in enumerate(dts):
        cfg = replace(
            base,
            grid=TimeGrid.from_horizon(base.grid.horizon, dt),
            n_paths=n_paths_per_dt,
            master_seed=derive_seed(base.master_seed, j),
        )
        tasks = [(cfg, lo, hi) for lo, hi in _blocks(cfg.n_paths)]
        reports = tuple(r for part in _map(_block_residuals, tasks, workers) for r in part)
        median = float(np.median([r.sup_residual for r in reports]))
        rows.append(StudyRow(dt, median, base.hurst < 0.5, reports))
    return rows


# ---------------------------------------------------------------------------
# CSV output
# ---------------------------------------------------------------------------

STATS_HEADER = ["t", "mean_x", "var_x", "q05", "q50", "q95", "alive_fraction"]
HITPROB_HEADER = ["param", "n_paths", "hits", "p_hat", "ci_low", "ci_high"]
RESIDUAL_HEADER = ["h", "dt", "path_id", "sup_residual", "at_horizon"]


def write_stats_csv(stats: EnsembleStats, dest: str | Path) -> Path:
    cols = [
        stats.times,
        stats.mean_x,
        stats.var_x,
        stats.q05,
        stats.q50,
        stats.q95,
        stats.alive_fraction,
    ]
    return csvio.write_columns(dest, STATS_HEADER, cols)


def write_hitprob_csv(
    rows: Iterable[tuple[float, HitProbability | SweepRow]], dest: str | Path
) -> Path:
    """``rows`` pairs the sweep parameter (H or k) with its estimate."""
    out = ((p, r.n_paths, r.hits, r.p_hat, r.ci95[0], r.ci95[1]) for p, r in rows)
    return csvio.write_rows(dest, HITPROB_HEADER, out)


def write_residual_csv(
    studies: Iterable[tuple[float, Sequence[StudyRow]]], dest: str | Path
) -> Path:
    """``studies`` pairs each Hurst parameter with its convergence-study rows."""
    out = (
        (hurst, row.dt, i, rep.sup_residual, rep.at_horizon)
        for hurst, rows in studies
        for row in rows
        for i, rep in enumerate(row.reports)
    )
    return csvio.write_rows(dest, RESIDUAL_HEADER, out)
