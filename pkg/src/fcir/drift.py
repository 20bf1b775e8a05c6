"""Drift functions ``f(t, x)`` for the singular equation
``dZ = f(t, Z) / (2 Z) dt + (sigma / 2) dW^H`` and grid audits of the two
regularity conditions:

(D1) ``g(t, x) = f(t, x) / (2x)`` is negative for every ``x > x_star``;
(D2) for each horizon ``T`` some ``x_T > 0`` has ``f > 0`` on ``(0, T] x [0, x_T]``.

All families evaluate with scalar or array ``t`` and array ``x``. They are
plain frozen dataclasses so specs can be pickled to worker processes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

__all__ = [
    "Curve",
    "DriftSpec",
    "ConditionReport",
    "FAMILIES",
    "builtin",
    "eval_f",
    "eval_g",
    "check_conditions",
]


@dataclass(frozen=True)
class Curve:
    """Time-dependent coefficient: a constant or a piecewise-linear table.

    Tables interpolate linearly between knots and are held flat outside them.
    """

    times: tuple[float, ...]
    values: tuple[float, ...]

    @classmethod
    def constant(cls, value: float) -> "Curve":
        return cls((0.0,), (float(value),))

    @classmethod
    def table(cls, times: Sequence[float], values: Sequence[float]) -> "Curve":
        times = tuple(float(t) for t in times)
        values = tuple(float(v) for v in values)
        if len(times) != len(values) or not times:
            raise ValueError("curve table needs equally many times and values (at least one)")
        if any(b <= a for a, b in zip(times, times[1:])):
            raise ValueError("curve knots must be strictly increasing")
        if times[0] < 0:
            raise ValueError("curve knots must be non-negative times")
        return cls(times, values)

    def __call__(self, t):
        if len(self.values) == 1:
            return self.values[0] if np.ndim(t) == 0 else np.full(np.shape(t), self.values[0])
        out = np.interp(t, self.times, self.values)
        return float(out) if np.ndim(out) == 0 else out

    def minimum(self) -> float:
        return min(self.values)

    def maximum_on(self, horizon: float) -> float:
        """Exact maximum over ``[0, horizon]`` (attained at a knot or an end)."""
        candidates = [self(0.0), self(horizon)]
        candidates += [v for t, v in zip(self.times, self.values) if t <= horizon]
        return float(max(candidates))


# ---------------------------------------------------------------------------
# Families
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Mishura:
    mu: float
    theta: float

    def __call__(self, t, x):
        return self.mu - self.theta * (x * x)


@dataclass(frozen=True)
class LevelSequence:
    k: float
    a: float

    def __call__(self, t, x):
        return self.k - self.a * (x * x)


@dataclass(frozen=True)
class IllustrationI:
    theta: float
    c: float
    sigma: float

    def __call__(self, t, x):
        ramp = 0.5 * self.sigma**2 * (1.0 - np.exp(-2.0 * self.theta * t))
        return ramp + self.theta * (self.c - x * x)


@dataclass(frozen=True)
class IllustrationII:
    theta: float
    c: float
    sigma: float

    def __call__(self, t, x):
        growth = (self.theta + self.c) * np.exp(self.c * t)
        ramp = 0.5 * self.sigma**2 * (1.0 - np.exp(-2.0 * self.theta * t))
        return growth + ramp - self.theta * (x * x)

    def x_star(self, horizon: float) -> float:
        th, c, s = self.theta, self.c, self.sigma
        return math.sqrt((th + c) * math.exp(c * horizon) / th + s * s / (2.0 * th))


@dataclass(frozen=True)
class ExtendedCIR:
    theta: Curve
    mu: Curve

    def __call__(self, t, x):
        return self.theta(t) * (self.mu(t) - x * x)

    def x_star(self, horizon: float) -> float:
        return math.sqrt(self.mu.maximum_on(horizon))


@dataclass(frozen=True)
class DriftSpec:
    """A named drift ``f(t, x)`` with its claimed (D1) threshold ``x_star``.

    ``bound(horizon)`` gives the threshold valid over ``[0, horizon]``; it
    differs from ``x_star`` only for families whose positivity region grows
    with time.
    """

    name: str
    params: Mapping[str, object]
    x_star: float
    f: Callable
    x_star_at: Callable[[float], float] | None = field(default=None, repr=False)

    def __post_init__(self):
        if not (self.x_star > 0 and math.isfinite(self.x_star)):
            raise ValueError(f"x_star must be positive and finite, got {self.x_star}")

    def __call__(self, t, x):
        return self.f(t, x)

    def bound(self, horizon: float) -> float:
        return self.x_star_at(horizon) if self.x_star_at is not None else self.x_star


def eval_f(spec: DriftSpec, t, x):
    return spec.f(t, x)


def eval_g(spec: DriftSpec, t, x):
    """``f(t, x) / (2x)``; ``x`` must be strictly positive."""
    x_arr = np.asarray(x, dtype=float)
    if np.any(x_arr <= 0):
        raise ValueError("g(t, x) = f(t, x)/(2x) is undefined for x <= 0")
    return spec.f(t, x) / (2.0 * x)


# ---------------------------------------------------------------------------
# Builtins
# ---------------------------------------------------------------------------

_REQUIRED = {
    "mishura": ("mu", "theta"),
    "level_sequence": ("k", "a"),
    "illustration1": ("theta", "c", "sigma"),
    "illustration2": ("theta", "c", "sigma"),
    "extended_cir": (),
}
_EXTENDED_KEYS = {"theta", "mu", "theta_times", "theta_values", "mu_times", "mu_values"}
FAMILIES = tuple(_REQUIRED)


def _positive(params: Mapping, *names: str) -> None:
    for name in names:
        value = params[name]
        if not (isinstance(value, (int, float)) and math.isfinite(value) and value > 0):
            raise ValueError(f"drift parameter {name!r} must be a positive number, got {value!r}")


def _curve(params: Mapping, name: str) -> Curve:
    value = params.get(name)
    table = (params.get(f"{name}_times"), params.get(f"{name}_values"))
    if isinstance(value, Curve):
        curve = value
    elif value is not None:
        if any(v is not None for v in table):
            raise ValueError(f"give either {name!r} or {name}_times/{name}_values, not both")
        _positive(params, name)
        curve = Curve.constant(value)
    elif all(v is not None for v in table):
        curve = Curve.table(*table)
    else:
        raise ValueError(f"extended_cir needs {name!r} or both {name}_times and {name}_values")
    if curve.minimum() <= 0:
        raise ValueError(f"extended_cir curve {name!r} must stay positive")
    return curve


def builtin(name: str, params: Mapping[str, object], horizon: float = 10.0) -> DriftSpec:
    """Construct one of the named drift families.

    ``horizon`` only matters for ``illustration2`` and ``extended_cir``,
    whose (D1) threshold depends on the time window.
    """
    if name not in _REQUIRED:
        raise ValueError(f"unknown drift family {name!r}; expected one of {FAMILIES}")
    params = dict(params)
    allowed = _EXTENDED_KEYS if name == "extended_cir" else set(_REQUIRED[name])
    unknown = set(params) - allowed
    if unknown:
        raise ValueError(f"unknown parameters for {name}: {sorted(unknown)}")
    missing = [p for p in _REQUIRED[name] if p not in params]
    if missing:
        raise ValueError(f"missing parameters for {name}: {missing}")

    if name == "mishura":
        _positive(params, "mu", "theta")
        f = Mishura(float(params["mu"]), float(params["theta"]))
        return DriftSpec(name, params, math.sqrt(f.mu / f.theta), f)
    if name == "level_sequence":
        _positive(params, "k", "a")
        f = LevelSequence(float(params["k"]), float(params["a"]))
        return DriftSpec(name, params, math.sqrt(f.k / f.a), f)
    if name == "illustration1":
        _positive(params, "theta", "c", "sigma")
        f = IllustrationI(float(params["theta"]), float(params["c"]), float(params["sigma"]))
        return DriftSpec(name, params, math.sqrt(f.c + f.sigma**2 / (2.0 * f.theta)), f)
    if name == "illustration2":
        _positive(params, "theta", "c", "sigma")
        f = IllustrationII(float(params["theta"]), float(params["c"]), float(params["sigma"]))
        return DriftSpec(name, params, f.x_star(horizon), f, x_star_at=f.x_star)
    f = ExtendedCIR(_curve(params, "theta"), _curve(params, "mu"))
    return DriftSpec(name, params, f.x_star(horizon), f, x_star_at=f.x_star)


# ---------------------------------------------------------------------------
# Condition audit
# ---------------------------------------------------------------------------

D2_SHRINK_STEPS = 60


@dataclass
class ConditionReport:
    x_star: float
    d1_violations: list[tuple[float, float, float]]
    d2_witness: float | None
    d2_min_f: float
    audited_region: tuple[float, int, int]
    x_max: float

    @property
    def d1_ok(self) -> bool:
        return not self.d1_violations

    @property
    def d2_ok(self) -> bool:
        return self.d2_witness is not None


def check_conditions(
    spec: DriftSpec,
    horizon: float,
    t_res: int = 256,
    x_res: int = 256,
    x_max: float | None = None,
) -> ConditionReport:
    """Audit (D1) and (D2) on a finite grid over ``(0, horizon]``.

    (D1) is checked at ``x_res`` points of ``(x_star, x_max]``. For (D2) the
    candidate ``x_T`` starts at ``x_star / 2`` and is halved until ``f > 0``
    on the whole audited rectangle ``(0, T] x [0, x_T]``, at most 60 times.
    Failures are reported, never raised.
    """
    if not (horizon > 0 and math.isfinite(horizon)):
        raise ValueError(f"horizon must be positive, got {horizon}")
    if t_res < 16 or x_res < 16:
        raise ValueError("audit resolutions must be at least 16")
    x_star = spec.bound(horizon)
    if x_max is None:
        x_max = 10.0 * x_star
    if not x_max > x_star:
        raise ValueError(f"x_max={x_max} must exceed x_star={x_star}")

    t = horizon * np.arange(1, t_res + 1) / t_res
    x = x_star + (x_max - x_star) * np.arange(1, x_res + 1) / x_res
    tt, xx = np.meshgrid(t, x, indexing="ij")
    g = np.asarray(spec.f(tt, xx), dtype=float) / (2.0 * xx)
    bad = np.argwhere(~(g < 0))
    violations = [(float(tt[i, j]), float(xx[i, j]), float(g[i, j])) for i, j in bad]

    x_t = x_star / 2.0
    witness, min_f = None, -math.inf
    fraction = np.arange(0, x_res + 1) / x_res
    for _ in range(D2_SHRINK_STEPS + 1):
        tt, xx = np.meshgrid(t, x_t * fraction, indexing="ij")
        min_f = float(np.min(spec.f(tt, xx)))
        if min_f > 0:
            witness = x_t
            break
        x_t /= 2.0
    return ConditionReport(
        x_star=x_star,
        d1_violations=violations,
        d2_witness=witness,
        d2_min_f=min_f,
        audited_region=(float(horizon), t_res, x_res),
        x_max=float(x_max),
    )
