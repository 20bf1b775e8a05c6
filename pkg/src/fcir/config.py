"""Experiment configuration files.

A configuration is a TOML document with top-level keys and at most one level
of sections, flattened to dotted keys (``[drift] name = "mishura"`` becomes
``drift.name``). Every key is checked against the schema of the selected
command before anything runs; unknown keys are errors.

Example::

    command = "ensemble"
    hurst = 0.6
    sigma = 0.4
    z0 = 1.0
    horizon = 10.0
    dt = 0.001
    n_paths = 1000
    seed = 41

    [drift]
    name = "illustration1"
    theta = 1.0
    c = 2.0
"""

from __future__ import annotations

import math
import sys
from dataclasses import dataclass, field
from importlib import resources
from typing import Any, Callable

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .drift import FAMILIES, DriftSpec, builtin
from .fbm import TimeGrid

__all__ = [
    "COMMANDS",
    "ConfigError",
    "ExperimentConfig",
    "parse_config",
    "load_preset",
    "preset_names",
]

COMMANDS = ("fbm", "simulate", "ensemble", "hitprob", "sweep", "verify", "conditions")


class ConfigError(ValueError):
    def __init__(self, message: str, key: str | None = None, line: int | None = None):
        where = f"line {line}: " if line is not None else ""
        super().__init__(f"{where}{message}")
        self.key = key
        self.line = line


@dataclass(frozen=True)
class Field:
    check: Callable[[Any], bool]
    expected: str
    default: Any = None
    required: bool = False


def _is_number(v) -> bool:
    return isinstance(v, (int, float)) and not isinstance(v, bool) and math.isfinite(v)


def _is_int(v) -> bool:
    return isinstance(v, int) and not isinstance(v, bool)


def _positive(v) -> bool:
    return _is_number(v) and v > 0


def _unit(v) -> bool:
    return _is_number(v) and 0 < v < 1


def _number_list(pred):
    return lambda v: isinstance(v, list) and len(v) > 0 and all(pred(x) for x in v)


def _unit_or_list(v) -> bool:
    return _unit(v) or _number_list(_unit)(v)


HURST = Field(_unit, "a number in (0, 1)", required=True)
SIGMA = Field(_positive, "a positive number", required=True)
Z0 = Field(_positive, "a positive number", default=1.0)
HORIZON = Field(_positive, "a positive number", required=True)
DT = Field(_positive, "a positive number", required=True)
N_PATHS = Field(lambda v: _is_int(v) and v >= 1, "an integer >= 1", default=1000)
SEED = Field(lambda v: _is_int(v) and 0 <= v < 2**64, "an integer in [0, 2^64)", default=0)
METHOD = Field(lambda v: v in ("cholesky", "circulant"), "'cholesky' or 'circulant'", "circulant")
OUTPUT = Field(lambda v: isinstance(v, str) and v != "", "a non-empty string", default=None)
COMMAND = Field(lambda v: v in COMMANDS, f"one of {COMMANDS}", required=True)
RESOLUTION = Field(lambda v: _is_int(v) and v >= 16, "an integer >= 16", default=256)

_BASE = {"command": COMMAND, "output": OUTPUT}
_PATHS = {
    "hurst": HURST,
    "horizon": HORIZON,
    "dt": DT,
    "seed": SEED,
    "fbm_method": METHOD,
}
_MODEL = {**_PATHS, "sigma": SIGMA, "z0": Z0}

SCHEMAS: dict[str, dict[str, Field]] = {
    "fbm": {**_BASE, **_PATHS},
    "simulate": {
        **_BASE,
        **_MODEL,
        "solver": Field(lambda v: v in ("euler", "picard"), "'euler' or 'picard'", "euler"),
        "level": Field(_positive, "a positive number below z0", default=None),
        "tol": Field(_positive, "a positive number", default=1e-8),
        "max_iter": Field(lambda v: _is_int(v) and v >= 1, "an integer >= 1", default=200),
    },
    "ensemble": {**_BASE, **_MODEL, "n_paths": N_PATHS},
    "hitprob": {
        **_BASE,
        **_MODEL,
        "n_paths": N_PATHS,
        "hurst": Field(_unit_or_list, "a number in (0, 1) or a list of them", required=True),
    },
    "sweep": {
        **_BASE,
        **_MODEL,
        "n_paths": N_PATHS,
        "ks": Field(_number_list(_positive), "a non-empty list of positive numbers", required=True),
        "a": Field(_positive, "a positive number", default=1.0),
        "coupled": Field(lambda v: isinstance(v, bool), "true or false", default=True),
    },
    "verify": {
        **_BASE,
        **_MODEL,
        "hurst": Field(_unit_or_list, "a number in (0, 1) or a list of them", required=True),
        "dt": Field(_number_list(_positive), "a non-empty list of positive numbers", required=True),
        "n_paths": Field(lambda v: _is_int(v) and v >= 1, "an integer >= 1", default=100),
    },
    "conditions": {
        **_BASE,
        "horizon": HORIZON,
        "sigma": Field(_positive, "a positive number", default=None),
        "t_res": RESOLUTION,
        "x_res": RESOLUTION,
        "x_max": Field(_positive, "a positive number", default=None),
    },
}
DRIFT_COMMANDS = ("simulate", "ensemble", "hitprob", "verify", "conditions")

_DRIFT_VALUE = Field(
    lambda v: _is_number(v) or _number_list(_is_number)(v), "a number or a list of numbers"
)


@dataclass(frozen=True)
class ExperimentConfig:
    """Validated flat configuration; ``drift`` holds the ``drift.*`` keys
    without their prefix (including ``name``)."""

    command: str
    values: dict[str, Any]
    drift: dict[str, Any] = field(default_factory=dict)

    def __getitem__(self, key: str):
        return self.values[key]

    def get(self, key: str, default=None):
        return self.values.get(key, default)

    def resolved(self) -> dict[str, Any]:
        """All keys, defaults applied, in dotted form."""
        out = dict(self.values)
        out.update({f"drift.{k}": v for k, v in self.drift.items()})
        return out

    def with_seed(self, seed: int) -> "ExperimentConfig":
        if not SEED.check(seed):
            raise ConfigError(f"seed: expected {SEED.expected}, got {seed!r}", "seed")
        return ExperimentConfig(self.command, {**self.values, "seed": seed}, dict(self.drift))

    def drift_spec(self, horizon: float | None = None) -> DriftSpec:
        params = {k: v for k, v in self.drift.items() if k != "name"}
        try:
            return builtin(self.drift["name"], params, horizon or self.values.get("horizon", 10.0))
        except ValueError as exc:
            raise ConfigError(f"drift: {exc}", "drift") from exc

    def grid(self, dt: float | None = None) -> TimeGrid:
        try:
            return TimeGrid.from_horizon(self.values["horizon"], dt or self.values["dt"])
        except ValueError as exc:
            raise ConfigError(f"horizon/dt: {exc}", "dt") from exc


def _flatten(doc: dict) -> dict[str, Any]:
    flat = {}
    for key, value in doc.items():
        if isinstance(value, dict):
            for sub, subvalue in value.items():
                if isinstance(subvalue, dict):
                    raise ConfigError(f"sections nest at most one level deep: {key}.{sub}", key)
                flat[f"{key}.{sub}"] = subvalue
        else:
            flat[key] = value
    return flat


def _validate_drift(command: str, flat: dict[str, Any]) -> dict[str, Any]:
    drift = {k[len("drift.") :]: v for k, v in flat.items() if k.startswith("drift.")}
    if command not in DRIFT_COMMANDS:
        if drift:
            raise ConfigError(f"command {command!r} takes no drift.* keys", "drift")
        return {}
    if "name" not in drift:
        raise ConfigError(f"drift.name is required (one of {FAMILIES})", "drift.name")
    if drift["name"] not in FAMILIES:
        raise ConfigError(
            f"drift.name: expected one of {FAMILIES}, got {drift['name']!r}", "drift.name"
        )
    for key, value in drift.items():
        if key != "name" and not _DRIFT_VALUE.check(value):
            raise ConfigError(
                f"drift.{key}: expected {_DRIFT_VALUE.expected}, got {value!r}", f"drift.{key}"
            )
    if drift["name"] in ("illustration1", "illustration2"):
        # the drift's sigma is the model volatility
        sigma = flat.get("sigma")
        if "sigma" not in drift and sigma is not None:
            drift["sigma"] = sigma
        elif sigma is not None and drift["sigma"] != sigma:
            raise ConfigError("drift.sigma must equal sigma for illustration drifts", "drift.sigma")
    return drift


def validate(flat: dict[str, Any]) -> ExperimentConfig:
    if "command" not in flat:
        raise ConfigError(f"command is required (one of {COMMANDS})", "command")
    command = flat["command"]
    if command not in COMMANDS:
        raise ConfigError(f"command: expected one of {COMMANDS}, got {command!r}", "command")
    schema = SCHEMAS[command]
    unknown = sorted(k for k in flat if k not in schema and not k.startswith("drift."))
    if unknown:
        raise ConfigError(f"unknown key(s) for command {command!r}: {unknown}", unknown[0])
    values = {}
    for key, spec in schema.items():
        if key in flat:
            value = flat[key]
            if not spec.check(value):
                raise ConfigError(f"{key}: expected {spec.expected}, got {value!r}", key)
            values[key] = value
        elif spec.required:
            raise ConfigError(f"{key} is required ({spec.expected})", key)
        else:
            values[key] = spec.default
    if command == "verify":
        dts = values["dt"]
        if any(b >= a for a, b in zip(dts, dts[1:])):
            raise ConfigError("dt: the step sizes must be strictly decreasing", "dt")
    if command == "sweep":
        ks = values["ks"]
        if any(b <= a for a, b in zip(ks, ks[1:])):
            raise ConfigError("ks: expected a strictly increasing list", "ks")
    if command == "simulate" and values["level"] is not None and not values["level"] < values["z0"]:
        raise ConfigError("level: expected a positive number below z0", "level")
    drift = _validate_drift(command, flat)
    config = ExperimentConfig(command, values, drift)
    if drift:
        config.drift_spec()  # parameter ranges are checked before anything runs
    return config


def parse_config(text: str) -> ExperimentConfig:
    """Parse and validate a configuration document.

    Raises
    ------
    ConfigError
        On TOML syntax errors (with the line number) and on schema
        violations (naming the offending key and the accepted range).
    """
    try:
        doc = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        line = getattr(exc, "lineno", None)
        raise ConfigError(f"syntax error: {exc}", line=line) from exc
    return validate(_flatten(doc))


def preset_names() -> list[str]:
    files = resources.files("fcir").joinpath("presets").iterdir()
    return sorted(f.name[: -len(".toml")] for f in files if f.name.endswith(".toml"))


def preset_text(name: str) -> str:
    if name not in preset_names():
        raise ConfigError(f"unknown preset {name!r}; available: {preset_names()}")
    return resources.files("fcir").joinpath("presets", f"{name}.toml").read_text("utf-8")


def load_preset(name: str) -> ExperimentConfig:
    return parse_config(preset_text(name))
