"""Run configuration, presets and parameter-sweep specifications.

Configurations are JSON objects.  Every section is optional and falls back
to the defaults below; unknown keys are rejected so that a misspelt rate
name cannot silently revert to its default.  A document may name a
``"preset"`` to start from, and its remaining keys override that preset::

    {
      "preset": "example2",
      "noise": {"sigma1": 0.5, "sigma2": 0.8},
      "n_paths": 200
    }

Sections: ``params`` (omega, beta, mu, mu1, alpha, p, q), ``noise``
(sigma1, sigma2), ``grid`` (t0, t_end, dt), ``initial`` (s, i, b),
``feasible`` (n_max, b_max), ``control`` (``weights``: a1, a2, u11_max,
u12_max, u2_max; ``adjoint_n``: three numbers; ``sweep``: relaxation,
tolerance, max_iterations, n_paths, base_seed, min_relaxation), and scalars n_paths,
base_seed, extinction_threshold, epsilon, retention (``"all"``,
``"stats_only"`` or ``"thinned:K"``), record_every, output_dir, time_unit.
"""
from __future__ import annotations

import copy
import dataclasses
import json
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .control import DEFAULT_ADJOINT_N, ControlWeights, SweepConfig
from .model import ModelParams, NoiseParams, SimState
from .simulate import TimeGrid

__all__ = [
    "ConfigError",
    "ControlSettings",
    "RunConfig",
    "SweepAxis",
    "SweepSpec",
    "PRESETS",
    "METRICS",
    "parse_config",
    "config_to_dict",
    "dump_config",
    "preset",
    "parse_sweep_spec",
    "apply_axis",
]


class ConfigError(ValueError):
    """Invalid configuration; ``path`` names the offending field."""

    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}" if path else message)
        self.path = path


@dataclass(frozen=True)
class ControlSettings:
    weights: ControlWeights = ControlWeights()
    adjoint_n: tuple = DEFAULT_ADJOINT_N
    sweep: SweepConfig = SweepConfig()


@dataclass(frozen=True)
class RunConfig:
    params: ModelParams = ModelParams()
    noise: NoiseParams = NoiseParams()
    grid: TimeGrid = TimeGrid()
    initial: SimState = SimState(100.0, 100.0, 100.0)
    n_paths: int = 500
    base_seed: int = 0
    extinction_threshold: float = 0.01
    epsilon: float = 0.05
    retention: object = "stats_only"
    record_every: Optional[int] = None
    n_max: Optional[float] = None
    b_max: Optional[float] = None
    control: Optional[ControlSettings] = None
    output_dir: str = "out"
    time_unit: str = "day"

    def replace(self, **changes) -> "RunConfig":
        return dataclasses.replace(self, **changes)


# Initial state (100, 100, 100) is used throughout the extinction/persistence examples.
_EX_INITIAL = {"s": 100.0, "i": 100.0, "b": 100.0}
_EXAMPLE2_RATES = {"beta": 0.05, "mu": 0.1, "mu1": 0.1}
_CONTROL_GRID = {"t0": 0.0, "t_end": 20.0, "dt": 0.01}


def _control(a1, a2):
    return {
        "weights": {"a1": a1, "a2": a2, "u11_max": 1.0, "u12_max": 1.0, "u2_max": 0.24},
        "adjoint_n": list(DEFAULT_ADJOINT_N),
    }


PRESETS = {
    "example1": {"noise": {"sigma1": 0.1, "sigma2": 0.1}, "initial": _EX_INITIAL},
    "example2": {
        "params": _EXAMPLE2_RATES,
        "noise": {"sigma1": 0.1, "sigma2": 0.1},
        "initial": _EX_INITIAL,
    },
    "example3": {
        "params": _EXAMPLE2_RATES,
        "noise": {"sigma1": 0.5, "sigma2": 0.8},
        "initial": _EX_INITIAL,
    },
    "example4_i": {
        "params": {**_EXAMPLE2_RATES, "p": 0.25, "q": 0.1},
        "noise": {"sigma1": 0.1, "sigma2": 0.1},
        "initial": {"s": 200.0, "i": 40.0, "b": 100.0},
    },
    "example4_ii": {
        "params": {**_EXAMPLE2_RATES, "p": 0.45, "q": 0.25},
        "noise": {"sigma1": 0.1, "sigma2": 0.1},
        "initial": {"s": 200.0, "i": 300.0, "b": 300.0},
    },
    "example4_iii": {
        "params": {**_EXAMPLE2_RATES, "p": 0.8, "q": 0.4},
        "noise": {"sigma1": 0.1, "sigma2": 0.1},
        "initial": {"s": 200.0, "i": 600.0, "b": 600.0},
    },
    "fig66a": {
        "params": _EXAMPLE2_RATES,
        "noise": {"sigma1": 0.05, "sigma2": 0.05},
        "grid": _CONTROL_GRID,
        "initial": {"s": 300.0, "i": 80.0, "b": 50.0},
        "control": _control(10.0, 5.0),
    },
    "fig66b": {
        "params": _EXAMPLE2_RATES,
        "noise": {"sigma1": 0.05, "sigma2": 0.05},
        "grid": _CONTROL_GRID,
        "initial": {"s": 200.0, "i": 100.0, "b": 30.0},
        "control": _control(10.0, 5.0),
    },
    "figlkm_a": {
        "params": _EXAMPLE2_RATES,
        "noise": {"sigma1": 0.05, "sigma2": 0.05},
        "grid": _CONTROL_GRID,
        "initial": {"s": 200.0, "i": 100.0, "b": 30.0},
        "control": _control(3.0, 3.0),
    },
    "figlkm_b": {
        "params": _EXAMPLE2_RATES,
        "noise": {"sigma1": 0.05, "sigma2": 0.05},
        "grid": _CONTROL_GRID,
        "initial": {"s": 200.0, "i": 100.0, "b": 30.0},
        "control": _control(1.0, 0.8),
    },
}
PRESETS["example4"] = PRESETS["example4_iii"]


def _number(value, path, integer=False, allow_none=False):
    if value is None and allow_none:
        return None
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(path, f"expected a number, got {value!r}")
    if not math.isfinite(value):
        raise ConfigError(path, "must be finite")
    if integer:
        if int(value) != value:
            raise ConfigError(path, f"expected an integer, got {value!r}")
        return int(value)
    return float(value)


def _section(doc, path, allowed):
    if not isinstance(doc, dict):
        raise ConfigError(path, f"expected an object, got {type(doc).__name__}")
    unknown = sorted(set(doc) - set(allowed))
    if unknown:
        where = f"{path}.{unknown[0]}" if path else unknown[0]
        raise ConfigError(where, "unknown key")
    return doc


def _build(cls, doc, path, names):
    _section(doc, path, names)
    kwargs = {k: _number(v, f"{path}.{k}") for k, v in doc.items()}
    try:
        return cls(**kwargs)
    except ValueError as exc:
        field_name = str(exc).split(" ", 1)[0]
        sub = f"{path}.{field_name}" if field_name in names else path
        raise ConfigError(sub, str(exc)) from None


def _merge(base: dict, override: dict) -> dict:
    out = copy.deepcopy(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = _merge(out[key], value)
        else:
            out[key] = copy.deepcopy(value)
    return out


_TOP = {
    "preset", "params", "noise", "grid", "initial", "n_paths", "base_seed",
    "extinction_threshold", "epsilon", "retention", "record_every", "feasible",
    "control", "output_dir", "time_unit",
}


def _parse_retention(value, path):
    if value in ("all", "stats_only"):
        return value
    if isinstance(value, str) and value.startswith("thinned:"):
        try:
            k = int(value.split(":", 1)[1])
        except ValueError:
            raise ConfigError(path, f"bad thinning step in {value!r}") from None
        if k < 1:
            raise ConfigError(path, "thinning step must be >= 1")
        return ("thinned", k)
    raise ConfigError(path, f"expected 'all', 'stats_only' or 'thinned:K', got {value!r}")


def _retention_text(value):
    return f"thinned:{value[1]}" if isinstance(value, tuple) else value


def _parse_control(doc, path) -> ControlSettings:
    _section(doc, path, {"weights", "adjoint_n", "sweep"})
    weights = _build(ControlWeights, doc.get("weights", {}), f"{path}.weights",
                     {"a1", "a2", "u11_max", "u12_max", "u2_max"})
    n = doc.get("adjoint_n", list(DEFAULT_ADJOINT_N))
    if not isinstance(n, (list, tuple)) or len(n) != 3:
        raise ConfigError(f"{path}.adjoint_n", "expected three numbers")
    n = tuple(_number(v, f"{path}.adjoint_n[{j}]") for j, v in enumerate(n))
    sweep_doc = _section(doc.get("sweep", {}), f"{path}.sweep",
                         {"relaxation", "tolerance", "max_iterations", "n_paths", "base_seed",
                          "min_relaxation"})
    kwargs = {}
    for key, value in sweep_doc.items():
        integer = key in ("max_iterations", "n_paths", "base_seed")
        kwargs[key] = _number(value, f"{path}.sweep.{key}", integer=integer)
    try:
        sweep = SweepConfig(**kwargs)
    except ValueError as exc:
        raise ConfigError(f"{path}.sweep", str(exc)) from None
    return ControlSettings(weights, n, sweep)


def parse_config(source) -> RunConfig:
    """Parse a JSON document (text or already-decoded dict) into a validated :class:`RunConfig`."""
    if isinstance(source, (str, bytes)):
        try:
            doc = json.loads(source)
        except json.JSONDecodeError as exc:
            raise ConfigError("", f"malformed document: {exc}") from None
    else:
        doc = source
    _section(doc, "", _TOP)
    if "preset" in doc:
        name = doc["preset"]
        if name not in PRESETS:
            raise ConfigError("preset", f"unknown preset {name!r}")
        doc = _merge(PRESETS[name], {k: v for k, v in doc.items() if k != "preset"})

    params = _build(ModelParams, doc.get("params", {}), "params",
                    {"omega", "beta", "mu", "mu1", "alpha", "p", "q"})
    noise = _build(NoiseParams, doc.get("noise", {}), "noise", {"sigma1", "sigma2"})
    grid = _build(TimeGrid, doc.get("grid", {}), "grid", {"t0", "t_end", "dt"})
    init_doc = _section(doc.get("initial", dict(_EX_INITIAL)), "initial", {"s", "i", "b"})
    initial = SimState(**{k: _number(init_doc.get(k, 100.0), f"initial.{k}") for k in ("s", "i", "b")})
    for k, v in initial._asdict().items():
        if v < 0:
            raise ConfigError(f"initial.{k}", "must be non-negative")
    feasible = _section(doc.get("feasible", {}), "feasible", {"n_max", "b_max"})

    defaults = RunConfig()
    n_paths = _number(doc.get("n_paths", defaults.n_paths), "n_paths", integer=True)
    if n_paths < 1:
        raise ConfigError("n_paths", "must be >= 1")
    threshold = _number(doc.get("extinction_threshold", defaults.extinction_threshold), "extinction_threshold")
    if threshold <= 0:
        raise ConfigError("extinction_threshold", "must be positive")
    epsilon = _number(doc.get("epsilon", defaults.epsilon), "epsilon")
    if not 0 < epsilon < 1:
        raise ConfigError("epsilon", "must lie in (0, 1)")
    record_every = _number(doc.get("record_every"), "record_every", integer=True, allow_none=True)
    if record_every is not None and record_every < 1:
        raise ConfigError("record_every", "must be >= 1")
    for key in ("output_dir", "time_unit"):
        if key in doc and not isinstance(doc[key], str):
            raise ConfigError(key, "expected a string")

    return RunConfig(
        params=params,
        noise=noise,
        grid=grid,
        initial=initial,
        n_paths=n_paths,
        base_seed=_number(doc.get("base_seed", 0), "base_seed", integer=True),
        extinction_threshold=threshold,
        epsilon=epsilon,
        retention=_parse_retention(doc.get("retention", "stats_only"), "retention"),
        record_every=record_every,
        n_max=_number(feasible.get("n_max"), "feasible.n_max", allow_none=True),
        b_max=_number(feasible.get("b_max"), "feasible.b_max", allow_none=True),
        control=None if doc.get("control") is None else _parse_control(doc["control"], "control"),
        output_dir=doc.get("output_dir", defaults.output_dir),
        time_unit=doc.get("time_unit", defaults.time_unit),
    )


def config_to_dict(config: RunConfig) -> dict:
    out = {
        "params": dataclasses.asdict(config.params),
        "noise": dataclasses.asdict(config.noise),
        "grid": dataclasses.asdict(config.grid),
        "initial": config.initial._asdict(),
        "n_paths": config.n_paths,
        "base_seed": config.base_seed,
        "extinction_threshold": config.extinction_threshold,
        "epsilon": config.epsilon,
        "retention": _retention_text(config.retention),
        "record_every": config.record_every,
        "feasible": {"n_max": config.n_max, "b_max": config.b_max},
        "output_dir": config.output_dir,
        "time_unit": config.time_unit,
    }
    if config.control is not None:
        out["control"] = {
            "weights": dataclasses.asdict(config.control.weights),
            "adjoint_n": list(config.control.adjoint_n),
            "sweep": dataclasses.asdict(config.control.sweep),
        }
    return out


def dump_config(config: RunConfig) -> str:
    return json.dumps(config_to_dict(config), indent=2)


def preset(name: str) -> RunConfig:
    return parse_config({"preset": name})


METRICS = (
    "extinction_probability",
    "lyapunov_max",
    "condition_a",
    "condition_b",
    "negative_definite",
    "terminal_mean_B",
)


@dataclass(frozen=True)
class SweepAxis:
    """One swept parameter.

    ``name`` is ``params.<rate>``, ``noise.sigma1``, ``noise.sigma2`` or
    ``noise.sigma`` (both intensities tied together).
    """

    name: str
    min: float
    max: float
    count: int
    spacing: str = "linear"

    def values(self) -> np.ndarray:
        if self.spacing == "log":
            return np.geomspace(self.min, self.max, self.count)
        return np.linspace(self.min, self.max, self.count)


@dataclass(frozen=True)
class SweepSpec:
    axes: tuple
    metrics: tuple = METRICS


_AXIS_NAMES = {f"params.{f.name}" for f in dataclasses.fields(ModelParams)} | {
    "noise.sigma1", "noise.sigma2", "noise.sigma",
}


def parse_sweep_spec(source) -> SweepSpec:
    """Parse ``{"axes": [{"name", "min", "max", "count", "spacing"}], "metrics": [...]}``."""
    doc = json.loads(source) if isinstance(source, (str, bytes)) else source
    _section(doc, "", {"axes", "metrics"})
    axes_doc = doc.get("axes")
    if not isinstance(axes_doc, list) or not 1 <= len(axes_doc) <= 2:
        raise ConfigError("axes", "expected one or two axes")
    axes = []
    for j, ax in enumerate(axes_doc):
        path = f"axes[{j}]"
        _section(ax, path, {"name", "min", "max", "count", "spacing"})
        name = ax.get("name")
        if name not in _AXIS_NAMES:
            raise ConfigError(f"{path}.name", f"unknown parameter {name!r}")
        count = _number(ax.get("count"), f"{path}.count", integer=True)
        if count < 2:
            raise ConfigError(f"{path}.count", "must be >= 2")
        spacing = ax.get("spacing", "linear")
        if spacing not in ("linear", "log"):
            raise ConfigError(f"{path}.spacing", "expected 'linear' or 'log'")
        lo = _number(ax.get("min"), f"{path}.min")
        hi = _number(ax.get("max"), f"{path}.max")
        if spacing == "log" and (lo <= 0 or hi <= 0):
            raise ConfigError(f"{path}.min", "log spacing needs positive bounds")
        axes.append(SweepAxis(name, lo, hi, count, spacing))
    metrics = doc.get("metrics", list(METRICS))
    if not isinstance(metrics, list) or not metrics or set(metrics) - set(METRICS):
        raise ConfigError("metrics", f"expected a non-empty subset of {list(METRICS)}")
    return SweepSpec(tuple(axes), tuple(metrics))


def apply_axis(config: RunConfig, name: str, value: float) -> RunConfig:
    """Return ``config`` with one swept parameter set to ``value``."""
    section, key = name.split(".", 1)
    if section == "params":
        return config.replace(params=config.params.replace(**{key: float(value)}))
    if key == "sigma":
        return config.replace(noise=NoiseParams(float(value), float(value)))
    sig = {"sigma1": config.noise.sigma1, "sigma2": config.noise.sigma2, key: float(value)}
    return config.replace(noise=NoiseParams(**sig))
