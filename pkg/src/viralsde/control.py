"""Stochastic optimal control of the treated model by forward-backward sweep.

Three controls act on the infection: ``u11`` boosts immune clearance of
infected cells, ``u12`` boosts clearance of virions, and ``u2`` (an
antiviral) lowers the viral burst rate.  The cost is

    J = E[ integral of I + B + a1 (u11^2 + u12^2) + a2 u2^2 dt ].

The sweep freezes a bundle of Wiener paths, integrates the state forward
under the current open-loop control field, integrates the adjoint equations
backward along each path on the same increments (terminal value zero,
constant adjoint noise coefficients), and replaces the control with a
relaxed projection of the Hamiltonian minimiser.
"""
from __future__ import annotations

import csv
import io
import math
import warnings
from dataclasses import dataclass, field
from typing import Iterable, Optional

import numpy as np

from .model import ModelParams, NoiseParams, controlled_drift, diffusion
from .simulate import TimeGrid, _integrate, path_seed, wiener_path

__all__ = [
    "ControlWeights",
    "ControlField",
    "AdjointState",
    "SweepConfig",
    "SweepResult",
    "ScenarioComparison",
    "SCENARIOS",
    "running_cost",
    "hamiltonian",
    "adjoint_drift",
    "adjoint_step_backward",
    "optimal_controls_pointwise",
    "forward_backward_sweep",
    "scenario_compare",
    "paired_difference",
]

# Which of (u11, u12, u2) each scenario is allowed to use.
SCENARIOS = {
    "none": (False, False, False),
    "immuno_only": (True, True, False),
    "antiviral_only": (False, False, True),
    "combined": (True, True, True),
}

DEFAULT_ADJOINT_N = (0.01, 0.02, 0.03)


@dataclass(frozen=True)
class ControlWeights:
    """Effort penalties and admissible upper bounds of the three controls.

    ``u2_max`` defaults to the baseline burst rate 0.24: a larger antiviral
    effect makes ``alpha - u2`` negative, i.e. infected cells would absorb
    virions.
    """

    a1: float = 10.0
    a2: float = 5.0
    u11_max: float = 1.0
    u12_max: float = 1.0
    u2_max: float = 0.24

    def __post_init__(self):
        for name in ("a1", "a2", "u11_max", "u12_max", "u2_max"):
            value = getattr(self, name)
            if not isinstance(value, (int, float)) or not math.isfinite(value) or value <= 0:
                raise ValueError(f"{name} must be a finite positive number, got {value!r}")

    @property
    def bounds(self) -> np.ndarray:
        return np.array([self.u11_max, self.u12_max, self.u2_max])


@dataclass
class ControlField:
    grid: TimeGrid
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (self.grid.n_steps + 1, 3):
            raise ValueError(f"control values have shape {self.values.shape}")

    def admissible(self, weights: ControlWeights) -> bool:
        return bool(np.all(self.values >= 0) and np.all(self.values <= weights.bounds))

    @classmethod
    def zeros(cls, grid: TimeGrid) -> "ControlField":
        return cls(grid, np.zeros((grid.n_steps + 1, 3)))


@dataclass(frozen=True)
class AdjointState:
    """Costate ``m`` and its (constant) noise coefficients ``n``."""

    m: tuple
    n: tuple = DEFAULT_ADJOINT_N


@dataclass(frozen=True)
class SweepConfig:
    relaxation: float = 0.5
    tolerance: float = 1e-3
    max_iterations: int = 100
    n_paths: int = 200
    base_seed: int = 0
    # halve the relaxation whenever the control change grows, down to this floor
    min_relaxation: float = 1 / 64

    def __post_init__(self):
        if not 0 < self.min_relaxation <= self.relaxation <= 1:
            raise ValueError("need 0 < min_relaxation <= relaxation <= 1")
        if not self.tolerance > 0:
            raise ValueError("tolerance must be positive")
        if self.max_iterations < 1 or self.n_paths < 1:
            raise ValueError("max_iterations and n_paths must be >= 1")


def running_cost(state, controls, weights: ControlWeights):
    x = np.asarray(state, dtype=float)
    u = np.asarray(controls, dtype=float)
    out = (
        x[..., 1]
        + x[..., 2]
        + weights.a1 * (u[..., 0] ** 2 + u[..., 1] ** 2)
        + weights.a2 * u[..., 2] ** 2
    )
    return float(out) if np.ndim(out) == 0 else out


def hamiltonian(state, controls, adjoint: AdjointState, params: ModelParams, noise: NoiseParams,
                weights: ControlWeights):
    """``<f(x, u), m> + L(x, u) + <g(x), n>``."""
    m = np.asarray(adjoint.m, dtype=float)
    n = np.asarray(adjoint.n, dtype=float)
    f = controlled_drift(state, controls, params)
    g = diffusion(state, noise)
    out = (f * m).sum(axis=-1) + running_cost(state, controls, weights) + (g * n).sum(axis=-1)
    return float(out) if np.ndim(out) == 0 else out


def adjoint_drift(m, state, controls, params: ModelParams, noise: NoiseParams, n):
    """``-dH/dx``: the dt-coefficient of the adjoint equations (vectorised)."""
    m = np.asarray(m, dtype=float)
    x = np.asarray(state, dtype=float)
    u = np.asarray(controls, dtype=float)
    n = np.asarray(n, dtype=float)
    m1, m2, m3 = m[..., 0], m[..., 1], m[..., 2]
    s, b = x[..., 0], x[..., 2]
    u11, u12, u2 = u[..., 0], u[..., 1], u[..., 2]
    beta = params.beta
    return np.stack(
        [
            m1 * (beta * b + params.mu) - m2 * beta * b + noise.sigma1 * n[..., 0],
            m2 * (params.p + u11 + params.mu) - m3 * (params.alpha - u2) + noise.sigma1 * n[..., 1] - 1.0,
            m1 * beta * s - m2 * beta * s + m3 * (params.q + params.mu1 + u12) + noise.sigma2 * n[..., 2] - 1.0,
        ],
        axis=-1,
    )


def _channel_increments(dw):
    dw = np.asarray(dw, dtype=float)
    return np.stack([dw[..., 0], dw[..., 0], dw[..., 1]], axis=-1)


def adjoint_step_backward(adjoint: AdjointState, state, controls, params: ModelParams,
                          noise: NoiseParams, dw, dt: float) -> AdjointState:
    """Step the costate from ``t + dt`` back to ``t``.

    Explicit in the later time: ``m(t) = m(t+dt) - drift * dt - n * dW`` with
    the drift evaluated at ``(m(t+dt), state, controls)``.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    m = np.asarray(adjoint.m, dtype=float)
    n = np.asarray(adjoint.n, dtype=float)
    m_prev = m - adjoint_drift(m, state, controls, params, noise, n) * dt - n * _channel_increments(dw)
    return AdjointState(tuple(m_prev.tolist()), adjoint.n)


def optimal_controls_pointwise(state, adjoint: AdjointState, weights: ControlWeights):
    """Hamiltonian minimiser projected onto the admissible box."""
    x = np.asarray(state, dtype=float)
    m = np.asarray(adjoint.m, dtype=float)
    raw = np.stack(
        [
            m[..., 1] * x[..., 1] / (2 * weights.a1),
            m[..., 2] * x[..., 2] / (2 * weights.a1),
            m[..., 2] * x[..., 1] / (2 * weights.a2),
        ],
        axis=-1,
    )
    return np.clip(raw, 0.0, weights.bounds)


@dataclass
class SweepResult:
    scenario: str
    control: ControlField
    states: np.ndarray
    state_mean: np.ndarray
    adjoint_mean: np.ndarray
    path_costs: np.ndarray
    iterations: int
    convergence_history: list = field(default_factory=list)
    converged: bool = True

    @property
    def cost(self) -> float:
        return float(self.path_costs.mean())

    @property
    def cost_se(self) -> float:
        n = len(self.path_costs)
        return float(self.path_costs.std(ddof=1) / math.sqrt(n)) if n > 1 else 0.0

    def to_dict(self, every: int = 1) -> dict:
        idx = slice(None, None, every)
        return {
            "scenario": self.scenario,
            "converged": self.converged,
            "iterations": self.iterations,
            "convergence_history": list(self.convergence_history),
            "cost": self.cost,
            "cost_se": self.cost_se,
            "t": self.control.grid.times[idx].tolist(),
            "u11": self.control.values[idx, 0].tolist(),
            "u12": self.control.values[idx, 1].tolist(),
            "u2": self.control.values[idx, 2].tolist(),
        }


def _bundle(grid: TimeGrid, config: SweepConfig) -> np.ndarray:
    return np.stack(
        [wiener_path(grid, path_seed(config.base_seed, k)).increments for k in range(config.n_paths)]
    )


def _backward(states, u, dw, dt, params, noise, n):
    """Costate paths on the bundle, shape like ``states``; ``m(T) = 0`` exactly."""
    m = np.zeros_like(states)
    n = np.asarray(n, dtype=float)
    noise_term = n * _channel_increments(dw)
    for k in range(states.shape[1] - 2, -1, -1):
        nxt = m[:, k + 1]
        m[:, k] = nxt - adjoint_drift(nxt, states[:, k + 1], u[k + 1], params, noise, n) * dt - noise_term[:, k]
    return m


def _costs(states, u, weights, dt):
    lc = running_cost(states[:, :-1], u[None, :-1], weights)
    return lc.sum(axis=1) * dt


def _relative_change(new, old) -> float:
    scale = np.max(np.abs(new))
    diff = np.max(np.abs(new - old))
    if diff == 0:
        return 0.0
    return float(diff / scale) if scale > 0 else math.inf


def forward_backward_sweep(
    initial,
    grid: TimeGrid,
    params: ModelParams,
    noise: NoiseParams,
    weights: ControlWeights,
    adjoint_n=DEFAULT_ADJOINT_N,
    config: SweepConfig = SweepConfig(),
    active=(True, True, True),
    initial_control: Optional[ControlField] = None,
    increments: Optional[np.ndarray] = None,
    scenario: str = "combined",
) -> SweepResult:
    """Iterate forward state / backward costate / relaxed control update to a fixed point.

    Parameters
    ----------
    active : three booleans
        Controls switched off here stay identically zero.
    increments : ndarray, shape (n_paths, n_steps, 2), optional
        Frozen Wiener bundle; by default drawn from ``config.base_seed``.

    Notes
    -----
    The control is open-loop (one field shared by every path), so its
    first-order condition involves the bundle averages ``E[m2 I]``,
    ``E[m3 B]`` and ``E[m3 I]``.  Convergence is declared when the sup-norm
    change of the relaxed field, relative to its sup-norm, drops below
    ``config.tolerance``.  If it never does, the last iterate is returned
    with ``converged=False``.
    """
    active = np.asarray(active, dtype=bool)
    if active[2] and weights.u2_max > params.alpha:
        warnings.warn(
            f"u2_max={weights.u2_max} exceeds alpha={params.alpha}: the burst term can turn negative",
            RuntimeWarning,
            stacklevel=2,
        )
    dw = _bundle(grid, config) if increments is None else np.asarray(increments, dtype=float)
    n_paths = dw.shape[0]
    x0 = np.tile(np.asarray(initial, dtype=float), (n_paths, 1))
    u = np.zeros((grid.n_steps + 1, 3)) if initial_control is None else np.array(initial_control.values)
    u[:, ~active] = 0.0
    bounds = weights.bounds
    theta = config.relaxation

    history = []
    converged = not active.any()
    iterations = 0
    states, _, _ = _integrate(x0, dw, grid.dt, params, noise, u)
    m = np.zeros_like(states)
    if active.any():
        for iterations in range(1, config.max_iterations + 1):
            m = _backward(states, u, dw, grid.dt, params, noise, adjoint_n)
            raw = np.stack(
                [
                    (m[..., 1] * states[..., 1]).mean(axis=0) / (2 * weights.a1),
                    (m[..., 2] * states[..., 2]).mean(axis=0) / (2 * weights.a1),
                    (m[..., 2] * states[..., 1]).mean(axis=0) / (2 * weights.a2),
                ],
                axis=-1,
            )
            target = np.clip(raw, 0.0, bounds)
            target[:, ~active] = 0.0
            new = np.clip(theta * target + (1 - theta) * u, 0.0, bounds)
            change = _relative_change(new, u)
            if history and change > history[-1]:
                theta = max(theta / 2, config.min_relaxation)
            history.append(change)
            u = new
            states, _, _ = _integrate(x0, dw, grid.dt, params, noise, u)
            if change < config.tolerance:
                converged = True
                break
        m = _backward(states, u, dw, grid.dt, params, noise, adjoint_n)
    return SweepResult(
        scenario=scenario,
        control=ControlField(grid, u),
        states=states,
        state_mean=states.mean(axis=0),
        adjoint_mean=m.mean(axis=0),
        path_costs=_costs(states, u, weights, grid.dt),
        iterations=iterations,
        convergence_history=history,
        converged=converged,
    )


def paired_difference(a: SweepResult, b: SweepResult) -> tuple[float, float]:
    """Mean and standard error of ``J(a) - J(b)`` on a shared path bundle."""
    d = a.path_costs - b.path_costs
    se = d.std(ddof=1) / math.sqrt(len(d)) if len(d) > 1 else 0.0
    return float(d.mean()), float(se)


@dataclass
class ScenarioComparison:
    grid: TimeGrid
    results: dict

    @property
    def converged(self) -> bool:
        return all(r.converged for r in self.results.values())

    def to_csv(self, target=None) -> str:
        """``t,B_<scenario>...,I_<scenario>...`` of the ensemble-mean curves."""
        names = list(self.results)
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["t"] + [f"B_{_short(s)}" for s in names] + [f"I_{_short(s)}" for s in names])
        cols = [self.grid.times]
        cols += [self.results[s].state_mean[:, 2] for s in names]
        cols += [self.results[s].state_mean[:, 1] for s in names]
        for row in np.column_stack(cols):
            writer.writerow([repr(float(v)) for v in row])
        text = buf.getvalue()
        if target is not None:
            with open(target, "w", newline="") as fh:
                fh.write(text)
        return text

    def to_dict(self, every: int = 1) -> dict:
        return {name: r.to_dict(every) for name, r in self.results.items()}


def _short(name: str) -> str:
    return {"immuno_only": "immuno", "antiviral_only": "antiviral"}.get(name, name)


def scenario_compare(
    initial,
    grid: TimeGrid,
    params: ModelParams,
    noise: NoiseParams,
    weights: ControlWeights,
    scenarios: Iterable[str] = tuple(SCENARIOS),
    adjoint_n=DEFAULT_ADJOINT_N,
    config: SweepConfig = SweepConfig(),
) -> ScenarioComparison:
    """Solve each scenario on one common Wiener bundle."""
    scenarios = list(scenarios)
    if not scenarios:
        raise ValueError("at least one scenario is required")
    unknown = set(scenarios) - set(SCENARIOS)
    if unknown:
        raise ValueError(f"unknown scenarios {sorted(unknown)}")
    dw = _bundle(grid, config)
    results = {}
    for name in scenarios:
        results[name] = forward_backward_sweep(
            initial, grid, params, noise, weights, adjoint_n, config,
            active=SCENARIOS[name], increments=dw, scenario=name,
        )
    return ScenarioComparison(grid, results)
