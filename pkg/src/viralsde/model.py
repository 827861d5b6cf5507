"""Within-host SARS-CoV-2 model: parameters, drift/diffusion and closed-form quantities.

The state is ``(S, I, B)``: susceptible cells, infected cells and free virions.
All functions accept either a single state or an array whose last axis has
length 3, so the same code path serves one trajectory and a whole ensemble.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, fields
from typing import NamedTuple, Optional

import numpy as np

__all__ = [
    "ModelParams",
    "NoiseParams",
    "SimState",
    "DeterministicSummary",
    "InvalidControlError",
    "TABLE2",
    "EXAMPLE2",
    "drift",
    "diffusion",
    "controlled_drift",
    "reproduction_number",
    "equilibria",
    "lemma_gap",
    "feasible_region_violations",
]

# Index of the Wiener channel driving each compartment: S and I share W1.
CHANNELS = (0, 0, 1)


class InvalidControlError(ValueError):
    """A control value lies outside its admissible interval."""


@dataclass(frozen=True)
class ModelParams:
    """Deterministic rates of the model, all per day.

    ``beta`` and ``alpha`` may be zero (a model without infection); the
    remaining rates appear in denominators and must be strictly positive.
    """

    omega: float = 10.0
    beta: float = 0.005
    mu: float = 0.1
    mu1: float = 0.6
    alpha: float = 0.24
    p: float = 0.795
    q: float = 0.28

    def __post_init__(self):
        for f in fields(self):
            value = getattr(self, f.name)
            if not isinstance(value, (int, float)) or not math.isfinite(value):
                raise ValueError(f"{f.name} must be a finite number, got {value!r}")
            if f.name in ("beta", "alpha"):
                if value < 0:
                    raise ValueError(f"{f.name} must be non-negative, got {value}")
            elif value <= 0:
                raise ValueError(f"{f.name} must be strictly positive, got {value}")

    def replace(self, **changes) -> "ModelParams":
        data = {f.name: getattr(self, f.name) for f in fields(self)}
        data.update(changes)
        return ModelParams(**data)


@dataclass(frozen=True)
class NoiseParams:
    """Intensities of the environmental noise on cell and virion mortality."""

    sigma1: float = 0.0
    sigma2: float = 0.0

    def __post_init__(self):
        for name in ("sigma1", "sigma2"):
            value = getattr(self, name)
            if not isinstance(value, (int, float)) or not math.isfinite(value) or value < 0:
                raise ValueError(f"{name} must be a finite non-negative number, got {value!r}")

    @property
    def is_deterministic(self) -> bool:
        return self.sigma1 == 0 and self.sigma2 == 0


class SimState(NamedTuple):
    s: float
    i: float
    b: float


# Baseline rates, and the R0 > 1 variant used for the persistence runs.
TABLE2 = ModelParams()
EXAMPLE2 = ModelParams(beta=0.05, mu=0.1, mu1=0.1)


@dataclass(frozen=True)
class DeterministicSummary:
    r0: float
    e0: SimState
    e1: Optional[SimState]

    def to_dict(self) -> dict:
        return {
            "r0": self.r0,
            "e0": list(self.e0),
            "e1": None if self.e1 is None else list(self.e1),
        }


def drift(state, params: ModelParams) -> np.ndarray:
    """Deterministic rates ``(dS/dt, dI/dt, dB/dt)`` of the uncontrolled model."""
    x = np.asarray(state, dtype=float)
    s, i, b = x[..., 0], x[..., 1], x[..., 2]
    infection = params.beta * s * b
    return np.stack(
        [
            params.omega - infection - params.mu * s,
            infection - params.p * i - params.mu * i,
            params.alpha * i - params.q * b - params.mu1 * b,
        ],
        axis=-1,
    )


def diffusion(state, noise: NoiseParams) -> np.ndarray:
    """Noise coefficients ``(-sigma1 S, -sigma1 I, -sigma2 B)``.

    The coefficients pair with the Wiener channels in :data:`CHANNELS`: S and
    I are both driven by W1, B by W2.
    """
    x = np.asarray(state, dtype=float)
    sig = np.array([noise.sigma1, noise.sigma1, noise.sigma2])
    return -sig * x


def _check_controls(u, bounds):
    u = np.asarray(u, dtype=float)
    if np.any(u < 0) or not np.all(np.isfinite(u)):
        raise InvalidControlError(f"controls must be finite and non-negative, got {u}")
    if bounds is not None and np.any(u > np.asarray(bounds, dtype=float)):
        raise InvalidControlError(f"controls {u} exceed their upper bounds {bounds}")
    return u


def controlled_drift(state, controls, params: ModelParams, bounds=None) -> np.ndarray:
    """Drift of the treated model.

    Parameters
    ----------
    state : array_like, shape (..., 3)
    controls : array_like, shape (..., 3)
        ``(u11, u12, u2)``: immune clearance boost of infected cells, immune
        clearance boost of virions, and antiviral reduction of the burst rate.
    bounds : array_like of 3 floats, optional
        Upper admissible values; controls above them raise
        :class:`InvalidControlError`.
    """
    u = _check_controls(controls, bounds)
    x, u = np.broadcast_arrays(np.asarray(state, dtype=float), u)
    f = drift(x, params)
    i, b = x[..., 1], x[..., 2]
    u11, u12, u2 = u[..., 0], u[..., 1], u[..., 2]
    f[..., 1] = f[..., 1] - u11 * i
    f[..., 2] = f[..., 2] - u2 * i - u12 * b
    return f


def reproduction_number(params: ModelParams) -> float:
    """Basic reproduction number of the noise-free model."""
    return (
        params.beta
        * params.alpha
        * params.omega
        / (params.mu * (params.p + params.mu) * (params.q + params.mu1))
    )


def equilibria(params: ModelParams) -> DeterministicSummary:
    r0 = reproduction_number(params)
    e0 = SimState(params.omega / params.mu, 0.0, 0.0)
    e1 = None
    if r0 > 1:
        ab = params.alpha * params.beta
        e1 = SimState(
            (params.p + params.mu) * (params.q + params.mu1) / ab,
            params.mu * (params.mu1 + params.q) * (r0 - 1) / ab,
            params.mu * (r0 - 1) / params.beta,
        )
    return DeterministicSummary(r0=r0, e0=e0, e1=e1)


def lemma_gap(u):
    """Slack in ``u <= 2(u + 1 - ln u) - (4 - 2 ln 2)``; zero only at ``u = 2``."""
    u = np.asarray(u, dtype=float)
    if np.any(u <= 0):
        raise ValueError("lemma_gap is defined for u > 0 only")
    out = 2.0 * (u + 1.0 - np.log(u)) - (4.0 - 2.0 * math.log(2.0)) - u
    return float(out) if out.ndim == 0 else out


def feasible_region_violations(states, n_max=None, b_max=None) -> dict:
    """Count samples with ``S + I > n_max`` or ``B > b_max``.

    Both bounds are optional diagnostics; unset bounds are never violated.
    """
    x = np.asarray(states, dtype=float)
    cells = 0 if n_max is None else int(np.count_nonzero(x[..., 0] + x[..., 1] > n_max))
    virions = 0 if b_max is None else int(np.count_nonzero(x[..., 2] > b_max))
    return {"cells": cells, "virions": virions}
