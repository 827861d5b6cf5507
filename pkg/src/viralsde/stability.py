"""Closed-form extinction, boundedness and permanence criteria."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

from .model import ModelParams, NoiseParams

__all__ = [
    "Inequality",
    "StabilityMatrix",
    "StabilityReport",
    "condition_a",
    "condition_b",
    "stability_matrix",
    "eigen2",
    "stability_report",
]


@dataclass(frozen=True)
class Inequality:
    """A strict inequality ``lhs < rhs`` with its verdict."""

    lhs: float
    rhs: float

    @property
    def holds(self) -> bool:
        return self.lhs < self.rhs

    def to_dict(self) -> dict:
        return {"lhs": self.lhs, "rhs": self.rhs, "holds": self.holds}


@dataclass(frozen=True)
class StabilityMatrix:
    """Symmetric 2x2 matrix ``[[d1, b], [b, d2]]`` bounding the (I, B) Lyapunov drift."""

    d1: float
    d2: float
    b: float

    def as_array(self):
        return [[self.d1, self.b], [self.b, self.d2]]


def _excess(params: ModelParams) -> float:
    # alpha + beta*omega/mu - (p + q + mu + mu1): shared by condition A, B and the off-diagonal
    return (params.alpha + params.beta * params.omega / params.mu) - (
        params.p + params.q + params.mu + params.mu1
    )


def stability_matrix(params: ModelParams, noise: NoiseParams) -> StabilityMatrix:
    d1 = 2 * (params.alpha - params.p - params.mu) - noise.sigma1**2
    d2 = (
        2 * params.beta * params.omega / params.mu
        - 2 * (params.q + params.mu1)
        - noise.sigma2**2
    )
    return StabilityMatrix(d1=d1, d2=d2, b=_excess(params))


def condition_a(params: ModelParams, noise: NoiseParams) -> Inequality:
    return Inequality(_excess(params), (noise.sigma1**2 + noise.sigma2**2) / 2)


def condition_b(params: ModelParams, noise: NoiseParams) -> Inequality:
    """Condition B exactly as stated: the off-diagonal (not its square) against ``d1 * d2``.

    Negative definiteness needs ``b**2 < d1 * d2`` instead; see
    :attr:`StabilityReport.condition_b_consistent`.
    """
    m = stability_matrix(params, noise)
    return Inequality(m.b, m.d1 * m.d2)


def eigen2(matrix: StabilityMatrix) -> tuple[float, float]:
    """Eigenvalues of a symmetric 2x2 matrix, ascending."""
    tr = matrix.d1 + matrix.d2
    det = matrix.d1 * matrix.d2 - matrix.b**2
    # (d1 - d2)^2 + 4 b^2 equals tr^2 - 4 det without the cancellation
    root = math.sqrt((matrix.d1 - matrix.d2) ** 2 + 4 * matrix.b**2)
    # large-magnitude root first, the other from the product
    big = (tr - root) / 2 if tr <= 0 else (tr + root) / 2
    small = det / big if big != 0.0 else 0.0
    return (min(big, small), max(big, small))


@dataclass(frozen=True)
class StabilityReport:
    condition_a: Inequality
    condition_b: Inequality
    matrix: StabilityMatrix
    eigenvalues: tuple[float, float]
    epsilon: float
    boundedness_limit: float
    chebyshev_k: float
    permanence_h: float
    permanence_rho: float
    permanence_xi: float

    @property
    def negative_definite(self) -> bool:
        return self.eigenvalues[1] < 0

    @property
    def decay_rate_bound(self) -> Optional[float]:
        """``|lambda_max| / 4`` when the matrix is negative definite."""
        if not self.negative_definite:
            return None
        return abs(self.eigenvalues[1]) / 4

    @property
    def condition_b_consistent(self) -> bool:
        """Whether the stated A-and-B verdict agrees with eigen-based definiteness."""
        stated = (
            self.condition_a.holds
            and self.condition_b.holds
            and self.matrix.d1 < 0
            and self.matrix.d2 < 0
        )
        return stated == self.negative_definite

    def to_dict(self) -> dict:
        return {
            "condition_a": self.condition_a.to_dict(),
            "condition_b": self.condition_b.to_dict(),
            "condition_b_consistent": self.condition_b_consistent,
            "matrix": {"d1": self.matrix.d1, "d2": self.matrix.d2, "b": self.matrix.b},
            "eigenvalues": list(self.eigenvalues),
            "negative_definite": self.negative_definite,
            "decay_rate_bound": self.decay_rate_bound,
            "epsilon": self.epsilon,
            "boundedness_limit": self.boundedness_limit,
            "chebyshev_k": self.chebyshev_k,
            "permanence_h": self.permanence_h,
            "permanence_rho": self.permanence_rho,
            "permanence_xi": self.permanence_xi,
        }


def stability_report(params: ModelParams, noise: NoiseParams, epsilon: float = 0.05) -> StabilityReport:
    """Evaluate every analytic criterion for one parameter set.

    Parameters
    ----------
    epsilon : float in (0, 1)
        Tail probability used for the Chebyshev boundedness radius
        ``sqrt(3) * omega / epsilon`` and for the permanence annulus
        ``[1 / (sqrt(3) rho), rho]`` with ``rho = H / epsilon``.
    """
    if not 0 < epsilon < 1:
        raise ValueError(f"epsilon must lie in (0, 1), got {epsilon}")
    m = stability_matrix(params, noise)
    limit = math.sqrt(3) * params.omega
    h = params.omega / params.mu
    rho = h / epsilon
    return StabilityReport(
        condition_a=condition_a(params, noise),
        condition_b=condition_b(params, noise),
        matrix=m,
        eigenvalues=eigen2(m),
        epsilon=epsilon,
        boundedness_limit=limit,
        chebyshev_k=limit / epsilon,
        permanence_h=h,
        permanence_rho=rho,
        permanence_xi=1 / (math.sqrt(3) * rho),
    )
