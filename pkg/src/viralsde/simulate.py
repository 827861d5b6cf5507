"""Euler-Maruyama integration of the stochastic within-host model.

Every path draws its Wiener increments from its own generator, seeded by
``SeedSequence(base_seed, spawn_key=(k,))`` for path ``k``.  An ensemble is
therefore reproducible and independent of batching or execution order, and
any single path can be regenerated on its own with :func:`path_seed`.
"""
from __future__ import annotations

import csv
import io
import math
import warnings
from dataclasses import dataclass, field
from typing import Optional, Sequence, Union

import numpy as np

from .model import ModelParams, NoiseParams, SimState, InvalidControlError

__all__ = [
    "TimeGrid",
    "WienerPath",
    "Trajectory",
    "EnsembleStats",
    "Ensemble",
    "SHistogram",
    "ConvergenceResult",
    "ResolutionWarning",
    "path_seed",
    "wiener_path",
    "em_step",
    "simulate_path",
    "run_ensemble",
    "lyapunov_estimate",
    "stationary_s_histogram",
    "self_convergence",
]

# Clamp events above this fraction of steps mean dt is too coarse for the noise level.
CLAMP_WARN_RATE = 0.01


class ResolutionWarning(UserWarning):
    """Too many negative excursions were truncated at zero."""


@dataclass(frozen=True)
class TimeGrid:
    t0: float = 0.0
    t_end: float = 100.0
    dt: float = 0.01

    def __post_init__(self):
        if not (self.dt > 0 and math.isfinite(self.dt)):
            raise ValueError(f"dt must be positive, got {self.dt}")
        span = self.t_end - self.t0
        n = round(span / self.dt)
        if n < 1:
            raise ValueError("time grid needs at least one step")
        if abs(self.t0 + n * self.dt - self.t_end) > 1e-9 * max(1.0, abs(self.t_end)):
            raise ValueError(f"dt={self.dt} does not divide [{self.t0}, {self.t_end}]")

    @property
    def n_steps(self) -> int:
        return round((self.t_end - self.t0) / self.dt)

    @property
    def horizon(self) -> float:
        return self.t_end - self.t0

    @property
    def times(self) -> np.ndarray:
        return self.t0 + self.dt * np.arange(self.n_steps + 1)

    def refined(self, factor: int = 2) -> "TimeGrid":
        return TimeGrid(self.t0, self.t_end, self.dt / factor)


SeedLike = Union[int, np.random.SeedSequence]


def path_seed(base_seed: int, k: int) -> np.random.SeedSequence:
    """Seed of path ``k`` in an ensemble started from ``base_seed``."""
    return np.random.SeedSequence(base_seed, spawn_key=(k,))


def _rng(seed: SeedLike) -> np.random.Generator:
    return np.random.default_rng(seed)


@dataclass(frozen=True)
class WienerPath:
    """Increments ``(dW1, dW2)`` per step, shape ``(n_steps, 2)``."""

    increments: np.ndarray
    seed: SeedLike


def wiener_path(grid: TimeGrid, seed: SeedLike) -> WienerPath:
    dw = _rng(seed).standard_normal((grid.n_steps, 2)) * math.sqrt(grid.dt)
    return WienerPath(dw, seed)


def _advance(x, u, params: ModelParams, noise: NoiseParams, dw, dt):
    """One unclamped Euler-Maruyama update for an array of states (..., 3)."""
    s, i, b = x[..., 0], x[..., 1], x[..., 2]
    infection = params.beta * s * b
    fs = params.omega - infection - params.mu * s
    fi = infection - params.p * i - params.mu * i
    fb = params.alpha * i - params.q * b - params.mu1 * b
    if u is not None:
        fi = fi - u[..., 0] * i
        fb = fb - u[..., 2] * i - u[..., 1] * b
    dw1, dw2 = dw[..., 0], dw[..., 1]
    # S and I share the channel W1
    return np.stack(
        [
            s + fs * dt - noise.sigma1 * s * dw1,
            i + fi * dt - noise.sigma1 * i * dw1,
            b + fb * dt - noise.sigma2 * b * dw2,
        ],
        axis=-1,
    )


def em_step(state, controls, params: ModelParams, noise: NoiseParams, dw, dt: float):
    """Advance one Euler-Maruyama step and truncate negative components at zero.

    Returns
    -------
    state : SimState or ndarray
        ``SimState`` for a single state, an array for a batch.
    clamp_events : int
        Number of components that were truncated.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    x = np.asarray(state, dtype=float)
    u = None
    if controls is not None:
        u = np.asarray(controls, dtype=float)
        if np.any(u < 0):
            raise InvalidControlError(f"negative control {u}")
    y = _advance(x, u, params, noise, np.asarray(dw, dtype=float), dt)
    negative = y < 0
    n_clamped = int(np.count_nonzero(negative))
    if n_clamped:
        y = np.where(negative, 0.0, y)
    if y.ndim == 1:
        return SimState(*y.tolist()), n_clamped
    return y, n_clamped


def _control_values(controls, grid: TimeGrid) -> Optional[np.ndarray]:
    if controls is None:
        return None
    values = np.asarray(getattr(controls, "values", controls), dtype=float)
    if values.shape != (grid.n_steps + 1, 3):
        raise ValueError(
            f"control field has shape {values.shape}, expected {(grid.n_steps + 1, 3)}"
        )
    if np.any(values < 0):
        raise InvalidControlError("control field has negative entries")
    return values


def _integrate(x0, dw, dt, params, noise, controls=None, record_every=1):
    """Integrate a batch of paths.

    Parameters
    ----------
    x0 : ndarray, shape (n, 3)
    dw : ndarray, shape (n, n_steps, 2)
    controls : ndarray, shape (n_steps + 1, 3), optional

    Returns
    -------
    records : ndarray, shape (n, n_steps // record_every + 1, 3)
        States at every ``record_every``-th grid point (the final point is
        always included).
    clamps : ndarray of int, shape (n,)
    integral : ndarray, shape (n, 3)
        Left Riemann sum of each component over the grid.
    """
    n_paths, n_steps, _ = dw.shape
    rec_idx = _record_indices(n_steps, record_every)
    records = np.empty((n_paths, len(rec_idx), 3))
    clamps = np.zeros(n_paths, dtype=np.int64)
    integral = np.zeros((n_paths, 3))
    x = np.array(x0, dtype=float)
    records[:, 0] = x
    slot = 1
    for n in range(n_steps):
        integral += x
        u = None if controls is None else controls[n]
        y = _advance(x, u, params, noise, dw[:, n], dt)
        negative = y < 0
        if negative.any():
            clamps += negative.sum(axis=1)
            y[negative] = 0.0
        x = y
        if slot < len(rec_idx) and rec_idx[slot] == n + 1:
            records[:, slot] = x
            slot += 1
    return records, clamps, integral * dt


def _record_indices(n_steps: int, record_every: int) -> np.ndarray:
    if record_every < 1:
        raise ValueError("record_every must be >= 1")
    idx = np.arange(0, n_steps + 1, record_every)
    if idx[-1] != n_steps:
        idx = np.append(idx, n_steps)
    return idx


def _warn_clamps(clamps, n_steps):
    rate = float(np.max(clamps)) / n_steps if len(clamps) else 0.0
    if rate > CLAMP_WARN_RATE:
        warnings.warn(
            f"{rate:.2%} of steps were truncated at zero on the worst path; reduce dt",
            ResolutionWarning,
            stacklevel=3,
        )
    return rate


@dataclass
class Trajectory:
    grid: TimeGrid
    states: np.ndarray
    clamp_events: int = 0
    controls: Optional[np.ndarray] = None
    seed: Optional[SeedLike] = None

    @property
    def times(self) -> np.ndarray:
        return self.grid.times

    def to_csv(self, target=None) -> str:
        """Write ``t,S,I,B[,u11,u12,u2]`` rows at full precision; returns the text."""
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        header = ["t", "S", "I", "B"]
        cols = [self.times[:, None], self.states]
        if self.controls is not None:
            header += ["u11", "u12", "u2"]
            cols.append(self.controls)
        writer.writerow(header)
        for row in np.hstack(cols):
            writer.writerow([repr(float(v)) for v in row])
        text = buf.getvalue()
        if target is not None:
            with open(target, "w", newline="") as fh:
                fh.write(text)
        return text


def simulate_path(
    initial,
    grid: TimeGrid,
    params: ModelParams,
    noise: NoiseParams,
    seed: SeedLike = 0,
    controls=None,
    increments: Optional[np.ndarray] = None,
) -> Trajectory:
    """Integrate one path on ``grid``.

    ``increments`` overrides the seeded Wiener path (shape ``(n_steps, 2)``).
    """
    u = _control_values(controls, grid)
    if increments is None:
        increments = wiener_path(grid, seed).increments
    elif increments.shape != (grid.n_steps, 2):
        raise ValueError(f"increments have shape {increments.shape}, expected {(grid.n_steps, 2)}")
    x0 = np.asarray(initial, dtype=float).reshape(1, 3)
    if np.any(x0 < 0):
        raise ValueError("initial state must be non-negative")
    records, clamps, _ = _integrate(x0, increments[None], grid.dt, params, noise, u)
    _warn_clamps(clamps, grid.n_steps)
    return Trajectory(grid, records[0], int(clamps[0]), u, seed)


def _lyapunov_values(start_sum, end_sum, horizon):
    with np.errstate(divide="ignore"):
        return np.log(end_sum / start_sum) / horizon


def lyapunov_estimate(trajectory: Trajectory) -> float:
    """Endpoint growth rate ``ln((I+B)(T) / (I+B)(t0)) / (T - t0)``.

    Returns ``-inf`` when ``I + B`` has reached exactly zero (extinct below
    floating-point resolution).
    """
    start = trajectory.states[0, 1] + trajectory.states[0, 2]
    if start <= 0:
        raise ValueError("I + B is zero at the initial time; growth rate undefined")
    end = trajectory.states[-1, 1] + trajectory.states[-1, 2]
    return float(_lyapunov_values(start, end, trajectory.grid.horizon))


@dataclass
class SHistogram:
    counts: np.ndarray
    edges: np.ndarray
    mean: float
    std: float

    def to_dict(self) -> dict:
        return {
            "counts": self.counts.tolist(),
            "edges": self.edges.tolist(),
            "mean": self.mean,
            "std": self.std,
        }


def _s_histogram(times, samples, tail_fraction, bins) -> SHistogram:
    if not 0 < tail_fraction <= 1:
        raise ValueError("tail_fraction must lie in (0, 1]")
    t0, t_end = times[0], times[-1]
    mask = times >= t_end - tail_fraction * (t_end - t0) - 1e-12
    s = samples[:, mask, 0].ravel()
    counts, edges = np.histogram(s, bins=bins)
    return SHistogram(counts, edges, float(s.mean()), float(s.std()))


@dataclass
class EnsembleStats:
    times: np.ndarray
    mean: np.ndarray
    variance: np.ndarray
    quantiles: dict
    extinction_probability: float
    extinction_threshold: float
    lyapunov: Optional[np.ndarray]
    time_average: np.ndarray
    s_histogram: SHistogram
    clamp_events: int
    max_clamp_rate: float
    n_paths: int
    base_seed: int

    @property
    def lyapunov_mean(self) -> Optional[float]:
        if self.lyapunov is None:
            return None
        finite = self.lyapunov[np.isfinite(self.lyapunov)]
        return float(finite.mean()) if finite.size else -math.inf

    @property
    def lyapunov_max(self) -> Optional[float]:
        return None if self.lyapunov is None else float(np.max(self.lyapunov))

    def to_dict(self) -> dict:
        def _num(v):
            return None if v is None else (v if math.isfinite(v) else str(v))

        return {
            "n_paths": self.n_paths,
            "base_seed": self.base_seed,
            "seed_derivation": "SeedSequence(base_seed, spawn_key=(k,))",
            "checkpoints": self.times.tolist(),
            "mean": self.mean.tolist(),
            "variance": self.variance.tolist(),
            "quantiles": {str(q): v.tolist() for q, v in self.quantiles.items()},
            "extinction_probability": self.extinction_probability,
            "extinction_threshold": self.extinction_threshold,
            "lyapunov": {"mean": _num(self.lyapunov_mean), "max": _num(self.lyapunov_max)},
            "time_average": self.time_average.tolist(),
            "s_histogram": self.s_histogram.to_dict(),
            "clamp_events": self.clamp_events,
            "max_clamp_rate": self.max_clamp_rate,
        }


@dataclass
class Ensemble:
    """Statistics of a run plus whatever trajectories the retention policy kept.

    ``samples`` holds the retained paths at the checkpoint times, shape
    ``(len(retained), n_checkpoints, 3)``; ``terminal`` holds every path's
    final state.
    """

    stats: EnsembleStats
    terminal: np.ndarray
    retained: np.ndarray
    samples: Optional[np.ndarray]
    initial: np.ndarray
    grid: TimeGrid
    params: ModelParams
    noise: NoiseParams
    controls: Optional[np.ndarray] = None

    def trajectory(self, k: int) -> Trajectory:
        """Regenerate path ``k`` at full grid resolution from its seed."""
        return simulate_path(
            self.initial, self.grid, self.params, self.noise,
            seed=path_seed(self.stats.base_seed, k), controls=self.controls,
        )

    def tail_probability(self, radius: float) -> float:
        """Fraction of paths with Euclidean norm above ``radius`` at the final time."""
        return float(np.mean(np.linalg.norm(self.terminal, axis=1) > radius))

    def annulus_probability(self, inner: float, outer: float) -> float:
        norms = np.linalg.norm(self.terminal, axis=1)
        return float(np.mean((norms >= inner) & (norms <= outer)))


def _retained_indices(retention, n_paths: int) -> np.ndarray:
    if retention in ("stats_only", None):
        return np.arange(0)
    if retention == "all":
        return np.arange(n_paths)
    if isinstance(retention, tuple) and retention[0] == "thinned":
        step = int(retention[1])
        if step < 1:
            raise ValueError("thinning step must be >= 1")
        return np.arange(0, n_paths, step)
    raise ValueError(f"unknown retention policy {retention!r}")


def run_ensemble(
    initial,
    grid: TimeGrid,
    params: ModelParams,
    noise: NoiseParams,
    n_paths: int = 500,
    base_seed: int = 0,
    controls=None,
    retention="stats_only",
    extinction_threshold: float = 0.01,
    quantiles: Sequence[float] = (0.05, 0.5, 0.95),
    record_every: Optional[int] = None,
    tail_fraction: float = 0.5,
    bins: int = 30,
    batch_size: int = 500,
) -> Ensemble:
    """Simulate ``n_paths`` independent paths and summarise them.

    Statistics are taken at checkpoints every ``record_every`` steps
    (default: at most about 1000 checkpoints).  ``retention`` is
    ``"stats_only"``, ``"all"`` or ``("thinned", k)`` for every k-th path.
    """
    if n_paths < 1:
        raise ValueError("n_paths must be >= 1")
    u = _control_values(controls, grid)
    n_steps = grid.n_steps
    if record_every is None:
        record_every = max(1, n_steps // 1000)
    x0 = np.asarray(initial, dtype=float)
    if x0.shape != (3,) or np.any(x0 < 0):
        raise ValueError("initial state must be three non-negative numbers")
    keep = _retained_indices(retention, n_paths)

    chunks, clamps, integrals = [], [], []
    for start in range(0, n_paths, batch_size):
        ks = range(start, min(start + batch_size, n_paths))
        dw = np.stack([wiener_path(grid, path_seed(base_seed, k)).increments for k in ks])
        rec, cl, integ = _integrate(np.tile(x0, (len(ks), 1)), dw, grid.dt, params, noise, u, record_every)
        chunks.append(rec)
        clamps.append(cl)
        integrals.append(integ)
    records = np.concatenate(chunks)
    clamps = np.concatenate(clamps)
    integrals = np.concatenate(integrals)
    rate = _warn_clamps(clamps, n_steps)

    times = grid.times[_record_indices(n_steps, record_every)]
    terminal = records[:, -1]
    start_sum = x0[1] + x0[2]
    lyap = None
    if start_sum > 0:
        lyap = _lyapunov_values(start_sum, terminal[:, 1] + terminal[:, 2], grid.horizon)
    stats = EnsembleStats(
        times=times,
        mean=records.mean(axis=0),
        variance=records.var(axis=0),
        quantiles={q: np.quantile(records, q, axis=0) for q in quantiles},
        extinction_probability=float(
            np.mean(np.maximum(terminal[:, 1], terminal[:, 2]) < extinction_threshold)
        ),
        extinction_threshold=extinction_threshold,
        lyapunov=lyap,
        time_average=integrals.mean(axis=0) / grid.horizon,
        s_histogram=_s_histogram(times, records, tail_fraction, bins),
        clamp_events=int(clamps.sum()),
        max_clamp_rate=rate,
        n_paths=n_paths,
        base_seed=base_seed,
    )
    samples = records[keep] if keep.size else None
    return Ensemble(stats, terminal, keep, samples, x0, grid, params, noise, u)


def stationary_s_histogram(ensemble: Ensemble, tail_fraction: float = 0.5, bins=30) -> SHistogram:
    """Histogram of S over the final ``tail_fraction`` of the horizon, pooled over retained paths."""
    if ensemble.samples is None or len(ensemble.samples) == 0:
        raise ValueError("ensemble retained no trajectories")
    return _s_histogram(ensemble.stats.times, ensemble.samples, tail_fraction, bins)


@dataclass
class ConvergenceResult:
    dts: np.ndarray
    errors: np.ndarray
    reference_dt: float
    order: float = field(default=float("nan"))


def self_convergence(
    initial,
    params: ModelParams,
    noise: NoiseParams,
    grid_coarse: TimeGrid,
    refinement_levels: int = 4,
    n_paths: int = 200,
    seed: int = 0,
    factor: int = 2,
    reference_extra: int = 3,
) -> ConvergenceResult:
    """Strong error of each level against the finest level on shared Brownian paths.

    Levels ``l = 0 .. refinement_levels - 1`` use ``dt / factor**l``.  The
    reference is ``reference_extra`` further refinements below the last
    measured level; with a reference only one level finer, the measured
    errors shrink like ``h - h_ref`` rather than ``h`` and the fitted order
    is biased upwards.  Increments of coarser levels are sums of the
    reference increments, so all levels see the same Brownian path.  The
    observed order is the least-squares slope of ``log(error)`` against
    ``log(dt)``.
    """
    if refinement_levels < 1 or factor < 1 or reference_extra < 0:
        raise ValueError("need refinement_levels >= 1, factor >= 1, reference_extra >= 0")
    finest = refinement_levels - 1 + reference_extra
    total = factor**finest
    fine = TimeGrid(grid_coarse.t0, grid_coarse.t_end, grid_coarse.dt / total)
    rng = _rng(seed)
    dw = rng.standard_normal((n_paths, fine.n_steps, 2)) * math.sqrt(fine.dt)
    x0 = np.tile(np.asarray(initial, dtype=float), (n_paths, 1))

    def terminal(level):
        agg = factor ** (finest - level)
        coarse_dw = dw.reshape(n_paths, fine.n_steps // agg, agg, 2).sum(axis=2)
        dt = fine.dt * agg
        rec, _, _ = _integrate(x0, coarse_dw, dt, params, noise, record_every=fine.n_steps // agg)
        return rec[:, -1]

    ref = terminal(finest)
    dts, errors = [], []
    for level in range(refinement_levels):
        dts.append(grid_coarse.dt / factor**level)
        errors.append(float(np.mean(np.linalg.norm(terminal(level) - ref, axis=1))))
    dts, errors = np.array(dts), np.array(errors)
    order = float("nan")
    if factor > 1 and np.all(errors > 0):
        order = float(np.polyfit(np.log(dts), np.log(errors), 1)[0])
    return ConvergenceResult(dts, errors, fine.dt, order)
