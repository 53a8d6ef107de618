"""Receding-horizon controller: growing horizon, tightened constraints, and a
seeded (1+lambda) evolutionary solve warm-started from the previous solution.

The horizon carries N+1 inputs and N+1 constraint points.  Point ``i >= 1``
pairs with the offset from the depth-``i`` residual set (``i`` model steps of
prediction error); point 0 evaluates the constraint at the known current
state with the first input and is guarded with the depth-1 offset, which
matters for constraints with direct input feedthrough.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .dro import (
    AmbiguityConfig,
    EmpiricalResidualSet,
    RobustOffset,
    compute_offset,
    estimate_c,
    wasserstein_radius,
)

logger = logging.getLogger(__name__)


class HorizonDataGap(Exception):
    """Raised when a residual set is missing for a depth the horizon needs."""


def horizon_for(t: int, n_target: int) -> int:
    """Horizon schedule min(n_target, round(t / n_target) + 1).

    ``round`` is half away from zero, isolated here on purpose.
    """
    if t < 1:
        raise ValueError(f"timestep must be >= 1, got {t}")
    return min(n_target, _round_half_away(t / n_target) + 1)


def _round_half_away(x: float) -> int:
    return int(math.floor(x + 0.5)) if x >= 0 else -int(math.floor(-x + 0.5))


def bootstrap_action(safe_action: np.ndarray) -> np.ndarray:
    """The configured known-safe first input, as a fresh array."""
    return np.atleast_1d(np.asarray(safe_action, dtype=float)).copy()


@dataclass(frozen=True)
class ESConfig:
    """(1 + lambda) evolutionary strategy settings."""

    mutants: int
    mutation_scale: np.ndarray
    seed: int
    iterations: int = 1

    def __post_init__(self) -> None:
        if self.mutants < 1:
            raise ValueError("mutant count must be >= 1")
        scale = np.atleast_1d(np.asarray(self.mutation_scale, dtype=float))
        if np.any(scale <= 0.0):
            raise ValueError("mutation scale must be positive")
        object.__setattr__(self, "mutation_scale", scale)


@dataclass(frozen=True)
class ControlProblem:
    """One receding-horizon instance.

    ``evaluate`` maps a candidate batch (B, N+1, m) to ``(cost, constraints)``
    with constraints of shape (B, N+1), one column per horizon point starting
    at the current timestep.
    """

    evaluate: Callable[[np.ndarray], tuple[np.ndarray, np.ndarray]]
    horizon: int
    u_min: np.ndarray
    u_max: np.ndarray
    bound: float
    offsets_per_point: np.ndarray

    def __post_init__(self) -> None:
        object.__setattr__(self, "u_min", np.atleast_1d(np.asarray(self.u_min, float)))
        object.__setattr__(self, "u_max", np.atleast_1d(np.asarray(self.u_max, float)))
        off = np.asarray(self.offsets_per_point, dtype=float)
        if off.size != self.horizon + 1:
            raise ValueError("need one offset per horizon point")
        if np.any(off < 0.0):
            raise ValueError("offsets must be nonnegative")
        object.__setattr__(self, "offsets_per_point", off)


@dataclass(frozen=True)
class Candidate:
    """Solver result: the input plan plus its evaluation."""

    inputs: np.ndarray
    cost: float
    feasible: bool
    total_violation: float
    max_slack: float


def reconcile_warm_start(
    warm: np.ndarray | None,
    horizon: int,
    fallback: np.ndarray,
) -> np.ndarray:
    """Shift the previous plan left by one, repeat the last input, and resize
    to the current horizon (grown horizons repeat the final input)."""
    fallback = np.atleast_1d(np.asarray(fallback, dtype=float))
    m = fallback.size
    rows = horizon + 1
    if warm is None:
        return np.tile(fallback, (rows, 1))
    warm = np.atleast_2d(np.asarray(warm, dtype=float))
    shifted = np.vstack([warm[1:], warm[-1:]])
    if shifted.shape[0] < rows:
        pad = np.tile(shifted[-1:], (rows - shifted.shape[0], 1))
        shifted = np.vstack([shifted, pad])
    return shifted[:rows]


def solve(
    problem: ControlProblem,
    es: ESConfig,
    warm_start: np.ndarray | None,
) -> Candidate:
    """Evaluate the warm-start parent plus ``lambda`` clipped Gaussian mutants.

    Returns the cheapest feasible candidate, or the candidate with minimal
    summed positive constraint slack when nothing is feasible.  Ties go to the
    lowest candidate index (the parent is index 0), so a feasible warm start
    is never beaten by an equal-cost mutant and the solve is deterministic for
    a fixed seed.
    """
    m = problem.u_min.size
    rows = problem.horizon + 1
    parent = reconcile_warm_start(warm_start, problem.horizon, problem.u_min)
    parent = np.clip(parent, problem.u_min, problem.u_max)
    rng = np.random.default_rng(np.random.SeedSequence([int(es.seed)]))

    best: Candidate | None = None
    for _ in range(es.iterations):
        noise = rng.normal(size=(es.mutants, rows, m)) * es.mutation_scale
        batch = np.concatenate([parent[None], np.clip(parent[None] + noise,
                                                      problem.u_min, problem.u_max)])
        cost, constraints = problem.evaluate(batch)
        slack = constraints + problem.offsets_per_point[None, :] - problem.bound
        feasible = np.all(slack <= 0.0, axis=1)
        violation = np.maximum(slack, 0.0).sum(axis=1)

        if np.any(feasible):
            ranked = np.where(feasible, cost, np.inf)
            idx = int(np.argmin(ranked))
        else:
            idx = int(np.argmin(violation))
        candidate = Candidate(
            inputs=batch[idx].copy(),
            cost=float(cost[idx]),
            feasible=bool(feasible[idx]),
            total_violation=float(violation[idx]),
            max_slack=float(slack[idx].max()),
        )
        if best is None or _better(candidate, best):
            best = candidate
        parent = best.inputs
    return best


def _better(a: Candidate, b: Candidate) -> bool:
    if a.feasible != b.feasible:
        return a.feasible
    if a.feasible:
        return a.cost < b.cost
    return a.total_violation < b.total_violation


def assemble_offsets(
    residual_sets: dict[int, EmpiricalResidualSet],
    ambiguity: AmbiguityConfig,
    horizon: int,
    bound: float,
    attainable_floor: float,
) -> RobustOffset:
    """Per-depth offsets for depths 1..horizon from each depth's own samples.

    Each depth gets its own radius (its own constant and sample count).  An
    offset that would push the tightened bound below the attainable range of
    the constraint output is clamped to the largest attainable value, with a
    warning.  A missing depth raises :class:`HorizonDataGap`; the episode loop
    holds the horizon at the largest depth with data.
    """
    offsets = np.zeros(horizon)
    ceiling = bound - attainable_floor
    clamped: list[int] = []
    for depth in range(1, horizon + 1):
        if depth not in residual_sets:
            raise HorizonDataGap(f"no residual data at depth {depth}")
        rset = residual_sets[depth]
        radius = wasserstein_radius(estimate_c(rset.samples), rset.count, ambiguity.beta)
        r = compute_offset(rset, radius, ambiguity.eta)
        if r > ceiling:
            clamped.append(depth)
            r = max(ceiling, 0.0)
        offsets[depth - 1] = r
    if clamped:
        logger.warning(
            "offsets at depths %s exceed the attainable range, clamped to %.4g",
            clamped, max(ceiling, 0.0),
        )
    return RobustOffset(per_depth=offsets)


def offsets_per_point(offsets: RobustOffset | None, horizon: int) -> np.ndarray:
    """Expand per-depth offsets to the N+1 horizon points.

    Point 0 (current state, first input) reuses the depth-1 offset as its
    feedthrough guard; zeros when offsets are disabled.
    """
    if offsets is None:
        return np.zeros(horizon + 1)
    per_depth = offsets.per_depth[:horizon]
    return np.concatenate([[per_depth[0]], per_depth])
