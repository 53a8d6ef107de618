"""Independent cross-check oracles for the core numerics.

These deliberately avoid the production code paths: the transport adversary
is re-posed as a brute-force linear program, the radius constant as a dense
grid scan, and network gradients as central finite differences.  The CLI
``verify`` subcommand and the test suite both run them.
"""

from __future__ import annotations

import math

import numpy as np
from scipy.optimize import linprog

from . import dro, model

_OVERSHOOT = 1e-12


def violation_prob_lp(samples: np.ndarray, r: float, epsilon: float) -> float:
    """Worst-case P[R > r] via an explicit transport LP.

    Sources are the samples (mass 1/ell each); destinations are the sample
    values plus the boundary and a point just beyond it.  The plan maximizes
    mass landing strictly beyond ``r`` subject to total transport cost
    ``<= epsilon``.
    """
    src = np.asarray(samples, dtype=float)
    ell = src.size
    dst = np.unique(np.concatenate([src, [r, r + _OVERSHOOT]]))
    cost = np.abs(src[:, None] - dst[None, :])  # (ell, m)
    m = dst.size
    n_var = ell * m

    # Row sums fix each sample's mass at 1/ell.
    a_eq = np.zeros((ell, n_var))
    for i in range(ell):
        a_eq[i, i * m : (i + 1) * m] = 1.0
    b_eq = np.full(ell, 1.0 / ell)
    a_ub = cost.reshape(1, -1)
    b_ub = np.array([epsilon])
    objective = -np.tile((dst > r).astype(float), ell)

    res = linprog(
        objective,
        A_ub=a_ub,
        b_ub=b_ub,
        A_eq=a_eq,
        b_eq=b_eq,
        bounds=(0.0, None),
        method="highs",
    )
    if not res.success:
        raise RuntimeError(f"transport LP failed: {res.message}")
    return float(-res.fun)


def c_grid_oracle(
    samples: np.ndarray,
    n_points: int = 10**6,
    alpha_lo: float = 1e-6,
    alpha_hi: float = 1e6,
) -> float:
    """Radius constant via an exhaustive scan over a dense log grid.

    Same centered-and-normalized objective as the production estimator; only
    the minimization strategy differs.
    """
    arr = np.asarray(samples, dtype=float)
    centered = arr - arr.mean()
    scale = float(np.sqrt(np.mean(centered**2)))
    if scale == 0.0:
        return 0.0
    dev_sq = np.abs(centered / scale) ** 2
    grid = np.logspace(math.log10(alpha_lo), math.log10(alpha_hi), n_points)
    best = math.inf
    for chunk in np.array_split(grid, max(n_points // 20000, 1)):
        best = min(best, float(dro._c_objective(chunk, dev_sq).min()))
    return 2.0 * best * scale


def loss_gradient_fd(
    topology: model.NetworkTopology,
    theta: np.ndarray,
    inputs_norm: np.ndarray,
    targets_norm: np.ndarray,
    step: float = 1e-6,
) -> np.ndarray:
    """Central-difference gradient of the training loss w.r.t. the weights."""
    theta = np.asarray(theta, dtype=float)
    grad = np.empty_like(theta)
    for i in range(theta.size):
        bumped = theta.copy()
        bumped[i] += step
        hi, _ = model.loss_and_gradient(topology, bumped, inputs_norm, targets_norm)
        bumped[i] -= 2.0 * step
        lo, _ = model.loss_and_gradient(topology, bumped, inputs_norm, targets_norm)
        grad[i] = (hi - lo) / (2.0 * step)
    return grad


def check_adversary_vs_lp(
    n_cases: int = 50, seed: int = 2024, tol: float = 1e-6
) -> tuple[bool, str]:
    """Greedy adversary against the transport LP on random small instances."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n_cases):
        ell = int(rng.integers(1, 9))
        samples = np.sort(rng.normal(0.0, 1.0, size=ell))
        r = float(rng.normal(0.2, 0.8))
        span = max(float(samples[-1] - samples[0]), 0.1)
        for eps in np.linspace(0.0, span, 20):
            greedy = dro.worst_case_violation_prob(samples, r, float(eps))
            exact = violation_prob_lp(samples, r, float(eps))
            worst = max(worst, abs(greedy - exact))
    ok = worst <= tol
    return ok, f"max |greedy - LP| = {worst:.3e} over {n_cases} instances x 20 radii"


def check_gradients_vs_fd(
    n_cases: int = 20, seed: int = 77, rel_tol: float = 1e-5
) -> tuple[bool, str]:
    """Analytic training gradients against central finite differences."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n_cases):
        topo = model.NetworkTopology(
            input_dim=int(rng.integers(2, 6)),
            output_dim=int(rng.integers(1, 5)),
            hidden=10,
        )
        theta = rng.normal(0.0, 0.5, size=topo.n_params)
        batch = int(rng.integers(1, 8))
        x = rng.normal(0.0, 1.0, size=(batch, topo.input_dim))
        y = rng.normal(0.0, 1.0, size=(batch, topo.output_dim))
        _, analytic = model.loss_and_gradient(topo, theta, x, y)
        numeric = loss_gradient_fd(topo, theta, x, y)
        scale = max(float(np.linalg.norm(numeric)), 1e-12)
        worst = max(worst, float(np.linalg.norm(analytic - numeric)) / scale)
    ok = worst <= rel_tol
    return ok, f"max relative gradient error = {worst:.3e} over {n_cases} cases"


def run_verification(lp_cases: int = 50, grad_cases: int = 20) -> list[tuple[str, bool, str]]:
    """All oracle cross-checks, as (name, passed, detail) rows."""
    return [
        ("adversary-vs-lp", *check_adversary_vs_lp(n_cases=lp_cases)),
        ("gradient-vs-fd", *check_gradients_vs_fd(n_cases=grad_cases)),
    ]
