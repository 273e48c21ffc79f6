"""Entropic optimal-transport correspondence between two point sets."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.spatial.distance import cdist
from scipy.special import logsumexp

# exp(-x) is a normal float64 for x below roughly 708
_KERNEL_SAFE = 700.0


class SinkhornUnderflow(FloatingPointError):
    pass


@dataclass
class TransportPlan:
    plan: np.ndarray
    row_marginal_error: float
    col_marginal_error: float
    converged: bool
    iterations: int
    log_u: np.ndarray
    log_v: np.ndarray

    @property
    def max_marginal_error(self) -> float:
        return max(self.row_marginal_error, self.col_marginal_error)


def squared_cost(a, b) -> np.ndarray:
    return cdist(np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64), "sqeuclidean")


def _scaling(cost, epsilon, max_iterations, tolerance, warm_start, check_every):
    """Sinkhorn scaling on a (normalized) cost; returns (kernel or None, z, log_u, log_v, iterations)."""
    n, m = cost.shape
    a = np.full(n, 1.0 / n)
    b = np.full(m, 1.0 / m)
    z = cost / -epsilon
    if warm_start is not None and warm_start[0].shape == (n,) and warm_start[1].shape == (m,):
        log_u, log_v = warm_start[0].copy(), warm_start[1].copy()
    else:
        log_u, log_v = np.zeros(n), np.zeros(m)

    it = 0
    if z.min() > -_KERNEL_SAFE:
        K = np.exp(z)
        u, v = np.exp(log_u), np.exp(log_v)
        with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
            while it < max_iterations:
                u = a / (K @ v)
                v = b / (K.T @ u)
                it += 1
                if it % check_every == 0 or it == max_iterations:
                    err = np.abs(u * (K @ v) - a).max()
                    if not np.isfinite(err) or err <= tolerance:
                        break
        if np.all(np.isfinite(u)) and np.all(np.isfinite(v)) and u.min() > 0 and v.min() > 0:
            return K, z, np.log(u), np.log(v), it
        log_u, log_v = np.zeros(n), np.zeros(m)
        it = 0

    log_a, log_b = np.log(a), np.log(b)
    while it < max_iterations:
        log_u = log_a - logsumexp(z + log_v[None, :], axis=1)
        log_v = log_b - logsumexp(z + log_u[:, None], axis=0)
        it += 1
        if it % check_every == 0 or it == max_iterations:
            rows = np.exp(logsumexp(z + log_u[:, None] + log_v[None, :], axis=1))
            if np.abs(rows - a).max() <= tolerance:
                break
    if not (np.all(np.isfinite(log_u)) and np.all(np.isfinite(log_v))):
        raise SinkhornUnderflow(
            "Sinkhorn scaling produced non-finite potentials; "
            "epsilon is too small for the cost scale (normalize the cost or raise epsilon)"
        )
    return None, z, log_u, log_v, it


def _normalized_cost(a_pts, b_pts, normalize_cost):
    a_pts = np.asarray(a_pts, dtype=np.float64).reshape(-1, 3)
    b_pts = np.asarray(b_pts, dtype=np.float64).reshape(-1, 3)
    if len(a_pts) == 0 or len(b_pts) == 0:
        raise ValueError("both point sets must be non-empty")
    cost = squared_cost(a_pts, b_pts)
    if normalize_cost:
        cmax = cost.max()
        if cmax > 0:
            cost /= cmax
    return cost


def sinkhorn_plan(
    a_pts,
    b_pts,
    epsilon: float = 0.01,
    max_iterations: int = 500,
    tolerance: float = 1e-6,
    normalize_cost: bool = True,
    warm_start: Optional[TransportPlan] = None,
    check_every: int = 5,
) -> TransportPlan:
    """Uniform-marginal entropic OT plan for squared-Euclidean costs.

    With ``normalize_cost`` the cost matrix is divided by its maximum before
    ``epsilon`` is applied. Scaling updates run on the kernel directly when
    it cannot underflow and in the log domain otherwise. Iteration stops once
    the row-marginal violation (columns are exact after each update) drops
    below ``tolerance`` or after ``max_iterations``.
    """
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    cost = _normalized_cost(a_pts, b_pts, normalize_cost)
    n, m = cost.shape
    warm = None if warm_start is None else (warm_start.log_u, warm_start.log_v)
    _, z, log_u, log_v, it = _scaling(cost, epsilon, max_iterations, tolerance, warm, check_every)
    plan = np.exp(z + log_u[:, None] + log_v[None, :])
    rows, cols = plan.sum(1), plan.sum(0)
    if rows.min() == 0 or cols.min() == 0:
        raise SinkhornUnderflow(
            "transport kernel underflowed for some rows/columns; normalize the cost or raise epsilon"
        )
    row_err = float(np.abs(rows - 1.0 / n).max())
    col_err = float(np.abs(cols - 1.0 / m).max())
    return TransportPlan(
        plan=plan,
        row_marginal_error=row_err,
        col_marginal_error=col_err,
        converged=max(row_err, col_err) <= tolerance,
        iterations=it,
        log_u=log_u,
        log_v=log_v,
    )


def sinkhorn_match(
    a_pts,
    b_pts,
    epsilon: float = 0.01,
    max_iterations: int = 500,
    tolerance: float = 1e-6,
    warm_start=None,
):
    """Row-argmax correspondence without materializing the plan.

    Returns (correspondence, (log_u, log_v)); pass the second item back as
    ``warm_start`` on the next call. Up to floating-point near-ties this is
    ``extract_correspondence`` applied to the plan with the same potentials.
    """
    cost = _normalized_cost(a_pts, b_pts, True)
    K, z, log_u, log_v, _ = _scaling(cost, epsilon, max_iterations, tolerance, warm_start, 5)
    if K is not None:
        corr = np.argmax(K * np.exp(log_v)[None, :], axis=1)
    else:
        corr = np.argmax(z + log_v[None, :], axis=1)
    return corr, (log_u, log_v)


def extract_correspondence(plan) -> np.ndarray:
    """For each source row, the target column holding the most mass (lowest index on ties)."""
    p = plan.plan if isinstance(plan, TransportPlan) else np.asarray(plan)
    return np.argmax(p, axis=1)


def extract_inverse_correspondence(plan) -> np.ndarray:
    """For each target column, the source row holding the most mass (lowest index on ties)."""
    p = plan.plan if isinstance(plan, TransportPlan) else np.asarray(plan)
    return np.argmax(p, axis=0)


def correspond(a_pts, b_pts, epsilon=0.01, max_iterations=500, tolerance=1e-6):
    """Convenience: plan + both hard assignments."""
    tp = sinkhorn_plan(a_pts, b_pts, epsilon, max_iterations, tolerance)
    return tp, extract_correspondence(tp), extract_inverse_correspondence(tp)
