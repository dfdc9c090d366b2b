"""Small dense numerical kernel: SVD, pseudoinverse, min-inflation LP.

The LP solved here is the membership/score problem

    min t   s.t.  ||r - G b||_inf <= t,  ||b||_inf <= 1,  t >= 0

whose optimum is the smallest axis-aligned inflation radius making ``r``
reachable from the generator span.  Instances are tiny (tens of variables), so
robustness is preferred over speed; the heavy lifting is delegated to LAPACK
and HiGHS.
"""

from __future__ import annotations

import numpy as np
from scipy.optimize import linprog

__all__ = ["SolverError", "svd", "pinv", "solve_min_inflation"]

DEFAULT_RANK_TOL = 1e-10


class SolverError(RuntimeError):
    """A numerical routine failed to converge or reported an abnormal status."""


def svd(M: np.ndarray):
    """Thin SVD ``M = U diag(s) V^T`` with orthonormal U, V and s nonincreasing.

    Raises SolverError if the underlying iteration does not converge.
    """
    M = np.asarray(M, dtype=float)
    try:
        U, s, Vh = np.linalg.svd(M, full_matrices=False)
    except np.linalg.LinAlgError as exc:
        raise SolverError(f"SVD did not converge for shape {M.shape}: {exc}") from exc
    return U, s, Vh.T


def pinv(M: np.ndarray, rank_tol: float = DEFAULT_RANK_TOL) -> np.ndarray:
    """Moore-Penrose pseudoinverse; singular values below rank_tol * s_max are zeroed."""
    U, s, V = svd(M)
    cutoff = rank_tol * (s[0] if s.size else 0.0)
    inv = np.where(s > cutoff, 1.0 / np.where(s > cutoff, s, 1.0), 0.0)
    return V @ (inv[:, None] * U.T)


def numerical_rank(M: np.ndarray, rank_tol: float = DEFAULT_RANK_TOL) -> int:
    """Number of singular values above rank_tol * s_max."""
    s = svd(M)[1]
    if s.size == 0:
        return 0
    return int(np.count_nonzero(s > rank_tol * s[0]))


def solve_min_inflation(r: np.ndarray, G: np.ndarray):
    """Solve ``min t : ||r - G b||_inf <= t, ||b||_inf <= 1``.

    Returns ``(t, b)`` with t >= 0 and a feasible witness b.  Raises
    SolverError rather than returning a suboptimal value if the solver does
    not report optimality.
    """
    r = np.asarray(r, dtype=float).reshape(-1)
    G = np.asarray(G, dtype=float)
    if G.size == 0:
        G = G.reshape(r.shape[0], 0)
    if G.ndim != 2 or G.shape[0] != r.shape[0]:
        raise ValueError(f"generator matrix {G.shape} does not match residual of dimension {r.shape[0]}")
    if not (np.all(np.isfinite(r)) and np.all(np.isfinite(G))):
        raise ValueError("min-inflation LP requires finite inputs")
    n, K = G.shape
    if K == 0:
        t = float(np.abs(r).max()) if n else 0.0
        return t, np.zeros(0)
    # membership fast path: an exactly-representable residual with an interior
    # witness makes the LP maximally degenerate (every row tight at t* = 0),
    # which can stall the simplex; the least-squares witness settles it first
    beta_ls, *_ = np.linalg.lstsq(G, r, rcond=None)
    if np.abs(beta_ls).max() <= 1.0:
        resid = float(np.abs(r - G @ beta_ls).max())
        if resid <= 1e-9:
            return resid, beta_ls
    # variables x = [b (K), t (1)];  -G b - t <= -r  and  G b - t <= r
    c = np.zeros(K + 1)
    c[-1] = 1.0
    ones = np.ones((n, 1))
    A_ub = np.vstack([np.hstack([-G, -ones]), np.hstack([G, -ones])])
    b_ub = np.concatenate([-r, r])
    bounds = [(-1.0, 1.0)] * K + [(0.0, None)]
    res = linprog(c, A_ub=A_ub, b_ub=b_ub, bounds=bounds, method="highs",
                  options={"time_limit": 30})
    if res.status != 0:
        # degenerate instances that defeat the simplex yield to interior point
        res = linprog(c, A_ub=A_ub, b_ub=b_ub, bounds=bounds, method="highs-ipm",
                      options={"time_limit": 60})
    if res.status != 0:
        raise SolverError(f"min-inflation LP failed with status {res.status}: {res.message}")
    beta = np.clip(res.x[:K], -1.0, 1.0)
    # report the inflation the witness actually achieves (guards against
    # solver-side constraint slack)
    t = float(np.abs(r - G @ beta).max())
    return t, beta
