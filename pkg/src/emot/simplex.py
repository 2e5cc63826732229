"""Dense two-phase simplex with Bland's rule.

Exact-ish LP backend for the desk-scale polytopes used throughout the
package.  Everything is kept dense and deterministic: Bland's rule for
anti-cycling, fixed row order, and the artificial columns are carried
through both phases so the basis inverse (and hence the duals and Farkas
certificates) can be read off the final tableau.

Problem form::

    min  c @ x
    s.t. A_eq @ x == b_eq
         A_ub @ x <= b_ub
         x >= 0

Free variables are handled by the ``solve_lp`` wrapper via column
splitting.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
UNBOUNDED = "unbounded"
ITERATION_LIMIT = "iteration_limit"


@dataclass
class LpResult:
    status: str
    x: np.ndarray | None = None
    value: float | None = None
    y_eq: np.ndarray | None = None
    y_ub: np.ndarray | None = None
    reduced_costs: np.ndarray | None = None
    slack_ub: np.ndarray | None = None
    farkas_y_eq: np.ndarray | None = None
    farkas_y_ub: np.ndarray | None = None
    iterations: int = 0
    compl_slack_residual: float = field(default=np.nan)


def _pivot(T: np.ndarray, basis: np.ndarray, row: int, col: int) -> None:
    T[row] /= T[row, col]
    piv = T[row]
    for i in range(T.shape[0]):
        if i != row and T[i, col] != 0.0:
            T[i] -= T[i, col] * piv
    basis[row] = col


def _run_simplex(
    T: np.ndarray,
    basis: np.ndarray,
    cost: np.ndarray,
    allowed: np.ndarray,
    tol: float,
    max_iter: int,
) -> tuple[str, int]:
    """Minimize ``cost`` over the tableau ``T`` (rows = constraints, last
    column = rhs) starting from ``basis``.  Bland's rule throughout."""
    m, _ = T.shape
    n = T.shape[1] - 1
    it = 0
    while it < max_iter:
        it += 1
        # reduced costs: c_j - c_B @ T[:, j]
        cb = cost[basis]
        red = cost[:n] - cb @ T[:, :n]
        entering = -1
        for j in range(n):
            if allowed[j] and red[j] < -tol:
                entering = j
                break
        if entering < 0:
            return OPTIMAL, it
        # ratio test (Bland tie-break: smallest basis index)
        leave = -1
        best = np.inf
        for i in range(m):
            a = T[i, entering]
            if a > tol:
                ratio = T[i, -1] / a
                if ratio < best - 1e-12 or (
                    abs(ratio - best) <= 1e-12
                    and (leave < 0 or basis[i] < basis[leave])
                ):
                    best = ratio
                    leave = i
        if leave < 0:
            return UNBOUNDED, it
        _pivot(T, basis, leave, entering)
    return ITERATION_LIMIT, it


def solve_lp_nonneg(
    c: np.ndarray,
    A_eq: np.ndarray | None = None,
    b_eq: np.ndarray | None = None,
    A_ub: np.ndarray | None = None,
    b_ub: np.ndarray | None = None,
    tol: float = 1e-9,
    max_iter: int = 100_000,
) -> LpResult:
    """Solve the standard-form LP with all variables nonnegative."""
    c = np.asarray(c, dtype=float)
    n = c.size
    if A_eq is None:
        A_eq = np.zeros((0, n))
        b_eq = np.zeros(0)
    if A_ub is None:
        A_ub = np.zeros((0, n))
        b_ub = np.zeros(0)
    A_eq = np.atleast_2d(np.asarray(A_eq, dtype=float))
    A_ub = np.atleast_2d(np.asarray(A_ub, dtype=float))
    b_eq = np.asarray(b_eq, dtype=float).ravel()
    b_ub = np.asarray(b_ub, dtype=float).ravel()
    m_eq, m_ub = A_eq.shape[0], A_ub.shape[0]
    m = m_eq + m_ub

    # standard form with slack columns for the <= rows
    A = np.zeros((m, n + m_ub))
    A[:m_eq, :n] = A_eq
    A[m_eq:, :n] = A_ub
    A[m_eq:, n:] = np.eye(m_ub)
    b = np.concatenate([b_eq, b_ub])

    # scale rows so pivot tolerances are meaningful
    row_scale = np.maximum(np.abs(A).max(axis=1, initial=0.0), 1.0)
    A = A / row_scale[:, None]
    b = b / row_scale

    sign = np.where(b < 0, -1.0, 1.0)
    A = A * sign[:, None]
    b = b * sign

    n_struct = n + m_ub
    art = n_struct
    T = np.zeros((m, n_struct + m + 1))
    T[:, :n_struct] = A
    T[:, art : art + m] = np.eye(m)
    T[:, -1] = b
    basis = np.arange(art, art + m)

    allowed = np.ones(n_struct + m, dtype=bool)

    # phase 1
    cost1 = np.zeros(n_struct + m)
    cost1[art:] = 1.0
    status, it1 = _run_simplex(T, basis, cost1, allowed, tol, max_iter)
    if status == ITERATION_LIMIT:
        return LpResult(status=ITERATION_LIMIT, iterations=it1)
    phase1_val = cost1[basis] @ T[:, -1]
    feas_tol = max(tol, 1e-9) * (1.0 + abs(b).max(initial=0.0))
    if phase1_val > feas_tol:
        # Farkas certificate from the phase-1 duals, mapped back through
        # the row scaling / sign flips
        binv = T[:, art : art + m]
        y = cost1[basis] @ binv
        y = y * sign / row_scale
        return LpResult(
            status=INFEASIBLE,
            farkas_y_eq=y[:m_eq].copy(),
            farkas_y_ub=y[m_eq:].copy(),
            iterations=it1,
        )

    # drive any artificial still in the basis out (degenerate rows)
    for i in range(m):
        if basis[i] >= art:
            piv_col = -1
            for j in range(n_struct):
                if abs(T[i, j]) > tol:
                    piv_col = j
                    break
            if piv_col >= 0:
                _pivot(T, basis, i, piv_col)
            # else: redundant row, artificial stays at zero level

    # phase 2: artificials locked out
    allowed[art:] = False
    cost2 = np.zeros(n_struct + m)
    cost2[:n] = c
    status, it2 = _run_simplex(T, basis, cost2, allowed, tol, max_iter)
    if status != OPTIMAL:
        return LpResult(status=status, iterations=it1 + it2)

    x_full = np.zeros(n_struct + m)
    x_full[basis] = T[:, -1]
    x = x_full[:n]
    slack = x_full[n:n_struct]
    binv = T[:, art : art + m]
    y = cost2[basis] @ binv
    y = y * sign / row_scale
    red = cost2[:n_struct] - cost2[basis] @ T[:, :n_struct]
    value = float(c @ x)
    cs = 0.0
    if n:
        cs = float(np.max(np.abs(x * red[:n])))
    if m_ub:
        cs = max(cs, float(np.max(np.abs(y[m_eq:] * (b_ub - A_ub @ x)))))
    return LpResult(
        status=OPTIMAL,
        x=x,
        value=value,
        y_eq=y[:m_eq].copy(),
        y_ub=y[m_eq:].copy(),
        reduced_costs=red[:n].copy(),
        slack_ub=(b_ub - A_ub @ x) if m_ub else np.zeros(0),
        iterations=it1 + it2,
        compl_slack_residual=cs,
    )


def solve_lp(
    c: np.ndarray,
    A_eq: np.ndarray | None = None,
    b_eq: np.ndarray | None = None,
    A_ub: np.ndarray | None = None,
    b_ub: np.ndarray | None = None,
    free: np.ndarray | None = None,
    tol: float = 1e-9,
    max_iter: int = 100_000,
) -> LpResult:
    """LP solve allowing a mask of free (sign-unrestricted) variables.

    Free columns are split into positive/negative parts before the
    nonnegative solve and recombined afterwards; duals are unaffected.
    """
    c = np.asarray(c, dtype=float)
    n = c.size
    if free is None or not np.any(free):
        return solve_lp_nonneg(c, A_eq, b_eq, A_ub, b_ub, tol, max_iter)
    free = np.asarray(free, dtype=bool)
    idx_free = np.flatnonzero(free)

    def split(M):
        if M is None:
            return None
        M = np.atleast_2d(np.asarray(M, dtype=float))
        return np.hstack([M, -M[:, idx_free]])

    c2 = np.concatenate([c, -c[idx_free]])
    res = solve_lp_nonneg(c2, split(A_eq), b_eq, split(A_ub), b_ub, tol, max_iter)
    if res.x is not None:
        x = res.x[:n].copy()
        x[idx_free] -= res.x[n:]
        res.x = x
        res.reduced_costs = None  # not meaningful after the split
    return res
