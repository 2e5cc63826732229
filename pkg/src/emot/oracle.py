"""Independent brute-force and closed-form reference values.

These back the test suite and the acceptance gate.  By design nothing in
this module touches the simplex or the first-order solver: the Gibbs tilt
is a bisection on the tilted mean map, the grid scan is literal, and the
vertex enumeration solves square linear systems over column subsets.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np


class OracleError(ValueError):
    pass


@dataclass
class OracleResult:
    value: float
    method: str
    argopt: object = None
    detail: dict = field(default_factory=dict)


def gibbs_tilt(nodes, ref, cost, mean_target, tol: float = 1e-12) -> OracleResult:
    """Entropy-penalized linear minimization with one mean constraint.

    min over probabilities q on ``nodes`` with mean ``mean_target`` of
    <cost, q> + sum q log(q / ref).  The optimizer is the exponential
    tilt q* ~ ref * exp(-cost - lam * x); lam is found by bisection on
    the strictly monotone tilted-mean map.
    """
    nodes = np.asarray(nodes, dtype=float)
    ref = np.asarray(ref, dtype=float)
    cost = np.asarray(cost, dtype=float)
    if np.any(ref <= 0):
        raise OracleError("reference must be strictly positive")
    if not nodes.min() < mean_target < nodes.max():
        if np.isclose(nodes.min(), nodes.max()) and np.isclose(mean_target, nodes.min()):
            pass  # degenerate single-point hull
        else:
            raise OracleError("mean target outside the open convex hull")

    logref = np.log(ref)

    def tilted(lam):
        z = logref - cost - lam * nodes
        z -= z.max()
        q = np.exp(z)
        q /= q.sum()
        return q

    def mean(lam):
        return float(np.dot(tilted(lam), nodes))

    # mean(lam) is strictly decreasing in lam; bracket by doubling
    B = 1.0
    while not (mean(B) <= mean_target <= mean(-B)):
        B *= 2.0
        if B > 2.0**60:
            raise OracleError("failed to bracket the tilt multiplier")
    lo, hi = -B, B
    for _ in range(400):
        mid = 0.5 * (lo + hi)
        if mean(mid) > mean_target:
            lo = mid
        else:
            hi = mid
        if hi - lo < 1e-16 * max(1.0, abs(lo) + abs(hi)):
            break
    lam = 0.5 * (lo + hi)
    q = tilted(lam)
    if abs(float(np.dot(q, nodes)) - mean_target) > max(tol, 1e-12) * (
        1.0 + abs(mean_target)
    ):
        raise OracleError("bisection did not reach the mean target")
    entropy = float(np.dot(q, np.log(q / ref)))
    value = float(np.dot(cost, q)) + entropy
    return OracleResult(value, "GibbsTilt", argopt=q, detail={"lam": lam})


def gibbs_free(nodes, ref, cost) -> OracleResult:
    """Unconstrained entropic minimization: min <c,q> + KL(q|ref) over the
    simplex; closed form q* ~ ref exp(-c), value = -log sum ref exp(-c)."""
    ref = np.asarray(ref, dtype=float)
    cost = np.asarray(cost, dtype=float)
    if np.any(ref <= 0):
        raise OracleError("reference must be strictly positive")
    z = np.log(ref) - cost
    zmax = z.max()
    log_part = zmax + math.log(float(np.exp(z - zmax).sum()))
    q = np.exp(z - log_part)
    return OracleResult(-log_part, "ClosedForm", argopt=q)


def dense_grid_min(
    lo,
    hi,
    objective,
    resolution: int = 200,
    refine_rounds: int = 3,
) -> OracleResult:
    """Grid scan over a box (dim <= 3) plus coordinate-descent refinement.

    Claimed accuracy (in argument) is the final cell diameter, recorded in
    the result detail.
    """
    lo = np.atleast_1d(np.asarray(lo, dtype=float))
    hi = np.atleast_1d(np.asarray(hi, dtype=float))
    dim = lo.size
    if dim > 3:
        raise OracleError("dense grid limited to 3 dimensions")
    cur_lo, cur_hi = lo.copy(), hi.copy()
    best_x, best_v = None, math.inf
    for _ in range(refine_rounds + 1):
        axes = [np.linspace(cur_lo[k], cur_hi[k], resolution) for k in range(dim)]
        mesh = np.meshgrid(*axes, indexing="ij")
        pts = np.stack([m.ravel() for m in mesh], axis=1)
        vals = np.array([objective(p if dim > 1 else float(p[0])) for p in pts])
        i = int(np.argmin(vals))
        best_x, best_v = pts[i], float(vals[i])
        span = (cur_hi - cur_lo) / (resolution - 1)
        cur_lo = np.maximum(lo, best_x - 2 * span)
        cur_hi = np.minimum(hi, best_x + 2 * span)
    diam = float(np.linalg.norm((cur_hi - cur_lo) / (resolution - 1)))
    return OracleResult(best_v, "DenseGrid", argopt=best_x, detail={"cell_diameter": diam})


def _equality_system(grid, marginals):
    """Mass + martingale rows (+ fixed-marginal rows) for the MOT polytope."""
    n = grid.n_paths
    rows = [np.ones(n)]
    rhs = [1.0]
    for t in range(grid.horizon):
        blk = grid.prefix_block(t)
        npfx = grid.n_prefixes(t)
        for j in range(grid.num_assets):
            inc = grid.increments(t, j)
            for p in range(npfx):
                r = np.zeros(n)
                r[p * blk : (p + 1) * blk] = inc[p * blk : (p + 1) * blk]
                rows.append(r)
                rhs.append(0.0)
    if marginals is not None:
        for t, target in enumerate(marginals):
            tw = np.asarray(
                target.weights if hasattr(target, "weights") else target, dtype=float
            )
            ids = grid.joint_node_index(t)
            for y in range(grid.n_joint_nodes(t)):
                rows.append((ids == y).astype(float))
                rhs.append(float(tw[y]))
    return np.array(rows), np.array(rhs)


def vertex_enum_mot(grid, marginals, cost, max_paths: int = 64) -> OracleResult:
    """Exact MOT value by exhaustive vertex enumeration of the polytope
    {q >= 0, mass 1, martingale rows, optional marginal rows}."""
    n = grid.n_paths
    if n > max_paths:
        raise OracleError(f"path count {n} exceeds the enumeration cap {max_paths}")
    cost = np.asarray(cost, dtype=float)
    A, b = _equality_system(grid, marginals)
    rank = np.linalg.matrix_rank(A, tol=1e-10)
    if math.comb(n, rank) > 500_000:
        raise OracleError("too many bases to enumerate")
    best_v, best_q = math.inf, None
    found_feasible = False
    for cols in itertools.combinations(range(n), rank):
        sub = A[:, cols]
        if np.linalg.matrix_rank(sub, tol=1e-10) < rank:
            continue
        q_sub, *_ = np.linalg.lstsq(sub, b, rcond=None)
        q = np.zeros(n)
        q[list(cols)] = q_sub
        if np.any(q < -1e-9):
            continue
        if np.max(np.abs(A @ q - b)) > 1e-8:
            continue
        found_feasible = True
        q = np.maximum(q, 0.0)
        v = float(np.dot(cost[np.isfinite(cost)], q[np.isfinite(cost)])) if np.any(
            np.isinf(cost)
        ) else float(np.dot(cost, q))
        if np.any(np.isinf(cost) & (q > 0)):
            v = math.inf
        if v < best_v:
            best_v, best_q = v, q
    if not found_feasible:
        return OracleResult(math.inf, "VertexEnum", detail={"status": "infeasible"})
    return OracleResult(best_v, "VertexEnum", argopt=best_q, detail={"status": "optimal"})
