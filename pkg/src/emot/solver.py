"""Measure-side solver: inf over the cone-feasible measures of expected
cost plus penalty.

Backends:

* ``lp`` — exact dense simplex for polyhedral composites (fixed marginals,
  indicator market-price / Wasserstein-ball losses, piecewise-linear
  divergences);
* ``fw`` — conditional gradient with away steps over the cone polytope for
  smooth convex penalties, each step backed by an exact LP linear
  minimization oracle; the linearization gap is the optimality
  certificate;
* ``oracle`` — closed-form reference for one-period single-start
  instances (delegates to the oracle module).

Paths with infinite cost are frozen at weight zero and removed from the
columns before anything runs.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from . import lattice, oracle, penalties, simplex
from .lattice import ConeSpec, MarketGrid, PathMeasure
from .penalties import (
    DivergenceSum,
    FixedMarginals,
    MarketPrice,
    WassersteinBall,
)

INF = math.inf

STATUS_OPTIMAL = "optimal"
STATUS_GAP = "gap_certified"
STATUS_ITER = "iteration_limit"
STATUS_INFEASIBLE = "infeasible"


class SolverError(ValueError):
    pass


@dataclass
class SolverOptions:
    backend: str = "auto"  # auto | lp | fw | oracle
    tol: float | None = None  # default depends on the backend
    max_iter: int = 50_000
    seed: int = 0

    def resolved_tol(self, backend: str) -> float:
        if self.tol is not None:
            return self.tol
        return 1e-8 if backend == "lp" else 1e-5


@dataclass
class EmotProblem:
    grid: MarketGrid
    cost: np.ndarray
    penalty: object
    cone: ConeSpec = field(default_factory=ConeSpec)
    options: SolverOptions = field(default_factory=SolverOptions)


@dataclass
class SolveReport:
    status: str
    inf_value: float
    optimizer: PathMeasure | None = None
    gap: float = 0.0
    backend: str = "lp"
    residuals: dict = field(default_factory=dict)
    certificate: dict = field(default_factory=dict)
    iterations: int = 0
    wall_time: float = 0.0

    def to_dict(self) -> dict:
        return {
            "status": self.status,
            "inf_value": None if math.isinf(self.inf_value) else self.inf_value,
            "inf_value_repr": repr(self.inf_value),
            "gap": self.gap,
            "backend": self.backend,
            "residuals": self.residuals,
            "certificate": self.certificate,
            "iterations": self.iterations,
            "optimizer": None
            if self.optimizer is None
            else [float(w) for w in self.optimizer.weights],
            "wall_time": self.wall_time,
        }


# --- constraint assembly ------------------------------------------------------


def _residual_rows(grid: MarketGrid, active: np.ndarray):
    """One row per (t, j, prefix): conditional increment mass, restricted to
    the active path columns."""
    rows = []
    meta = []
    n = grid.n_paths
    for t in range(grid.horizon):
        blk = grid.prefix_block(t)
        npfx = grid.n_prefixes(t)
        for j in range(grid.num_assets):
            inc = grid.increments(t, j)
            for p in range(npfx):
                r = np.zeros(n)
                sl = slice(p * blk, (p + 1) * blk)
                r[sl] = inc[sl]
                rows.append(r[active])
                meta.append((t, j, p))
    return np.array(rows) if rows else np.zeros((0, int(active.sum()))), meta


def _marginal_rows(grid: MarketGrid, t: int, active: np.ndarray):
    ids = grid.joint_node_index(t)
    rows = []
    for y in range(grid.n_joint_nodes(t)):
        rows.append(((ids == y).astype(float))[active])
    return np.array(rows)


@dataclass
class _LpSystem:
    """LP over z = [q_active, aux]; all variables nonnegative."""

    n_q: int
    n_aux: int = 0
    eq_rows: list = field(default_factory=list)
    eq_rhs: list = field(default_factory=list)
    ub_rows: list = field(default_factory=list)
    ub_rhs: list = field(default_factory=list)

    @property
    def n(self):
        return self.n_q + self.n_aux

    def add_aux(self, k: int) -> int:
        """Append k aux columns (zero-padded into existing rows); returns the
        starting index."""
        start = self.n
        self.n_aux += k
        return start

    def _pad(self, row_q, aux_idx=None, aux_val=None):
        r = np.zeros(self.n)
        if row_q is not None:
            r[: self.n_q] = row_q
        if aux_idx is not None:
            for i, v in zip(np.atleast_1d(aux_idx), np.atleast_1d(aux_val)):
                r[i] = v
        return r

    def add_eq(self, row_q, rhs, aux_idx=None, aux_val=None):
        self.eq_rows.append((row_q, aux_idx, aux_val))
        self.eq_rhs.append(rhs)

    def add_ub(self, row_q, rhs, aux_idx=None, aux_val=None):
        self.ub_rows.append((row_q, aux_idx, aux_val))
        self.ub_rhs.append(rhs)

    def matrices(self):
        A_eq = np.array([self._pad(*r) for r in self.eq_rows]) if self.eq_rows else None
        A_ub = np.array([self._pad(*r) for r in self.ub_rows]) if self.ub_rows else None
        return (
            A_eq,
            np.array(self.eq_rhs) if self.eq_rhs else None,
            A_ub,
            np.array(self.ub_rhs) if self.ub_rhs else None,
        )


def _build_cone_system(grid: MarketGrid, cone: ConeSpec, active: np.ndarray) -> _LpSystem:
    sys = _LpSystem(n_q=int(active.sum()))
    sys.add_eq(np.ones(sys.n_q), 1.0)  # simplex row
    if cone.tag == lattice.NULL_CONE:
        return sys
    rows, meta = _residual_rows(grid, active)
    if cone.tag == lattice.MARTINGALE:
        for r in rows:
            sys.add_eq(r, 0.0)
    elif cone.tag == lattice.NO_SHORT_SELLING:
        for r in rows:
            sys.add_ub(r, 0.0)
    elif cone.tag == lattice.NO_LONG_BUYING:
        for r in rows:
            sys.add_ub(-r, 0.0)
    elif cone.tag == lattice.EPS_MARTINGALE:
        # residual = p - m with p, m >= 0; per-time l1 budget
        per_t = {}
        for r, (t, j, p) in zip(rows, meta):
            start = sys.add_aux(2)
            sys.add_eq(r, 0.0, aux_idx=[start, start + 1], aux_val=[-1.0, 1.0])
            per_t.setdefault(t, []).extend([start, start + 1])
        for t, idxs in per_t.items():
            sys.add_ub(None, cone.eps, aux_idx=idxs, aux_val=np.ones(len(idxs)))
    return sys


def _penalty_is_lp(spec) -> bool:
    if isinstance(spec, FixedMarginals):
        return True
    if isinstance(spec, MarketPrice):
        return all(q.loss.lp_representable for per_t in spec.quotes for q in per_t)
    if isinstance(spec, WassersteinBall):
        return all(l.lp_representable for l in spec.losses)
    if isinstance(spec, DivergenceSum):
        return all(u.name in ("linear", "piecewise_linear") for u in spec.utilities)
    return False


def _add_wasserstein_ball_rows(sys, grid, active, t, ref, radius, lift=False):
    """CDF encoding of W1(q_t, ref) <= radius (single-asset marginals).

    With ``lift`` the budget row is written against a fresh epigraph column
    (returned) instead of the fixed radius.
    """
    if grid.num_assets != 1:
        raise SolverError("wasserstein penalties support d = 1 marginals only")
    nodes = grid.nodes[t][0]
    m = nodes.size
    marg = _marginal_rows(grid, t, active)
    cum_ref = np.cumsum(ref)
    gaps = np.diff(nodes)
    a_start = sys.add_aux(m - 1)
    for i in range(m - 1):
        cum_row = marg[: i + 1].sum(axis=0)
        sys.add_ub(cum_row, cum_ref[i], aux_idx=[a_start + i], aux_val=[-1.0])
        sys.add_ub(-cum_row, -cum_ref[i], aux_idx=[a_start + i], aux_val=[-1.0])
    if lift:
        w_idx = sys.add_aux(1)
        sys.add_ub(
            None,
            0.0,
            aux_idx=list(range(a_start, a_start + m - 1)) + [w_idx],
            aux_val=list(gaps) + [-1.0],
        )
        # keep the lifted polytope bounded
        diam = float(nodes[-1] - nodes[0])
        for i in range(m - 1):
            sys.add_ub(None, 1.0, aux_idx=[a_start + i], aux_val=[1.0])
        sys.add_ub(None, diam, aux_idx=[w_idx], aux_val=[1.0])
        return w_idx
    sys.add_ub(
        None,
        radius,
        aux_idx=list(range(a_start, a_start + m - 1)),
        aux_val=list(gaps),
    )
    return None


def _add_lp_penalty_rows(sys: _LpSystem, grid: MarketGrid, spec, active: np.ndarray):
    T = grid.horizon
    if isinstance(spec, FixedMarginals):
        for t in range(T + 1):
            rows = _marginal_rows(grid, t, active)
            for y, r in enumerate(rows):
                sys.add_eq(r, float(spec.targets[t][y]))
    elif isinstance(spec, MarketPrice):
        for t in range(T + 1):
            rows = _marginal_rows(grid, t, active)
            for quote in spec.quotes[t]:
                if quote.loss.kind == "zero":
                    continue
                row = quote.payoff @ rows
                r = quote.loss.radius
                sys.add_ub(row, quote.price + r)
                sys.add_ub(-row, r - quote.price)
    elif isinstance(spec, WassersteinBall):
        for t in range(T + 1):
            if spec.losses[t].kind == "zero":
                continue
            _add_wasserstein_ball_rows(
                sys, grid, active, t, spec.references[t], spec.losses[t].radius
            )
    elif isinstance(spec, DivergenceSum):
        for t in range(T + 1):
            u, ref = spec.utilities[t], spec.references[t]
            rows = _marginal_rows(grid, t, active)
            if u.name == "linear":
                for y, r in enumerate(rows):
                    sys.add_eq(r, float(ref[y]))
            elif u.name == "piecewise_linear":
                for y, r in enumerate(rows):
                    sys.add_ub(r, float(u.param * ref[y]))
            else:
                raise SolverError(f"{u.name} divergence is not LP-representable")
    else:
        raise SolverError(f"unknown penalty spec {type(spec).__name__}")


# --- public LP entry ----------------------------------------------------------


def lp_minimize(
    grid: MarketGrid,
    objective: np.ndarray,
    cone: ConeSpec = ConeSpec(lattice.NULL_CONE),
    extra_eq=None,
    extra_eq_rhs=None,
    extra_ub=None,
    extra_ub_rhs=None,
    tol: float = 1e-9,
    max_iter: int = 100_000,
):
    """Exact LP over {q >= 0, total mass 1, cone rows, extra rows}.

    Extra rows act on the full path-weight vector.  Paths with infinite
    objective are frozen at zero.  Returns (value, PathMeasure, LpResult);
    raises SolverError with the Farkas certificate attached on
    infeasibility.
    """
    objective = np.asarray(objective, dtype=float)
    active = np.isfinite(objective)
    if not np.any(active):
        raise SolverError("objective is +inf on every path")
    sys = _build_cone_system(grid, cone, active)
    if extra_eq is not None:
        for row, rhs in zip(np.atleast_2d(extra_eq), np.atleast_1d(extra_eq_rhs)):
            sys.add_eq(np.asarray(row, dtype=float)[active], float(rhs))
    if extra_ub is not None:
        for row, rhs in zip(np.atleast_2d(extra_ub), np.atleast_1d(extra_ub_rhs)):
            sys.add_ub(np.asarray(row, dtype=float)[active], float(rhs))
    c = np.zeros(sys.n)
    c[: sys.n_q] = objective[active]
    A_eq, b_eq, A_ub, b_ub = sys.matrices()
    res = simplex.solve_lp_nonneg(c, A_eq, b_eq, A_ub, b_ub, tol=tol, max_iter=max_iter)
    if res.status == simplex.INFEASIBLE:
        err = SolverError("LP infeasible")
        err.farkas = {"y_eq": res.farkas_y_eq, "y_ub": res.farkas_y_ub}
        raise err
    if res.status != simplex.OPTIMAL:
        raise SolverError(f"LP did not terminate: {res.status}")
    q = np.zeros(grid.n_paths)
    q[active] = res.x[: sys.n_q]
    return float(res.value), PathMeasure(np.maximum(q, 0.0)), res


def martingale_attainable(grid: MarketGrid, t: int, weights, tol: float = 1e-9) -> bool:
    """Does any martingale measure on the grid have this time-t marginal?"""
    weights = np.asarray(weights, dtype=float)
    rows = _marginal_rows(grid, t, np.ones(grid.n_paths, dtype=bool))
    try:
        lp_minimize(
            grid,
            np.zeros(grid.n_paths),
            ConeSpec(lattice.MARTINGALE),
            extra_eq=rows,
            extra_eq_rhs=weights,
            tol=tol,
        )
        return True
    except SolverError:
        return False


# --- smooth objectives for the conditional-gradient backend -------------------


class _DivergenceObjective:
    def __init__(self, grid, cost_active, spec, active):
        self.grid = grid
        self.c = cost_active
        self.spec = spec
        self.active = active
        self.lift_ids = [grid.joint_node_index(t)[active] for t in range(grid.horizon + 1)]
        self.n_q = int(active.sum())

    def split(self, z):
        return z[: self.n_q]

    def value(self, z):
        q = self.split(z)
        total = float(np.dot(self.c, q))
        for t in range(self.grid.horizon + 1):
            u, ref = self.spec.utilities[t], self.spec.references[t]
            qt = np.bincount(self.lift_ids[t], weights=q, minlength=ref.size)
            from .valuation import divergence

            dv = divergence(qt, ref, u)
            if math.isinf(dv):
                return INF
            total += dv
        return total

    def grad(self, z):
        q = self.split(z)
        g = self.c.copy()
        for t in range(self.grid.horizon + 1):
            u, ref = self.spec.utilities[t], self.spec.references[t]
            qt = np.bincount(self.lift_ids[t], weights=q, minlength=ref.size)
            s = np.zeros(ref.size)
            pos = ref > 0
            ratio = np.maximum(qt[pos] / ref[pos], 1e-14)
            s[pos] = u.v_star_prime(ratio)
            if np.any(~pos):
                slope = u.slope_at_inf
                s[~pos] = slope if np.isfinite(slope) else 0.0  # inf-slope nodes dropped
            g = g + s[self.lift_ids[t]]
        out = np.zeros_like(z)
        out[: self.n_q] = g
        return out


class _WassersteinPowerObjective:
    def __init__(self, cost_active, losses, w_indices, n_total):
        self.c = cost_active
        self.losses = losses
        self.w_indices = w_indices
        self.n = n_total
        self.n_q = cost_active.size

    def value(self, z):
        total = float(np.dot(self.c, z[: self.n_q]))
        for loss_fn, idx in zip(self.losses, self.w_indices):
            if idx is None:
                continue
            total += float(loss_fn.G(z[idx]))
        return total

    def grad(self, z):
        g = np.zeros(self.n)
        g[: self.n_q] = self.c
        for loss_fn, idx in zip(self.losses, self.w_indices):
            if idx is None:
                continue
            w = max(z[idx], 0.0)
            g[idx] = w ** (loss_fn.p - 1.0)
        return g


def _interior_start(A_eq, b_eq, A_ub, b_ub, n, n_q):
    """Strictly positive feasible point: maximize the minimum q-weight."""
    c = np.zeros(n + 1)
    c[-1] = -1.0  # maximize delta
    A_eq2 = np.hstack([A_eq, np.zeros((A_eq.shape[0], 1))]) if A_eq is not None else None
    rows = []
    rhs = []
    if A_ub is not None:
        rows.append(np.hstack([A_ub, np.zeros((A_ub.shape[0], 1))]))
        rhs.append(b_ub)
    bound = np.zeros((n_q, n + 1))
    bound[:, :n_q] = -np.eye(n_q)
    bound[:, -1] = 1.0  # delta - q_i <= 0
    rows.append(bound)
    rhs.append(np.zeros(n_q))
    A_ub2 = np.vstack(rows)
    b_ub2 = np.concatenate(rhs)
    res = simplex.solve_lp_nonneg(c, A_eq2, b_eq, A_ub2, b_ub2, tol=1e-10)
    if res.status != simplex.OPTIMAL:
        raise SolverError(f"interior-point LP failed: {res.status}")
    return res.x[:n], float(res.x[-1])


def _frank_wolfe(objective, sys: _LpSystem, tol: float, max_iter: int):
    """Away-step conditional gradient with exact line search and an exact LP
    linear-minimization oracle; returns (z, gap, iterations, converged)."""
    A_eq, b_eq, A_ub, b_ub = sys.matrices()
    n = sys.n

    def lmo(g):
        res = simplex.solve_lp_nonneg(g, A_eq, b_eq, A_ub, b_ub, tol=1e-10)
        if res.status == simplex.INFEASIBLE:
            err = SolverError("cone polytope is empty")
            err.farkas = {"y_eq": res.farkas_y_eq, "y_ub": res.farkas_y_ub}
            raise err
        if res.status != simplex.OPTIMAL:
            raise SolverError(f"LMO failed: {res.status}")
        return res.x

    z0, delta = _interior_start(A_eq, b_eq, A_ub, b_ub, n, sys.n_q)
    if not math.isfinite(objective.value(z0)):
        raise SolverError("no interior starting point with finite objective")
    vertices = [z0]
    alphas = [1.0]
    z = z0.copy()
    gap = INF
    it = 0
    for it in range(1, max_iter + 1):
        g = objective.grad(z)
        s = lmo(g)
        d_fw = s - z
        gap = float(-np.dot(g, d_fw))
        if gap <= tol:
            return z, gap, it, True
        # away vertex
        away_i = int(np.argmax([np.dot(g, v) for v in vertices]))
        d_away = z - vertices[away_i]
        gap_away = float(np.dot(g, vertices[away_i]) - np.dot(g, z))
        use_away = (
            len(vertices) > 1 and gap_away > gap and alphas[away_i] < 1.0 - 1e-14
        )
        if use_away:
            d = d_away
            gamma_max = alphas[away_i] / (1.0 - alphas[away_i])
        else:
            d = d_fw
            gamma_max = 1.0

        # exact 1-d convex line search on [0, gamma_max], guarded so the
        # objective stays finite
        def h(gamma):
            v = objective.value(z + gamma * d)
            return v if math.isfinite(v) else 1e300

        lo, hi = 0.0, gamma_max
        while hi > 1e-18 and not math.isfinite(objective.value(z + hi * d)):
            hi *= 0.5
        for _ in range(90):
            m1 = lo + (hi - lo) / 3.0
            m2 = hi - (hi - lo) / 3.0
            if h(m1) <= h(m2):
                hi = m2
            else:
                lo = m1
        gamma = 0.5 * (lo + hi)
        if h(gamma) > h(0.0):
            gamma = 0.0
        if gamma <= 0.0 and gap > tol:
            # stalled line search: certificate stands at the current gap
            return z, gap, it, gap <= tol
        if use_away:
            alphas = [a * (1.0 + gamma) for a in alphas]
            alphas[away_i] -= gamma
        else:
            alphas = [a * (1.0 - gamma) for a in alphas]
            matched = False
            for i, v in enumerate(vertices):
                if np.array_equal(v, s):
                    alphas[i] += gamma
                    matched = True
                    break
            if not matched:
                vertices.append(s)
                alphas.append(gamma)
        # drop dead vertices
        keep = [i for i, a in enumerate(alphas) if a > 1e-15]
        vertices = [vertices[i] for i in keep]
        alphas = [alphas[i] for i in keep]
        ssum = sum(alphas)
        alphas = [a / ssum for a in alphas]
        z = np.zeros(n)
        for a, v in zip(alphas, vertices):
            z += a * v
    return z, gap, it, False


# --- dispatch -----------------------------------------------------------------


def _drop_infinite_slope_paths(grid, cost, spec):
    """Paths whose marginals charge a reference-null node under an
    infinite-slope divergence are forced to zero weight."""
    cost = np.asarray(cost, dtype=float).copy()
    if isinstance(spec, DivergenceSum):
        for t in range(grid.horizon + 1):
            u, ref = spec.utilities[t], spec.references[t]
            if np.isfinite(u.slope_at_inf):
                continue
            null_nodes = np.flatnonzero(np.asarray(ref) <= 0.0)
            if null_nodes.size:
                ids = grid.joint_node_index(t)
                cost[np.isin(ids, null_nodes)] = INF
    return cost


def solve_inf(problem: EmotProblem) -> SolveReport:
    """Solve the penalized measure-side minimization with certificates."""
    t0 = time.perf_counter()
    grid, spec, cone = problem.grid, problem.penalty, problem.cone
    opts = problem.options
    backend = opts.backend
    lp_ok = _penalty_is_lp(spec)
    if backend == "auto":
        backend = "lp" if lp_ok else "fw"
    if backend == "lp" and not lp_ok:
        raise SolverError("penalty is not LP-representable; use the fw backend")
    tol = opts.resolved_tol(backend)

    cost = _drop_infinite_slope_paths(grid, problem.cost, spec)
    active = np.isfinite(cost)
    if not np.any(active):
        return SolveReport(
            status=STATUS_INFEASIBLE,
            inf_value=INF,
            backend=backend,
            certificate={"reason": "cost (or divergence support) is +inf everywhere"},
            wall_time=time.perf_counter() - t0,
        )

    if backend == "oracle":
        rep = _oracle_backend(grid, cost, spec, cone)
        rep.wall_time = time.perf_counter() - t0
        return rep

    if backend == "lp":
        sys = _build_cone_system(grid, cone, active)
        _add_lp_penalty_rows(sys, grid, spec, active)
        c = np.zeros(sys.n)
        c[: sys.n_q] = cost[active]
        A_eq, b_eq, A_ub, b_ub = sys.matrices()
        res = simplex.solve_lp_nonneg(
            c, A_eq, b_eq, A_ub, b_ub, tol=1e-10, max_iter=opts.max_iter
        )
        if res.status == simplex.INFEASIBLE:
            return SolveReport(
                status=STATUS_INFEASIBLE,
                inf_value=INF,
                backend="lp",
                certificate={
                    "farkas_y_eq": _tolist(res.farkas_y_eq),
                    "farkas_y_ub": _tolist(res.farkas_y_ub),
                },
                wall_time=time.perf_counter() - t0,
            )
        if res.status != simplex.OPTIMAL:
            return SolveReport(
                status=STATUS_ITER,
                inf_value=INF,
                backend="lp",
                wall_time=time.perf_counter() - t0,
            )
        q = np.zeros(grid.n_paths)
        q[active] = np.maximum(res.x[: sys.n_q], 0.0)
        Q = PathMeasure(q)
        ok, wit = lattice.cone_membership(grid, cone, Q, tol=1e-7)
        return SolveReport(
            status=STATUS_OPTIMAL,
            inf_value=float(res.value),
            optimizer=Q,
            gap=float(res.compl_slack_residual),
            backend="lp",
            residuals={"cone_ok": bool(ok), "cone_witness": wit},
            iterations=res.iterations,
            wall_time=time.perf_counter() - t0,
        )

    # conditional-gradient backend
    sys = _build_cone_system(grid, cone, active)
    if isinstance(spec, DivergenceSum):
        objective = _DivergenceObjective(grid, cost[active], spec, active)
    elif isinstance(spec, WassersteinBall):
        w_indices = []
        for t in range(grid.horizon + 1):
            if spec.losses[t].kind == "power":
                w_indices.append(
                    _add_wasserstein_ball_rows(
                        sys, grid, active, t, spec.references[t], 0.0, lift=True
                    )
                )
            elif spec.losses[t].kind == "zero":
                w_indices.append(None)
            else:
                _add_wasserstein_ball_rows(
                    sys, grid, active, t, spec.references[t], spec.losses[t].radius
                )
                w_indices.append(None)
        objective = _WassersteinPowerObjective(cost[active], spec.losses, w_indices, sys.n)
    elif isinstance(spec, MarketPrice):
        objective = _MarketPriceObjective(grid, cost[active], spec, active, sys.n)
    else:
        raise SolverError("fw backend supports divergence, wasserstein and market-price penalties")

    try:
        z, gap, it, converged = _frank_wolfe(objective, sys, tol, opts.max_iter)
    except SolverError as e:
        return SolveReport(
            status=STATUS_INFEASIBLE,
            inf_value=INF,
            backend="fw",
            certificate=getattr(e, "farkas", {"reason": str(e)}),
            wall_time=time.perf_counter() - t0,
        )
    q = np.zeros(grid.n_paths)
    q[active] = np.maximum(z[: int(active.sum())], 0.0)
    Q = PathMeasure(q)
    value = objective.value(z)
    status = STATUS_GAP if converged else STATUS_ITER
    ok, wit = lattice.cone_membership(grid, cone, Q, tol=1e-7)
    return SolveReport(
        status=status,
        inf_value=float(value),
        optimizer=Q,
        gap=float(gap),
        backend="fw",
        residuals={"cone_ok": bool(ok), "cone_witness": wit},
        certificate={"linearization_gap": float(gap), "tolerance": tol},
        iterations=it,
        wall_time=time.perf_counter() - t0,
    )


class _MarketPriceObjective:
    """Smooth (power-loss) market-price composite on the cone polytope."""

    def __init__(self, grid, cost_active, spec, active, n_total):
        self.grid = grid
        self.c = cost_active
        self.spec = spec
        self.rows = []
        for t in range(grid.horizon + 1):
            marg = _marginal_rows(grid, t, active)
            self.rows.append([q.payoff @ marg for q in spec.quotes[t]])
        self.n = n_total
        self.n_q = cost_active.size

    def value(self, z):
        q = z[: self.n_q]
        total = float(np.dot(self.c, q))
        for t in range(self.grid.horizon + 1):
            for quote, row in zip(self.spec.quotes[t], self.rows[t]):
                total += float(quote.loss.G(abs(float(np.dot(row, q)) - quote.price)))
        return total

    def grad(self, z):
        q = z[: self.n_q]
        g = np.zeros(self.n)
        g[: self.n_q] = self.c
        for t in range(self.grid.horizon + 1):
            for quote, row in zip(self.spec.quotes[t], self.rows[t]):
                miss = float(np.dot(row, q)) - quote.price
                if quote.loss.kind == "power":
                    g[: self.n_q] += (
                        math.copysign(abs(miss) ** (quote.loss.p - 1.0), miss) * row
                    )
        return g


def _oracle_backend(grid, cost, spec, cone) -> SolveReport:
    if grid.horizon != 1 or grid.num_assets != 1 or not grid.deterministic_start():
        raise SolverError("oracle backend supports one-period single-start instances")
    nodes = grid.nodes[1][0]
    x0 = grid.spot()
    active = np.isfinite(cost)
    if isinstance(spec, FixedMarginals):
        res = oracle.vertex_enum_mot(grid, list(spec.targets), cost)
        status = STATUS_OPTIMAL if res.detail.get("status") == "optimal" else STATUS_INFEASIBLE
        return SolveReport(
            status=status,
            inf_value=res.value,
            optimizer=None if res.argopt is None else PathMeasure(res.argopt),
            backend="oracle",
            certificate={"method": res.method},
        )
    if isinstance(spec, DivergenceSum) and spec.utilities[1].name == "exponential":
        ref = spec.references[1]
        if np.any(ref <= 0):
            raise SolverError("oracle backend needs a full-support reference")
        # paths are in bijection with time-1 nodes on this grid shape
        c1 = cost  # one cost entry per node
        if cone.tag == lattice.MARTINGALE:
            res = oracle.gibbs_tilt(nodes[active], ref[active], c1[active], x0)
        elif cone.tag == lattice.NULL_CONE:
            res = oracle.gibbs_free(nodes[active], ref[active], c1[active])
        else:
            raise SolverError("oracle backend supports martingale or null cones")
        q = np.zeros(grid.n_paths)
        q[active] = res.argopt
        return SolveReport(
            status=STATUS_OPTIMAL,
            inf_value=res.value,
            optimizer=PathMeasure(q),
            backend="oracle",
            certificate={"method": res.method, **{k: float(v) for k, v in res.detail.items()}},
        )
    raise SolverError("oracle backend supports fixed-marginal or exponential-divergence specs")


def solve_eot(problem: EmotProblem) -> SolveReport:
    """Measure-side problem without the market: null hedging cone."""
    if problem.cone.tag != lattice.NULL_CONE:
        raise SolverError("solve_eot requires the null cone")
    return solve_inf(problem)


def mot_value(grid: MarketGrid, marginals, cost, options: SolverOptions | None = None):
    """Classical MOT: exact LP with pinned marginals over the martingale cone.

    Returns (value, optimizer, report); Infeasible reports carry the Farkas
    certificate (marginals out of convex order).
    """
    spec = FixedMarginals.of(marginals)
    problem = EmotProblem(
        grid,
        np.asarray(cost, dtype=float),
        spec,
        ConeSpec(lattice.MARTINGALE),
        options or SolverOptions(backend="lp"),
    )
    rep = solve_inf(problem)
    return rep.inf_value, rep.optimizer, rep


def measure_to_csv(grid: MarketGrid, Q: PathMeasure) -> str:
    """Optimizer export: path index, coordinates, weight."""
    lines = ["path_index," + ",".join(
        f"x{t}_{j}" for t in range(grid.horizon + 1) for j in range(grid.num_assets)
    ) + ",weight"]
    for i in range(grid.n_paths):
        coords = ",".join(
            repr(float(v)) for v in grid.path_values[i].ravel()
        )
        lines.append(f"{i},{coords},{float(Q.weights[i])!r}")
    return "\n".join(lines) + "\n"


def _tolist(a):
    return None if a is None else [float(v) for v in a]
