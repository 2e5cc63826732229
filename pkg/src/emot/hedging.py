"""Hedging side: sup over semistatic strategies of the summed static
valuations, subject to the pathwise domination constraint

    beta + sum_t phi_t(x_t) + I^Delta(x) <= c(x).

For polyhedral penalties (fixed marginals, indicator market-price or
Wasserstein-ball losses, linear and capped-linear divergences) the sup
problem is the exact LP dual of the measure-side LP, so the witness is
extracted from the simplex duals and the duality gap is at rounding
level.  Smooth divergence penalties go through a log-barrier
maximization whose reported value is always backed by a feasible
strategy, so it is a certified lower bound.
"""

from __future__ import annotations

import dataclasses
import math
import time
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize

from . import lattice, solver, valuation
from .lattice import ConeSpec, MarketGrid, SemistaticStrategy
from .penalties import DivergenceSum, FixedMarginals, MarketPrice, WassersteinBall
from .solver import EmotProblem, SolverError, SolverOptions

INF = math.inf

STATUS_OPTIMAL = solver.STATUS_OPTIMAL
STATUS_GAP = solver.STATUS_GAP
STATUS_ITER = solver.STATUS_ITER
STATUS_INFEASIBLE = solver.STATUS_INFEASIBLE


class HedgeError(ValueError):
    pass


@dataclass
class HedgeProblem:
    grid: MarketGrid
    cost: np.ndarray
    penalty: object
    cone: ConeSpec = field(default_factory=ConeSpec)
    options: SolverOptions = field(default_factory=SolverOptions)


@dataclass
class HedgeReport:
    status: str
    sup_value: float
    strategy: SemistaticStrategy | None = None
    margin: float = math.nan
    valuations: list = field(default_factory=list)
    cone_cost: float = 0.0
    gap: float | None = None
    backend: str = "lp-dual"
    iterations: int = 0
    wall_time: float = 0.0
    detail: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        strat = None
        if self.strategy is not None:
            strat = {
                "beta": float(self.strategy.beta),
                "static": [[float(v) for v in phi] for phi in self.strategy.static],
                "dynamic": [
                    [[float(v) for v in dj] for dj in dt] for dt in self.strategy.dynamic
                ],
            }
        return {
            "status": self.status,
            "sup_value": None if math.isinf(self.sup_value) else self.sup_value,
            "sup_value_repr": repr(self.sup_value),
            "margin": self.margin,
            "valuations": [float(v) for v in self.valuations],
            "cone_cost": self.cone_cost,
            "gap": self.gap,
            "backend": self.backend,
            "iterations": self.iterations,
            "strategy": strat,
            "wall_time": self.wall_time,
            "detail": self.detail,
        }


def strategy_payoff(grid: MarketGrid, strategy: SemistaticStrategy) -> np.ndarray:
    """beta + static legs + stochastic integral, pathwise."""
    return (
        strategy.beta
        + lattice.static_sum(grid, strategy.static)
        + lattice.stochastic_integral(grid, strategy)
    )


def feasible(grid: MarketGrid, strategy: SemistaticStrategy, cost, tol: float = 1e-9):
    """Pathwise domination check on the finite-cost paths.

    Returns (ok, margin) where margin = min over paths of c - payoff;
    feasible means margin >= -tol.
    """
    cost = np.asarray(cost, dtype=float)
    pay = strategy_payoff(grid, strategy)
    active = np.isfinite(cost)
    if not np.any(active):
        return True, INF
    margin = float(np.min(cost[active] - pay[active]))
    return margin >= -tol, margin


def cone_strategy_cost(grid: MarketGrid, cone: ConeSpec, dynamic) -> float:
    """Price the hedger pays for the dynamic leg: eps * sum_t max_j
    sup-norm of the time-t positions on the eps-martingale cone, zero on
    the exact cones."""
    if cone.tag != lattice.EPS_MARTINGALE:
        return 0.0
    total = 0.0
    for dt in dynamic:
        mx = 0.0
        for dj in dt:
            arr = np.asarray(dj, dtype=float)
            if arr.size:
                mx = max(mx, float(np.max(np.abs(arr))))
        total += mx
    return cone.eps * total


# --- LP dual extraction -------------------------------------------------------


def _zero_dynamic(grid):
    return [
        [np.zeros(grid.n_prefixes(t)) for _ in range(grid.num_assets)]
        for t in range(grid.horizon)
    ]


def _extract_dual_witness(grid, spec, cone, res, active):
    """Map the inf-LP duals onto (beta, static, dynamic, per-time values,
    cone cost).  Row ordering mirrors the constraint assembly exactly."""
    T = grid.horizon
    y_eq = res.y_eq
    y_ub = res.y_ub
    eq_pos = 0
    ub_pos = 0
    beta = float(y_eq[eq_pos])
    eq_pos += 1

    dynamic = _zero_dynamic(grid)
    _, meta = solver._residual_rows(grid, active)
    if cone.tag in (lattice.MARTINGALE, lattice.EPS_MARTINGALE):
        for (t, j, p) in meta:
            dynamic[t][j][p] = float(y_eq[eq_pos])
            eq_pos += 1
    elif cone.tag == lattice.NO_SHORT_SELLING:
        for (t, j, p) in meta:
            dynamic[t][j][p] = float(y_ub[ub_pos])
            ub_pos += 1
    elif cone.tag == lattice.NO_LONG_BUYING:
        for (t, j, p) in meta:
            dynamic[t][j][p] = -float(y_ub[ub_pos])
            ub_pos += 1

    cone_cost = 0.0
    if cone.tag == lattice.EPS_MARTINGALE:
        seen = sorted({t for t, _, _ in meta})
        for _t in seen:
            cone_cost += -cone.eps * float(y_ub[ub_pos])
            ub_pos += 1

    static = [np.zeros(grid.n_joint_nodes(t)) for t in range(T + 1)]
    vals = []
    if isinstance(spec, (FixedMarginals,)) or (
        isinstance(spec, DivergenceSum)
        and all(u.name == "linear" for u in spec.utilities)
    ):
        targets = (
            spec.targets
            if isinstance(spec, FixedMarginals)
            else [np.asarray(r, dtype=float) for r in spec.references]
        )
        for t in range(T + 1):
            k = grid.n_joint_nodes(t)
            static[t] = np.array(y_eq[eq_pos : eq_pos + k], dtype=float)
            eq_pos += k
            vals.append(float(np.dot(np.asarray(targets[t], dtype=float), static[t])))
    elif isinstance(spec, DivergenceSum):
        # per-time mix of pinned (linear) and capped (piecewise) marginals
        for t in range(T + 1):
            u, ref = spec.utilities[t], np.asarray(spec.references[t], dtype=float)
            k = grid.n_joint_nodes(t)
            if u.name == "linear":
                static[t] = np.array(y_eq[eq_pos : eq_pos + k], dtype=float)
                eq_pos += k
                vals.append(float(np.dot(ref, static[t])))
            else:  # piecewise_linear caps q_t <= alpha * ref
                static[t] = np.array(y_ub[ub_pos : ub_pos + k], dtype=float)
                ub_pos += k
                vals.append(float(u.param * np.dot(ref, static[t])))
    elif isinstance(spec, MarketPrice):
        for t in range(T + 1):
            val_t = 0.0
            phi = np.zeros(grid.n_joint_nodes(t))
            for quote in spec.quotes[t]:
                if quote.loss.kind == "zero":
                    continue
                w_plus = float(y_ub[ub_pos])
                w_minus = float(y_ub[ub_pos + 1])
                ub_pos += 2
                pos = w_plus - w_minus
                phi += pos * np.asarray(quote.payoff, dtype=float)
                val_t += pos * quote.price + quote.loss.radius * (w_plus + w_minus)
            static[t] = phi
            vals.append(val_t)
    elif isinstance(spec, WassersteinBall):
        for t in range(T + 1):
            loss_fn = spec.losses[t]
            if loss_fn.kind == "zero":
                static[t] = np.zeros(grid.n_joint_nodes(t))
                vals.append(0.0)
                continue
            ref = np.asarray(spec.references[t], dtype=float)
            m = ref.size
            cum_ref = np.cumsum(ref)[:-1]
            diff = np.zeros(m - 1)
            val_t = 0.0
            for i in range(m - 1):
                w_plus = float(y_ub[ub_pos])
                w_minus = float(y_ub[ub_pos + 1])
                ub_pos += 2
                diff[i] = w_plus - w_minus
                val_t += (w_plus - w_minus) * cum_ref[i]
            w_budget = float(y_ub[ub_pos])
            ub_pos += 1
            val_t += loss_fn.radius * w_budget
            # potential at node k is the tail sum of the cumulative-row duals
            psi = np.concatenate([np.cumsum(diff[::-1])[::-1], [0.0]])
            static[t] = psi
            vals.append(val_t)
    else:
        raise HedgeError(f"no dual extraction for {type(spec).__name__}")
    return beta, static, dynamic, vals, cone_cost


def _solve_sup_lp(problem: HedgeProblem, t0: float) -> HedgeReport:
    grid, spec, cone = problem.grid, problem.penalty, problem.cone
    cost = solver._drop_infinite_slope_paths(grid, problem.cost, spec)
    active = np.isfinite(cost)
    sys = solver._build_cone_system(grid, cone, active)
    solver._add_lp_penalty_rows(sys, grid, spec, active)
    c = np.zeros(sys.n)
    c[: sys.n_q] = cost[active]
    A_eq, b_eq, A_ub, b_ub = sys.matrices()
    from . import simplex

    res = simplex.solve_lp_nonneg(
        c, A_eq, b_eq, A_ub, b_ub, tol=1e-10, max_iter=problem.options.max_iter
    )
    if res.status == simplex.INFEASIBLE:
        # empty measure side: the hedger's value is +inf (take beta -> inf
        # along the Farkas ray); report unbounded-above via +inf
        return HedgeReport(
            status=STATUS_INFEASIBLE,
            sup_value=INF,
            backend="lp-dual",
            detail={"reason": "measure side infeasible; sup is unbounded"},
            wall_time=time.perf_counter() - t0,
        )
    if res.status != simplex.OPTIMAL:
        return HedgeReport(
            status=STATUS_ITER,
            sup_value=-INF,
            backend="lp-dual",
            wall_time=time.perf_counter() - t0,
        )
    beta, static, dynamic, vals, cone_cost = _extract_dual_witness(
        grid, spec, cone, res, active
    )
    strategy = SemistaticStrategy(static=static, dynamic=dynamic, beta=beta)
    recon = abs(float(res.value) - (beta + sum(vals) - cone_cost))
    ok, margin = feasible(grid, strategy, cost, tol=1e-9)
    correction = min(margin, 0.0)
    if correction < 0.0:
        # restore exact pathwise domination via the cash leg
        strategy = dataclasses.replace(strategy, beta=strategy.beta + correction)
        margin -= correction
    sup_value = strategy.beta + sum(vals) - cone_cost
    return HedgeReport(
        status=STATUS_OPTIMAL,
        sup_value=float(sup_value),
        strategy=strategy,
        margin=float(margin),
        valuations=vals,
        cone_cost=cone_cost,
        gap=float(res.value) - float(sup_value),
        backend="lp-dual",
        iterations=res.iterations,
        detail={"lp_value": float(res.value), "reconstruction_error": recon},
        wall_time=time.perf_counter() - t0,
    )


# --- barrier path for smooth divergence penalties ------------------------------


class _BarrierObjective:
    """Concave objective sum_t S_t(phi_t) - cone cost + mu * sum log slack."""

    def __init__(self, grid, cost, spec, cone, active):
        if grid.num_assets != 1:
            raise HedgeError("smooth sup solver supports single-asset grids")
        self.grid = grid
        self.spec = spec
        self.cone = cone
        self.active = active
        self.cost_a = cost[active]
        self.T = grid.horizon
        self.x0 = grid.spot(0)
        self.nodes = [grid.nodes[t][0] for t in range(self.T + 1)]
        self.node_ids = [grid.joint_node_index(t)[active] for t in range(self.T + 1)]
        self.alpha_mode = "free" if cone.tag == lattice.MARTINGALE else 0.0
        # variable layout: phi_0 .. phi_T, then dynamic (t, prefix)
        self.offsets = []
        off = 0
        for t in range(self.T + 1):
            self.offsets.append(off)
            off += self.nodes[t].size
        self.dyn_off = off
        self.with_dyn = cone.tag != lattice.NULL_CONE
        self.dyn_slices = []
        if self.with_dyn:
            for t in range(self.T):
                k = grid.n_prefixes(t)
                self.dyn_slices.append(slice(off, off + k))
                off += k
        self.n = off
        self.inc = [grid.increments(t, 0)[active] for t in range(self.T)]
        blocks = [grid.prefix_block(t) for t in range(self.T)]
        idx = np.flatnonzero(active)
        self.pfx = [idx // blocks[t] for t in range(self.T)]

    def split(self, theta):
        phis = [
            theta[self.offsets[t] : self.offsets[t] + self.nodes[t].size]
            for t in range(self.T + 1)
        ]
        deltas = [theta[s] for s in self.dyn_slices] if self.with_dyn else []
        return phis, deltas

    def slack(self, theta):
        phis, deltas = self.split(theta)
        s = self.cost_a.copy()
        for t in range(self.T + 1):
            s -= phis[t][self.node_ids[t]]
        for t, d in enumerate(deltas):
            s -= d[self.pfx[t]] * self.inc[t]
        return s

    def statics(self, theta):
        phis, _ = self.split(theta)
        out = []
        for t in range(self.T + 1):
            alpha = None if self.alpha_mode == "free" else self.alpha_mode
            out.append(
                valuation.stock_additive_value(
                    phis[t],
                    np.asarray(self.spec.references[t], dtype=float),
                    self.spec.utilities[t],
                    self.nodes[t],
                    self.x0,
                    alpha=alpha,
                )
            )
        return out

    def cone_cost(self, deltas):
        if self.cone.tag != lattice.EPS_MARTINGALE or not deltas:
            return 0.0
        return self.cone.eps * sum(
            float(np.max(np.abs(d))) if d.size else 0.0 for d in deltas
        )

    def exact_value(self, theta):
        _, deltas = self.split(theta)
        vals = self.statics(theta)
        return valuation.oce(vals) - self.cone_cost(deltas), vals

    @staticmethod
    def _log_ext(s, s0):
        """log(s) for s >= s0, extended C^1-concave quadratically below so
        line searches never see a cliff.  Returns (values, derivatives)."""
        s = np.asarray(s, dtype=float)
        below = s < s0
        vals = np.where(below, 1.0, np.log(np.maximum(s, s0)))
        dvals = np.where(below, 1.0, 1.0 / np.maximum(s, s0))
        if np.any(below):
            d = (s[below] - s0) / s0
            vals[below] = math.log(s0) + d - 0.5 * d * d
            dvals[below] = (1.0 - d) / s0
        return vals, dvals

    def value_grad(self, theta, mu):
        phis, deltas = self.split(theta)
        s = self.slack(theta)
        g = np.zeros(self.n)
        total = 0.0
        vals = self.statics(theta)
        for t in range(self.T + 1):
            oce_t = vals[t]
            if not math.isfinite(oce_t.value):
                return -1e20, np.zeros(self.n)
            total += oce_t.value
            ref = np.asarray(self.spec.references[t], dtype=float)
            a = oce_t.alpha if oce_t.alpha is not None else 0.0
            z = phis[t] + a * self.nodes[t] + (oce_t.lam or 0.0)
            g[self.offsets[t] : self.offsets[t] + ref.size] += ref * np.asarray(
                self.spec.utilities[t].u_prime(z), dtype=float
            )
        total -= self.cone_cost(deltas)
        if self.cone.tag == lattice.EPS_MARTINGALE:
            for t, d in enumerate(deltas):
                if d.size:
                    i = int(np.argmax(np.abs(d)))
                    sub = np.zeros(d.size)
                    sub[i] = math.copysign(self.cone.eps, d[i]) if d[i] != 0 else 0.0
                    g[self.dyn_slices[t]] -= sub
        logs, inv = self._log_ext(s, mu)
        total += mu * float(np.sum(logs))
        for t in range(self.T + 1):
            gt = np.zeros(self.nodes[t].size)
            np.add.at(gt, self.node_ids[t], inv)
            g[self.offsets[t] : self.offsets[t] + gt.size] -= mu * gt
        for t in range(self.T):
            if self.with_dyn:
                gt = np.zeros(self.grid.n_prefixes(t))
                np.add.at(gt, self.pfx[t], inv * self.inc[t])
                g[self.dyn_slices[t]] -= mu * gt
        return total, g


def _barrier_run(obj: _BarrierObjective, theta0, mu0=1.0, mu_min=2e-8):
    theta = theta0.copy()
    mu = mu0
    total_iters = 0
    while mu > mu_min:
        r = optimize.minimize(
            lambda th: tuple(-v for v in obj.value_grad(th, mu)),
            theta,
            jac=True,
            method="L-BFGS-B",
            options={"maxiter": 400, "ftol": 1e-15, "gtol": 1e-11},
        )
        theta = r.x
        total_iters += int(r.nit)
        mu *= 0.2
    return theta, total_iters


def _barrier_starts(obj: _BarrierObjective, inf_report):
    starts = []
    if inf_report is not None and inf_report.optimizer is not None:
        theta = np.zeros(obj.n)
        q = inf_report.optimizer
        for t in range(obj.T + 1):
            u = obj.spec.utilities[t]
            ref = np.asarray(obj.spec.references[t], dtype=float)
            qt = lattice.marginal(obj.grid, q, t).weights
            ratio = np.ones_like(ref)
            pos = ref > 0
            ratio[pos] = np.maximum(qt[pos] / ref[pos], 1e-10)
            if u.differentiable_conjugate:
                phi = -np.asarray(u.v_star_prime(ratio), dtype=float)
            else:
                phi = np.zeros_like(ref)
            theta[obj.offsets[t] : obj.offsets[t] + ref.size] = phi
        s = obj.slack(theta)
        shift = float(np.min(s)) - 0.5
        theta[obj.offsets[0] : obj.offsets[0] + obj.nodes[0].size] += shift
        starts.append(theta)
    base = np.zeros(obj.n)
    floor = float(np.min(obj.cost_a)) - 1.0
    base[obj.offsets[0] : obj.offsets[0] + obj.nodes[0].size] = floor
    starts.append(base)
    return starts


def _solve_sup_barrier(problem: HedgeProblem, inf_report, t0: float) -> HedgeReport:
    grid, spec, cone = problem.grid, problem.penalty, problem.cone
    if cone.tag in (lattice.NO_SHORT_SELLING, lattice.NO_LONG_BUYING):
        raise HedgeError("smooth sup solver supports martingale, eps and null cones")
    cost = solver._drop_infinite_slope_paths(grid, problem.cost, spec)
    active = np.isfinite(cost)
    if not np.any(active):
        return HedgeReport(
            status=STATUS_INFEASIBLE,
            sup_value=INF,
            backend="barrier",
            detail={"reason": "no admissible paths"},
            wall_time=time.perf_counter() - t0,
        )
    obj = _BarrierObjective(grid, cost, spec, cone, active)
    tol = problem.options.resolved_tol("fw")
    best = None
    iters = 0
    for theta0 in _barrier_starts(obj, inf_report):
        if np.any(obj.slack(theta0) <= 0.0):
            continue
        theta, it = _barrier_run(obj, theta0)
        iters += it
        val, vals = obj.exact_value(theta)
        if best is None or val > best[0]:
            best = (val, vals, theta)
        if (
            inf_report is not None
            and math.isfinite(inf_report.inf_value)
            and inf_report.inf_value - val <= max(tol, 1e-5)
        ):
            break  # already certified against the measure side
    if best is None:
        raise HedgeError("no strictly feasible starting strategy found")
    val, vals, theta = best
    s_min = float(np.min(obj.slack(theta)))
    if s_min < 0.0:
        # pull the iterate back inside with a cash shift; the per-time
        # valuations are cash additive so the exact value moves by s_min
        theta = theta.copy()
        theta[obj.offsets[0] : obj.offsets[0] + obj.nodes[0].size] += s_min
        val, vals = obj.exact_value(theta)
    phis, deltas = obj.split(theta)
    dynamic = _zero_dynamic(grid)
    for t, d in enumerate(deltas):
        dynamic[t][0] = np.asarray(d, dtype=float)
    strategy = SemistaticStrategy(
        static=[np.asarray(p, dtype=float) for p in phis], dynamic=dynamic, beta=0.0
    )
    _, margin = feasible(grid, strategy, cost, tol=1e-9)
    gap = None
    status = STATUS_GAP
    if inf_report is not None and math.isfinite(inf_report.inf_value):
        gap = float(inf_report.inf_value - val)
        status = STATUS_GAP if gap <= max(tol, 1e-4) else STATUS_ITER
    return HedgeReport(
        status=status,
        sup_value=float(val),
        strategy=strategy,
        margin=float(margin),
        valuations=[float(v.value) for v in vals],
        cone_cost=obj.cone_cost(deltas),
        gap=gap,
        backend="barrier",
        iterations=iters,
        wall_time=time.perf_counter() - t0,
    )


def solve_sup(problem: HedgeProblem, inf_report=None) -> HedgeReport:
    """Maximize the summed static valuations over dominated semistatic
    strategies; the reported value is always attained by the returned
    (feasibility-checked) strategy."""
    t0 = time.perf_counter()
    if solver._penalty_is_lp(problem.penalty):
        return _solve_sup_lp(problem, t0)
    if not isinstance(problem.penalty, DivergenceSum):
        raise HedgeError(
            "sup side supports polyhedral penalties and divergence families"
        )
    if inf_report is None:
        inf_report = solver.solve_inf(
            EmotProblem(
                problem.grid,
                problem.cost,
                problem.penalty,
                problem.cone,
                problem.options,
            )
        )
    return _solve_sup_barrier(problem, inf_report, t0)


def superhedge(problem: HedgeProblem, inf_report=None) -> HedgeReport:
    """Upper price: smallest seller valuation, computed as the negated sub
    problem on the negated payoff (the strategy signs flip back)."""
    flipped = HedgeProblem(
        problem.grid,
        -np.asarray(problem.cost, dtype=float),
        problem.penalty,
        problem.cone,
        problem.options,
    )
    rep = solve_sup(flipped, inf_report)
    if rep.strategy is not None:
        rep.strategy = SemistaticStrategy(
            static=[-np.asarray(p, dtype=float) for p in rep.strategy.static],
            dynamic=[
                [-np.asarray(dj, dtype=float) for dj in dt] for dt in rep.strategy.dynamic
            ],
            beta=-rep.strategy.beta,
        )
    rep.sup_value = -rep.sup_value
    rep.valuations = [-v for v in rep.valuations]
    return rep


def subhedge_no_options(grid: MarketGrid, cost, cone: ConeSpec = ConeSpec()):
    """Purely dynamic lower price: max m with m + I^Delta <= c pathwise.

    Delta is sign-restricted on the one-sided cones and pays the sup-norm
    charge on the eps-martingale cone.  Returns (value, strategy, margin).
    """
    from . import simplex

    cost = np.asarray(cost, dtype=float)
    active = np.isfinite(cost)
    if not np.any(active):
        raise HedgeError("cost is +inf on every path")
    n_act = int(active.sum())
    idx = np.flatnonzero(active)
    dyn_meta = []
    if cone.tag != lattice.NULL_CONE:
        for t in range(grid.horizon):
            for j in range(grid.num_assets):
                for p in range(grid.n_prefixes(t)):
                    dyn_meta.append((t, j, p))
    n_dyn = len(dyn_meta)
    n_u = grid.horizon if cone.tag == lattice.EPS_MARTINGALE else 0
    n = 1 + n_dyn + n_u  # m, Delta, per-time norm bounds
    free = np.zeros(n, dtype=bool)
    free[0] = True
    if cone.tag in (lattice.MARTINGALE, lattice.EPS_MARTINGALE):
        free[1 : 1 + n_dyn] = True
    # objective: maximize m - eps * sum u  ->  minimize -m + eps * sum u
    c_lp = np.zeros(n)
    c_lp[0] = -1.0
    if n_u:
        c_lp[1 + n_dyn :] = cone.eps
    rows = []
    rhs = []
    sgn = -1.0 if cone.tag == lattice.NO_SHORT_SELLING else 1.0
    for i in idx:
        r = np.zeros(n)
        r[0] = 1.0
        for k, (t, j, p) in enumerate(dyn_meta):
            blk = grid.prefix_block(t)
            if i // blk == p:
                r[1 + k] = sgn * grid.increments(t, j)[i]
        rows.append(r)
        rhs.append(cost[i])
    if n_u:
        for k, (t, j, p) in enumerate(dyn_meta):
            for s in (1.0, -1.0):
                r = np.zeros(n)
                r[1 + k] = s
                r[1 + n_dyn + t] = -1.0
                rows.append(r)
                rhs.append(0.0)
    res = simplex.solve_lp(
        c_lp, None, None, np.array(rows), np.array(rhs), free=free, tol=1e-11
    )
    if res.status != simplex.OPTIMAL:
        raise HedgeError(f"dynamic subhedge LP failed: {res.status}")
    m = float(res.x[0])
    dynamic = _zero_dynamic(grid)
    for k, (t, j, p) in enumerate(dyn_meta):
        dynamic[t][j][p] = sgn * float(res.x[1 + k])
    strategy = SemistaticStrategy(
        static=[np.zeros(grid.n_joint_nodes(t)) for t in range(grid.horizon + 1)],
        dynamic=dynamic,
        beta=m,
    )
    _, margin = feasible(grid, strategy, cost, tol=1e-9)
    value = m - cone_strategy_cost(grid, cone, dynamic)
    return value, strategy, margin


# --- witness post-processing ----------------------------------------------------


def call_decomposition(nodes, phi):
    """Represent a static leg on a 1-d node set as cash + forward + calls:
    phi(x) = level + slope * x + sum_k w_k (x - K_k)^+ exactly on the grid."""
    nodes = np.asarray(nodes, dtype=float)
    phi = np.asarray(phi, dtype=float)
    if nodes.size != phi.size or nodes.size < 1:
        raise HedgeError("node/leg size mismatch")
    if nodes.size == 1:
        return {"level": float(phi[0]), "slope": 0.0, "strikes": [], "weights": []}
    slopes = np.diff(phi) / np.diff(nodes)
    level = float(phi[0] - slopes[0] * nodes[0])
    kinks = np.diff(slopes)
    keep = np.abs(kinks) > 1e-12
    return {
        "level": level,
        "slope": float(slopes[0]),
        "strikes": [float(k) for k in nodes[1:-1][keep]],
        "weights": [float(w) for w in kinks[keep]],
    }


def dynamic_to_csv(grid: MarketGrid, dynamic) -> str:
    """Dynamic-leg table: time, asset, prefix index, prefix nodes, position."""
    lines = ["t,asset,prefix,prefix_path,position"]
    for t in range(grid.horizon):
        blk = grid.prefix_block(t)
        for j in range(grid.num_assets):
            for p in range(grid.n_prefixes(t)):
                path = grid.path_values[p * blk][: t + 1, :].ravel()
                tag = "|".join(repr(float(v)) for v in path)
                lines.append(f"{t},{j},{p},{tag},{float(dynamic[t][j][p])!r}")
    return "\n".join(lines) + "\n"
