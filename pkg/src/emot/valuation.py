"""Utilities, convex conjugates, divergences and stock-additive valuations.

The catalog covers the standard concave nondecreasing utilities normalized
by u(0) = 0 together with their conjugates F = v* (v(x) = -u(-x)), the
slope of v* at infinity (which prices singular mass in the divergence),
and first derivatives where they exist.

Conventions: v*(y) = +inf for y < 0 (closed convex conjugate), and
inf * 0 = 0 wherever singular mass meets an infinite slope.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
import scipy.optimize

from .lattice import MarginalMeasure

INF = math.inf

UTILITY_NAMES = (
    "linear",
    "exponential",
    "piecewise_linear",
    "log",
    "hyperbolic",
    "truncated_exponential",
)


class ValuationError(ValueError):
    pass


def golden_max(f, lo: float, hi: float, tol: float = 1e-11, max_iter: int = 200):
    """Golden-section maximization of a unimodal f on [lo, hi]."""
    invphi = (math.sqrt(5.0) - 1.0) / 2.0
    a, b = lo, hi
    c = b - invphi * (b - a)
    d = a + invphi * (b - a)
    fc, fd = f(c), f(d)
    for _ in range(max_iter):
        if b - a < tol * (1.0 + abs(a) + abs(b)):
            break
        if fc >= fd:
            b, d, fd = d, c, fc
            c = b - invphi * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + invphi * (b - a)
            fd = f(d)
    x = c if fc >= fd else d
    return x, max(fc, fd)


def adaptive_bracket(f, b0: float, cap: float = 2.0**20):
    """Grow [-B, B] until f decreases at both edges relative to the interior.

    Returns (lo, hi, ok); ok is False when the cap is hit (certificate
    failure upstream).
    """
    B = max(b0, 1.0)
    f0 = f(0.0)
    while B <= cap:
        if f(-B) <= f0 and f(B) <= f0:
            return -B, B, True
        f0 = max(f0, f(-B), f(B))
        B *= 2.0
    return -cap, cap, False


@dataclass(frozen=True)
class UtilityFunction:
    """Concave nondecreasing utility with u(0)=0 and its conjugate data."""

    name: str
    param: float = 0.0
    domain_edge: float = -INF  # u = -inf strictly below this point
    slope_at_inf: float = INF  # limit of v*(y)/y as y -> +inf

    # --- evaluation ---------------------------------------------------------

    def u(self, x):
        x = np.asarray(x, dtype=float)
        n = self.name
        if n == "linear":
            out = x.copy()
        elif n == "exponential":
            out = 1.0 - np.exp(-x)
        elif n == "piecewise_linear":
            out = np.where(x <= 0, self.param * x, 0.0)
        elif n == "log":
            with np.errstate(divide="ignore", invalid="ignore"):
                out = np.where(x > -1.0, np.log1p(np.maximum(x, -1.0 + 1e-300)), -INF)
        elif n == "hyperbolic":
            out = np.where(x > -1.0, x / np.where(x > -1.0, x + 1.0, 1.0), -INF)
        elif n == "truncated_exponential":
            out = np.where(x >= 0.0, 1.0 - np.exp(-np.maximum(x, 0.0)), -INF)
        else:
            raise ValuationError(f"no closed form for {n!r}")
        return out if out.ndim else float(out)

    def u_prime(self, x):
        """Derivative on the interior of the domain (right derivative at kinks)."""
        x = np.asarray(x, dtype=float)
        n = self.name
        if n == "linear":
            out = np.ones_like(x)
        elif n == "exponential":
            out = np.exp(-x)
        elif n == "piecewise_linear":
            out = np.where(x < 0, self.param, 0.0)
        elif n == "log":
            out = 1.0 / (x + 1.0)
        elif n == "hyperbolic":
            out = 1.0 / (x + 1.0) ** 2
        elif n == "truncated_exponential":
            out = np.where(x >= 0.0, np.exp(-np.maximum(x, 0.0)), INF)
        else:
            raise ValuationError(f"no derivative for {n!r}")
        return out if out.ndim else float(out)

    def v_star(self, y):
        """Conjugate F(y) = sup_x (u(x) - x y); +inf for y < 0."""
        y = np.asarray(y, dtype=float)
        n = self.name
        with np.errstate(divide="ignore", invalid="ignore"):
            if n == "linear":
                out = np.where(np.isclose(y, 1.0, rtol=0, atol=1e-12), 0.0, INF)
            elif n == "exponential":
                ylogy = np.where(y > 0, y * np.log(np.maximum(y, 1e-300)), 0.0)
                out = np.where(y >= 0, ylogy - y + 1.0, INF)
            elif n == "piecewise_linear":
                out = np.where((y >= 0) & (y <= self.param), 0.0, INF)
            elif n == "log":
                out = np.where(y > 0, y - np.log(np.maximum(y, 1e-300)) - 1.0, INF)
            elif n == "hyperbolic":
                out = np.where(y >= 0, y - 2.0 * np.sqrt(np.maximum(y, 0.0)) + 1.0, INF)
            elif n == "truncated_exponential":
                ylogy = np.where(y > 0, y * np.log(np.maximum(y, 1e-300)), 0.0)
                out = np.where(
                    y < 0, INF, np.where(y <= 1.0, ylogy - y + 1.0, 0.0)
                )
            else:
                raise ValuationError(f"no closed-form conjugate for {n!r}")
        return out if out.ndim else float(out)

    def v_star_prime(self, y):
        """Derivative of the conjugate on (0, inf); None-like inf at kinks."""
        y = np.asarray(y, dtype=float)
        n = self.name
        with np.errstate(divide="ignore"):
            if n == "exponential":
                out = np.log(np.maximum(y, 1e-300))
            elif n == "log":
                out = 1.0 - 1.0 / np.maximum(y, 1e-300)
            elif n == "hyperbolic":
                out = 1.0 - 1.0 / np.sqrt(np.maximum(y, 1e-300))
            elif n == "truncated_exponential":
                out = np.minimum(np.log(np.maximum(y, 1e-300)), 0.0)
            else:
                raise ValuationError(f"conjugate of {n!r} is not differentiable")
        return out if out.ndim else float(out)

    @property
    def differentiable_conjugate(self) -> bool:
        return self.name in ("exponential", "log", "hyperbolic", "truncated_exponential")

    @property
    def full_domain(self) -> bool:
        return self.domain_edge == -INF


def utility(name: str, alpha: float | None = None) -> UtilityFunction:
    """Catalog lookup by the scenario-file name."""
    if name == "linear":
        return UtilityFunction("linear", slope_at_inf=INF)
    if name == "exponential":
        return UtilityFunction("exponential", slope_at_inf=INF)
    if name == "piecewise_linear":
        a = 1.0 if alpha is None else float(alpha)
        if a < 1.0:
            raise ValuationError("piecewise_linear needs alpha >= 1")
        return UtilityFunction("piecewise_linear", param=a, slope_at_inf=INF)
    if name == "log":
        return UtilityFunction("log", domain_edge=-1.0, slope_at_inf=1.0)
    if name == "hyperbolic":
        return UtilityFunction("hyperbolic", domain_edge=-1.0, slope_at_inf=1.0)
    if name == "truncated_exponential":
        return UtilityFunction("truncated_exponential", domain_edge=0.0, slope_at_inf=0.0)
    raise ValuationError(f"unknown utility {name!r}")


class CustomUtility:
    """Runtime-supplied utility; conjugate computed numerically (~1e-6)."""

    name = "custom"
    domain_edge = -INF
    slope_at_inf = INF
    differentiable_conjugate = False
    full_domain = True

    def __init__(self, u: Callable[[float], float], samples: int = 1000, seed: int = 0):
        self._u = u
        rng = np.random.default_rng(seed)
        xs = rng.uniform(-50, 50, size=(samples, 2))
        lo, hi = xs.min(axis=1), xs.max(axis=1)
        mid = 0.5 * (lo + hi)
        um, ulo, uhi = (np.array([u(v) for v in a]) for a in (mid, lo, hi))
        if abs(u(0.0)) > 1e-9:
            raise ValuationError("custom utility must satisfy u(0) = 0")
        if np.any(um < 0.5 * (ulo + uhi) - 1e-9):
            raise ValuationError("custom utility failed the concavity sampling check")
        if np.any(um > mid + 1e-9):
            raise ValuationError("custom utility must satisfy u(x) <= x")

    def u(self, x):
        x = np.asarray(x, dtype=float)
        if x.ndim:
            return np.array([self._u(v) for v in x])
        return float(self._u(float(x)))

    def v_star(self, y):
        y = np.asarray(y, dtype=float)

        def single(yy):
            if yy < 0:
                return INF
            f = lambda x: self.u(x) - x * yy
            lo, hi, ok = adaptive_bracket(f, 1.0)
            if not ok:
                return INF
            _, val = golden_max(f, lo, hi, tol=1e-12)
            return val

        if y.ndim:
            return np.array([single(v) for v in y])
        return single(float(y))


def conjugate(u: UtilityFunction | CustomUtility, y: float):
    """F(y) = sup_x (u(x) - x y) as an extended real."""
    return u.v_star(y)


def fenchel_gap(u, x: float, y: float) -> float:
    """u(x) - x y - v*(y); <= 0 always (Fenchel)."""
    vs = u.v_star(y)
    if np.isinf(vs):
        return -INF
    return float(u.u(x)) - x * y - float(vs)


def divergence(
    mu: MarginalMeasure | np.ndarray,
    ref: MarginalMeasure | np.ndarray,
    u: UtilityFunction | CustomUtility,
) -> float:
    """Divergence of mu against the reference induced by the conjugate of u.

    Sum over ref-positive nodes of ref * v*(mu/ref), plus the singular
    slope times the mu-mass sitting on ref-null nodes; +inf when that
    slope is infinite and mu charges a null node.
    """
    mw = mu.weights if isinstance(mu, MarginalMeasure) else np.asarray(mu, float)
    rw = ref.weights if isinstance(ref, MarginalMeasure) else np.asarray(ref, float)
    if mw.shape != rw.shape:
        raise ValuationError("node-set mismatch between measure and reference")
    pos = rw > 0
    singular_mass = float(mw[~pos].sum())
    if u.name == "linear":
        # indicator of mu == ref
        return 0.0 if float(np.max(np.abs(mw - rw), initial=0.0)) <= 1e-12 else INF
    ratio = mw[pos] / rw[pos]
    vals = np.asarray(u.v_star(ratio), dtype=float)
    if np.any(np.isinf(vals)):
        return INF
    ac = float(np.dot(rw[pos], vals))
    if singular_mass <= 0.0:
        return ac
    if np.isinf(u.slope_at_inf):
        return INF
    return ac + u.slope_at_inf * singular_mass


@dataclass
class OceValue:
    value: float
    alpha: float | None = None
    lam: float | None = None
    status: str = "ok"  # "ok" | "certificate_failure" | "degenerate"


def _inner_lambda_max(u, phi_plus_ax, ref_w, lam_bracket, tol=1e-12):
    """sup over lam of int u(phi + a x + lam) dref - lam, restricted so the
    arguments stay inside dom(u)."""

    def g(lam):
        vals = u.u(phi_plus_ax + lam)
        if np.any(np.isinf(vals)):
            return -INF
        return float(np.dot(ref_w, vals)) - lam

    lo, hi = lam_bracket
    return golden_max(g, lo, hi, tol=tol)


def _inner_lambda_root(u, base, ref_w, lam_lo):
    """First-order inner maximization: the map
    h(lam) = int u'(base + lam) dref - 1 is strictly decreasing, so the
    optimal cash shift is its root; bisection tolerates the kinks of the
    piecewise utilities.  Returns (lam, value)."""
    pos = ref_w > 0

    def hprime(lam):
        d = np.asarray(u.u_prime(base + lam), dtype=float)
        d = np.where(pos, d, 0.0)
        if np.any(np.isinf(d[pos])):
            return INF
        return float(np.dot(ref_w, d)) - 1.0

    a = lam_lo + 1e-12
    step = 1.0
    if hprime(a) <= 0.0:
        lam = a  # supremum pinned at the domain edge
    else:
        b = a + step
        guard = 0
        while hprime(b) > 0.0 and guard < 80:
            a = b
            b = a + step
            step *= 2.0
            guard += 1
        # clamp the +inf edge value so brentq sees a finite sign change
        h = lambda lam: min(hprime(lam), 1e30)
        lam = float(scipy.optimize.brentq(h, a, b, xtol=1e-13, rtol=1e-15))
    vals = np.asarray(u.u(base + lam), dtype=float)
    if np.any(np.isinf(vals[pos])):
        return lam, -INF
    return lam, float(np.dot(ref_w, vals)) - lam


def stock_additive_value(
    phi: np.ndarray,
    ref: MarginalMeasure | np.ndarray,
    u: UtilityFunction | CustomUtility,
    nodes: np.ndarray,
    x0: float,
    alpha: float | None = None,
) -> OceValue:
    """Stock-additive valuation: sup over (a, lam) of
    int u(phi + a x + lam) dref - (a x0 + lam).

    ``nodes`` are the time-t prices (d = 1), ``x0`` the spot.  The search
    nests two golden sections (outer a, inner lam) on adaptive brackets.
    With ``alpha`` given the stock position is pinned there (alpha = 0
    recovers the plain cash-additive certainty equivalent).
    """
    ref_w = ref.weights if isinstance(ref, MarginalMeasure) else np.asarray(ref, float)
    phi = np.asarray(phi, dtype=float)
    nodes = np.asarray(nodes, dtype=float)
    if phi.shape != ref_w.shape or nodes.shape != ref_w.shape:
        raise ValuationError("phi / reference / node-set shape mismatch")
    mass = ref_w.sum()
    if abs(mass - 1.0) > 1e-10:
        raise ValuationError("reference must be a probability")

    if u.name == "linear":
        if alpha is not None:
            return OceValue(
                float(np.dot(ref_w, phi + alpha * (nodes - x0))), alpha=alpha, lam=0.0
            )
        mean = float(np.dot(ref_w, nodes))
        if abs(mean - x0) > 1e-10:
            return OceValue(INF, status="certificate_failure")
        return OceValue(float(np.dot(ref_w, phi)), alpha=0.0, lam=0.0)

    scale = 1.0 + float(np.abs(nodes).max(initial=0.0)) + float(
        np.abs(phi[np.isfinite(phi)]).max(initial=0.0)
    )
    M = u.domain_edge

    def lam_bounds(a):
        base = phi + a * nodes
        lo = -16.0 * scale * max(1.0, abs(a))
        if M > -INF:
            lo = max(lo, M + 1e-12 - float(base[ref_w > 0].min()))
        hi = max(lo + 1.0, 16.0 * scale * max(1.0, abs(a)))
        return lo, hi

    def outer(a):
        base = phi + a * nodes
        if u.name == "exponential":
            # closed-form lam: value = -a x0 - log E[exp(-phi - a x)]
            z = -base
            zmax = z[ref_w > 0].max()
            log_e = zmax + math.log(float(np.dot(ref_w, np.exp(z - zmax))))
            return -a * x0 - log_e, None
        lo, hi = lam_bounds(a)
        if isinstance(u, UtilityFunction) or hasattr(u, "u_prime"):
            # first-order inner solve on the monotone mean-derivative map
            lam, val = _inner_lambda_root(u, base, ref_w, lo)
            return val - a * x0, lam
        # sampled utilities: golden section with a widening bracket
        lam, val = _inner_lambda_max(u, base, ref_w, (lo, hi))
        grow = 0
        while lam > hi - 1e-6 * (1 + abs(hi)) and grow < 12:
            hi = lo + 2.0 * (hi - lo)
            lam, val = _inner_lambda_max(u, base, ref_w, (lo, hi))
            grow += 1
        return val - a * x0, lam

    if alpha is not None:
        val, lam_star = outer(alpha)
        a_star = alpha
    else:
        f = lambda a: outer(a)[0]
        lo, hi, ok = adaptive_bracket(f, 1.0 + scale)
        if not ok:
            return OceValue(INF, status="certificate_failure")
        a_star, val = golden_max(f, lo, hi, tol=1e-11)
        _, lam_star = outer(a_star)
    if lam_star is None:  # exponential closed form; recover lam for the witness
        z = -(phi + a_star * nodes)
        zmax = z[ref_w > 0].max()
        lam_star = zmax + math.log(float(np.dot(ref_w, np.exp(z - zmax))))
    return OceValue(float(val), alpha=float(a_star), lam=float(lam_star))


def oce(values) -> float:
    """Sum of per-time cash-additive valuations under +inf - inf = -inf."""
    vals = [float(v.value) if isinstance(v, OceValue) else float(v) for v in values]
    if any(v == -INF for v in vals):
        return -INF
    if any(v == INF for v in vals):
        return INF
    return float(sum(vals))


def goce_indirect(grid, c, ref, u, tol: float = 1e-8):
    """Generalized OCE of the indirect utility: sup over (Delta, beta) of
    E_ref[u(c + I^Delta + beta)] - beta.

    ``ref`` must be a martingale probability and dom(u) = R.  Returns
    (value, witness) with witness = {"dynamic": ..., "beta": ...}.
    """
    from scipy.optimize import minimize

    from . import lattice

    if not u.full_domain:
        raise ValuationError("goce_indirect needs a utility with full domain")
    ok, wit = lattice.cone_membership(grid, lattice.ConeSpec(lattice.MARTINGALE), ref)
    if not ok:
        raise ValuationError(f"reference is not a martingale measure: {wit}")
    c = np.asarray(c, dtype=float)
    w = ref.weights
    T, d = grid.horizon, grid.num_assets
    shapes = [(t, j, grid.n_prefixes(t)) for t in range(T) for j in range(d)]
    n_delta = sum(s[2] for s in shapes)

    def unpack(z):
        dyn = []
        pos = 0
        for t in range(T):
            per_j = []
            for j in range(d):
                k = grid.n_prefixes(t)
                per_j.append(z[pos : pos + k])
                pos += k
            dyn.append(per_j)
        return dyn

    prefix_ids = [np.arange(grid.n_paths) // grid.prefix_block(t) for t in range(T)]
    incs = [[grid.increments(t, j) for j in range(d)] for t in range(T)]

    if u.name == "exponential":
        # beta closed form: value(Delta) = -log E[exp(-(c + I^Delta))]
        def neg(z):
            I = np.zeros(grid.n_paths)
            pos = 0
            for t in range(T):
                for j in range(d):
                    k = grid.n_prefixes(t)
                    I += z[pos : pos + k][prefix_ids[t]] * incs[t][j]
                    pos += k
            e = -(c + I)
            emax = e[w > 0].max()
            lse = emax + math.log(float(np.dot(w, np.exp(e - emax))))
            g = np.exp(e - lse) * w  # Gibbs weights, sum to 1
            grads = []
            for t in range(T):
                for j in range(d):
                    contrib = g * incs[t][j]
                    grads.append(
                        contrib.reshape(grid.n_prefixes(t), grid.prefix_block(t)).sum(
                            axis=1
                        )
                    )
            return lse, -np.concatenate(grads) if grads else np.zeros(0)

        z0 = np.zeros(n_delta)
        if n_delta:
            res = minimize(neg, z0, jac=True, method="L-BFGS-B",
                           options={"gtol": tol * 1e-2, "maxiter": 2000})
            z, value = res.x, -res.fun
        else:
            value = -neg(z0)[0]
            z = z0
        witness = {"dynamic": unpack(z), "beta": None}
        # recover the optimal cash shift for the report
        I = lattice.stochastic_integral(grid, unpack(z)) if n_delta else np.zeros(grid.n_paths)
        ee = -(c + I)
        emax = ee[w > 0].max()
        witness["beta"] = float(emax + math.log(float(np.dot(w, np.exp(ee - emax)))))
        return float(value), witness

    def neg(zb):
        z, beta = zb[:-1], zb[-1]
        I = np.zeros(grid.n_paths)
        pos = 0
        for t in range(T):
            for j in range(d):
                k = grid.n_prefixes(t)
                I += z[pos : pos + k][prefix_ids[t]] * incs[t][j]
                pos += k
        arg = c + I + beta
        val = float(np.dot(w, u.u(arg))) - beta
        up = u.u_prime(arg) * w
        grads = []
        for t in range(T):
            for j in range(d):
                contrib = up * incs[t][j]
                grads.append(
                    contrib.reshape(grid.n_prefixes(t), grid.prefix_block(t)).sum(axis=1)
                )
        gbeta = float(up.sum()) - 1.0
        g = np.concatenate(grads + [[gbeta]]) if grads else np.array([gbeta])
        return -val, -g

    res = minimize(neg, np.zeros(n_delta + 1), jac=True, method="L-BFGS-B",
                   options={"gtol": tol * 1e-2, "maxiter": 2000})
    z, beta = res.x[:-1], float(res.x[-1])
    return float(-res.fun), {"dynamic": unpack(z), "beta": beta}
