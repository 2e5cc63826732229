"""Penalty functionals on measures and their dual (hedging-side) valuations.

Four families: hard marginal pinning, divergence sums built from utility
conjugates, market-price best-fit penalties, and Wasserstein-ball
penalties.  Dual valuations are verification tools with certified
lower-bound semantics; gap closure against the measure-side solver is what
certifies optimality, not these searches.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import lattice, wasserstein
from .lattice import MarketGrid, PathMeasure, marginal
from .valuation import UtilityFunction, divergence, golden_max

INF = math.inf

LOSS_KINDS = ("zero", "power", "threshold", "hard")


class PenaltyError(ValueError):
    pass


@dataclass(frozen=True)
class LossFunction:
    """Convex nondecreasing lsc penalty shape with G(0) = 0."""

    kind: str
    p: float = 2.0  # power exponent
    eps: float = 0.0  # threshold radius

    def __post_init__(self):
        if self.kind not in LOSS_KINDS:
            raise PenaltyError(f"unknown loss kind {self.kind!r}")
        if self.kind == "power" and not self.p > 1.0:
            raise PenaltyError("power loss needs p > 1")
        if self.kind == "threshold" and self.eps < 0:
            raise PenaltyError("threshold loss needs eps >= 0")

    def G(self, x):
        x = np.asarray(x, dtype=float)
        if self.kind == "zero":
            out = np.zeros_like(x)
        elif self.kind == "power":
            out = np.maximum(x, 0.0) ** self.p / self.p
        elif self.kind == "threshold":
            out = np.where(x <= self.eps, 0.0, INF)
        else:  # hard
            out = np.where(x <= 0.0, 0.0, INF)
        return out if out.ndim else float(out)

    def G_star(self, y):
        """Conjugate; +inf for y < 0 by monotonicity of G."""
        y = np.asarray(y, dtype=float)
        if self.kind == "zero":
            out = np.where(y == 0.0, 0.0, INF)
        elif self.kind == "power":
            q = self.p / (self.p - 1.0)
            out = np.where(y >= 0, np.maximum(y, 0.0) ** q / q, INF)
        elif self.kind == "threshold":
            out = np.where(y >= 0, self.eps * y, INF)
        else:  # hard
            out = np.where(y >= 0, 0.0, INF)
        return out if out.ndim else float(out)

    @property
    def lp_representable(self) -> bool:
        """True when G composed with |.| encodes as linear rows (indicator)."""
        return self.kind in ("threshold", "hard", "zero")

    @property
    def radius(self) -> float:
        if self.kind == "threshold":
            return self.eps
        if self.kind == "hard":
            return 0.0
        return INF


def loss(kind: str, p: float | None = None, eps: float | None = None) -> LossFunction:
    kw = {}
    if p is not None:
        kw["p"] = float(p)
    if eps is not None:
        kw["eps"] = float(eps)
    return LossFunction(kind, **kw)


def loss_conjugate(G: LossFunction, y: float) -> float:
    return G.G_star(y)


# --- penalty specifications -------------------------------------------------


@dataclass(frozen=True)
class FixedMarginals:
    """Indicator penalty pinning every time-t marginal."""

    targets: tuple  # per t: weight vector over the joint node set
    family = "fixed_marginals"

    @staticmethod
    def of(targets) -> "FixedMarginals":
        return FixedMarginals(tuple(np.asarray(t, dtype=float) for t in targets))


@dataclass(frozen=True)
class DivergenceSum:
    """Sum over t of the conjugate-induced divergence against a reference."""

    utilities: tuple  # per t: UtilityFunction
    references: tuple  # per t: probability weights over the joint node set
    family = "divergence"

    @staticmethod
    def of(utilities, references) -> "DivergenceSum":
        return DivergenceSum(
            tuple(utilities), tuple(np.asarray(r, dtype=float) for r in references)
        )


@dataclass(frozen=True)
class OptionQuote:
    payoff: np.ndarray  # vector over the joint time-t node set
    price: float
    loss: LossFunction

    @staticmethod
    def of(payoff, price, loss_fn) -> "OptionQuote":
        return OptionQuote(np.asarray(payoff, dtype=float), float(price), loss_fn)


@dataclass(frozen=True)
class MarketPrice:
    """Best-fit penalty on observed option prices, per time."""

    quotes: tuple  # per t: tuple of OptionQuote
    family = "market_price"

    @staticmethod
    def of(quotes) -> "MarketPrice":
        return MarketPrice(tuple(tuple(q) for q in quotes))


@dataclass(frozen=True)
class WassersteinBall:
    """Loss of the 1-Wasserstein distance to a per-time reference."""

    references: tuple
    losses: tuple
    metric: wasserstein.GroundMetric = field(default_factory=wasserstein.GroundMetric)
    family = "wasserstein_ball"

    @staticmethod
    def of(references, losses, metric=None) -> "WassersteinBall":
        return WassersteinBall(
            tuple(np.asarray(r, dtype=float) for r in references),
            tuple(losses),
            metric or wasserstein.GroundMetric(),
        )


PENALTY_FAMILIES = ("fixed_marginals", "divergence", "market_price", "wasserstein_ball")


def _per_t(spec, grid: MarketGrid):
    T = grid.horizon
    if isinstance(spec, FixedMarginals):
        items = spec.targets
    elif isinstance(spec, DivergenceSum):
        items = spec.references
    elif isinstance(spec, MarketPrice):
        items = spec.quotes
    else:
        items = spec.references
    if len(items) != T + 1:
        raise PenaltyError(f"penalty needs {T + 1} per-time entries, got {len(items)}")
    return items


def penalty_value(
    spec,
    grid: MarketGrid,
    Q: PathMeasure,
    martingale_attainable=None,
) -> float:
    """Evaluate the penalty at Q (through its marginals).

    ``martingale_attainable(t, weights) -> bool`` is an optional LP-backed
    domain check for the market-price family; inside the cone-constrained
    solver the restriction is automatic and the check is skipped.
    """
    _per_t(spec, grid)
    total = 0.0
    for t in range(grid.horizon + 1):
        qt = marginal(grid, Q, t).weights
        if isinstance(spec, FixedMarginals):
            if np.max(np.abs(qt - spec.targets[t])) > 1e-10:
                return INF
        elif isinstance(spec, DivergenceSum):
            total += divergence(qt, spec.references[t], spec.utilities[t])
        elif isinstance(spec, MarketPrice):
            if martingale_attainable is not None and not martingale_attainable(t, qt):
                return INF
            for quote in spec.quotes[t]:
                miss = abs(float(np.dot(quote.payoff, qt)) - quote.price)
                total += float(quote.loss.G(miss))
        elif isinstance(spec, WassersteinBall):
            dist = wasserstein.w1(
                qt, spec.references[t], grid.joint_nodes(t).ravel(), spec.metric
            )
            total += float(spec.losses[t].G(dist))
        else:
            raise PenaltyError(f"unknown penalty spec {type(spec).__name__}")
        if math.isinf(total):
            return INF
    return total


# --- dual (hedging-side) stock-additive valuations ---------------------------


def dual_market_valuation(
    phi_t: np.ndarray,
    quotes,
    pi_sub,
    multistart: int = 4,
    sweeps: int = 6,
    seed: int = 0,
) -> float:
    """Best-fit dual valuation: sup over y of
    pi_sub(phi + sum y_n (f_n - c_n)) - sum G_n*(|y_n|).

    ``pi_sub`` maps a static time-t payoff vector to its robust subhedging
    value.  Coordinate-wise golden section with multi-start; the result is
    a certified lower bound for the true sup.
    """
    phi_t = np.asarray(phi_t, dtype=float)
    N = len(quotes)
    if N == 0:
        return float(pi_sub(phi_t))

    def h(y):
        vec = phi_t.copy()
        pen = 0.0
        for n, quote in enumerate(quotes):
            vec = vec + y[n] * (quote.payoff - quote.price)
            gs = float(quote.loss.G_star(abs(y[n])))
            if math.isinf(gs):
                return -INF
            pen += gs
        return float(pi_sub(vec)) - pen

    rng = np.random.default_rng(seed)
    starts = [np.zeros(N)]
    for _ in range(multistart - 1):
        starts.append(rng.normal(scale=1.0, size=N))
    best = -INF
    for y in starts:
        y = y.copy()
        val = h(y)
        for _ in range(sweeps):
            improved = False
            for n in range(N):
                def f1(z, n=n):
                    yy = y.copy()
                    yy[n] = z
                    return h(yy)

                span = 4.0 * (1.0 + abs(y[n]))
                z, v = golden_max(f1, y[n] - span, y[n] + span, tol=1e-10)
                if v > val + 1e-12:
                    y[n], val = z, v
                    improved = True
            if not improved:
                break
        best = max(best, val)
    return best


def dual_wasserstein_valuation(
    phi_t: np.ndarray,
    ref_weights: np.ndarray,
    loss_fn: LossFunction,
    nodes: np.ndarray,
    pi_sub,
    multistart: int = 3,
    sweeps: int = 8,
    seed: int = 0,
) -> float:
    """Wasserstein-ball dual valuation (d = 1 only): sup over scale y >= 0
    and 1-Lipschitz ell (parameterized by per-gap increments) of
    pi_sub(phi + y ell) - y <ell, ref> - G*(y); certified lower bound."""
    phi_t = np.asarray(phi_t, dtype=float)
    nodes = np.asarray(nodes, dtype=float)
    ref = np.asarray(ref_weights, dtype=float)
    if nodes.ndim != 1:
        raise PenaltyError("wasserstein dual valuation supports single-asset marginals")
    gaps = np.diff(nodes)

    def ell_of(s):
        return np.concatenate([[0.0], np.cumsum(s)])

    def h(y, s):
        gs = float(loss_fn.G_star(y))
        if math.isinf(gs):
            return -INF
        ell = ell_of(s)
        return float(pi_sub(phi_t + y * ell)) - y * float(np.dot(ell, ref)) - gs

    rng = np.random.default_rng(seed)
    best = h(0.0, np.zeros(gaps.size))
    starts = [(0.0, np.zeros(gaps.size))]
    for _ in range(multistart - 1):
        starts.append(
            (float(rng.uniform(0, 2)), rng.uniform(-1, 1, size=gaps.size) * gaps)
        )
    for y, s in starts:
        s = s.copy()
        val = h(y, s)
        for _ in range(sweeps):
            y_new, val_y = golden_max(lambda z: h(z, s), 0.0, 8.0 * (1.0 + y), tol=1e-10)
            if val_y > val:
                y, val = y_new, val_y
            improved = False
            for i in range(gaps.size):
                def f1(z, i=i):
                    ss = s.copy()
                    ss[i] = z
                    return h(y, ss)

                z, v = golden_max(f1, -gaps[i], gaps[i], tol=1e-10)
                if v > val + 1e-12:
                    s[i], val = z, v
                    improved = True
            if not improved:
                break
        best = max(best, val)
    return best


# --- monotone sequences for convergence experiments ---------------------------


class MonotoneSequence:
    """Sequence handle n -> PenaltySpec_n with a declared limit spec.

    ``validate`` spot-checks the nondecreasing-penalty hypothesis on random
    probability measures at consecutive indices and rejects with a witness.
    """

    def __init__(self, builder, limit_spec, grid: MarketGrid):
        self.builder = builder
        self.limit = limit_spec
        self.grid = grid

    def spec(self, n: int):
        return self.builder(n)

    def validate(self, indices, samples: int = 5, seed: int = 0, tol: float = 1e-9):
        rng = np.random.default_rng(seed)
        for _ in range(samples):
            Q = PathMeasure(rng.dirichlet(np.ones(self.grid.n_paths)))
            prev = None
            for n in indices:
                v = penalty_value(self.spec(n), self.grid, Q)
                if prev is not None and v < prev - tol and not math.isinf(prev):
                    raise PenaltyError(
                        f"monotonicity violated between consecutive indices: "
                        f"{prev} -> {v} at n={n}"
                    )
                prev = v
        return True


def scaled_utility(u: UtilityFunction, n: float) -> UtilityFunction:
    """Utility rescaling x -> n u(x/n); conjugate scales to n v*(y)."""

    base = u
    scale = float(n)

    class Scaled:
        name = f"{base.name}_scaled"
        param = getattr(base, "param", None)
        domain_edge = base.domain_edge * scale if base.domain_edge > -INF else -INF
        slope_at_inf = (
            INF if math.isinf(base.slope_at_inf) else base.slope_at_inf * scale
        )
        differentiable_conjugate = base.differentiable_conjugate
        full_domain = base.full_domain

        def u(self, x):
            return scale * base.u(np.asarray(x, dtype=float) / scale)

        def u_prime(self, x):
            return base.u_prime(np.asarray(x, dtype=float) / scale)

        def v_star(self, y):
            return scale * base.v_star(y)

        def v_star_prime(self, y):
            return scale * base.v_star_prime(y)

    return Scaled()
