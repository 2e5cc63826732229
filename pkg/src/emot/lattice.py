"""Finite market lattices: path space, measures, strategies and hedging cones.

The market lives on a finite grid of prices per (time, asset).  The path
space is the full product of the per-time node sets, enumerated
lexicographically with time as the major axis (asset next, node index
fastest), so every report is bit-reproducible.

All types are immutable values after construction and every operation here
is a pure function.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

DEFAULT_PATH_LIMIT = 10_000_000
RESIDUAL_TOL = 1e-10
MASS_TOL = 1e-12

MARTINGALE = "martingale"
EPS_MARTINGALE = "eps_martingale"
NO_SHORT_SELLING = "no_short_selling"
NO_LONG_BUYING = "no_long_buying"
NULL_CONE = "null"

CONE_TAGS = (MARTINGALE, EPS_MARTINGALE, NO_SHORT_SELLING, NO_LONG_BUYING, NULL_CONE)


class GridError(ValueError):
    """Structural problem with a grid, strategy or measure."""


@dataclass(frozen=True)
class ConeSpec:
    """Hedging-cone variant selecting the feasible measure class."""

    tag: str = MARTINGALE
    eps: float = 0.0

    def __post_init__(self):
        if self.tag not in CONE_TAGS:
            raise GridError(f"unknown cone tag {self.tag!r}")
        if not np.isfinite(self.eps) or self.eps < 0:
            raise GridError("eps must be finite and nonnegative")


class MarketGrid:
    """Finite node sets per (time, asset); the discrete path space.

    ``nodes[t][j]`` is the strictly increasing list of prices asset ``j``
    can take at time ``t``.
    """

    def __init__(self, nodes, path_limit: int = DEFAULT_PATH_LIMIT):
        nodes = [[np.asarray(k, dtype=float) for k in per_t] for per_t in nodes]
        if not nodes:
            raise GridError("grid needs at least one time step")
        d = len(nodes[0])
        if d < 1:
            raise GridError("grid needs at least one asset")
        for t, per_t in enumerate(nodes):
            if len(per_t) != d:
                raise GridError(f"time {t}: expected {d} assets")
            for j, k in enumerate(per_t):
                if k.ndim != 1 or k.size == 0:
                    raise GridError(f"K[{t}][{j}] must be a nonempty 1-d list")
                if not np.all(np.isfinite(k)):
                    raise GridError(f"K[{t}][{j}] has non-finite entries")
                if k.size > 1 and not np.all(np.diff(k) > 0):
                    raise GridError(f"K[{t}][{j}] must be strictly increasing")
        self.nodes = nodes
        self.num_assets = d
        self.horizon = len(nodes) - 1
        n_paths = 1
        for per_t in nodes:
            for k in per_t:
                n_paths *= k.size
        if n_paths > path_limit:
            raise GridError(f"path count {n_paths} exceeds limit {path_limit}")
        self.n_paths = n_paths
        self._build_paths()

    def _build_paths(self):
        T, d = self.horizon, self.num_assets
        sizes = [self.nodes[t][j].size for t in range(T + 1) for j in range(d)]
        grids = np.meshgrid(
            *[np.arange(s) for s in sizes], indexing="ij"
        )
        idx = np.stack([g.ravel() for g in grids], axis=1)  # (n_paths, (T+1)*d)
        self.path_node_index = idx
        vals = np.empty((self.n_paths, T + 1, d))
        col = 0
        for t in range(T + 1):
            for j in range(d):
                vals[:, t, j] = self.nodes[t][j][idx[:, col]]
                col += 1
        self.path_values = vals
        # block sizes: paths sharing the prefix up to time t are contiguous
        self._block = np.empty(T + 1, dtype=np.int64)
        blk = 1
        for t in range(T, -1, -1):
            self._block[t] = blk
            for j in range(d):
                blk *= self.nodes[t][j].size
        # joint node count per time
        self._m_t = np.array(
            [
                int(np.prod([self.nodes[t][j].size for j in range(d)]))
                for t in range(T + 1)
            ],
            dtype=np.int64,
        )

    # --- structure helpers -------------------------------------------------

    def n_prefixes(self, t: int) -> int:
        """Number of distinct path prefixes x_{0:t}."""
        return self.n_paths // int(self._block[t])

    def prefix_block(self, t: int) -> int:
        """Paths per prefix block at time t (contiguous in path order)."""
        return int(self._block[t])

    def joint_nodes(self, t: int) -> np.ndarray:
        """Joint node values at time t, shape (m_t, d), lexicographic."""
        cols = np.meshgrid(*self.nodes[t], indexing="ij")
        return np.stack([c.ravel() for c in cols], axis=1)

    def n_joint_nodes(self, t: int) -> int:
        return int(self._m_t[t])

    def joint_node_index(self, t: int) -> np.ndarray:
        """Per path, the joint-node id occupied at time t."""
        blk = int(self._block[t])
        return (np.arange(self.n_paths) // blk) % int(self._m_t[t])

    def deterministic_start(self) -> bool:
        return all(self.nodes[0][j].size == 1 for j in range(self.num_assets))

    def spot(self, j: int = 0) -> float:
        if self.nodes[0][j].size != 1:
            raise GridError("spot undefined: time-0 node set is not a singleton")
        return float(self.nodes[0][j][0])

    def increments(self, t: int, j: int) -> np.ndarray:
        """x_{t+1}^j - x_t^j per path."""
        return self.path_values[:, t + 1, j] - self.path_values[:, t, j]

    def __repr__(self):
        return (
            f"MarketGrid(T={self.horizon}, d={self.num_assets}, "
            f"paths={self.n_paths})"
        )


@dataclass(frozen=True)
class PathMeasure:
    """Nonnegative weight per path."""

    weights: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        object.__setattr__(self, "weights", w)
        if np.any(w < -MASS_TOL) or not np.all(np.isfinite(w)):
            raise GridError("path measure needs finite nonnegative weights")

    @property
    def mass(self) -> float:
        return float(self.weights.sum())

    def is_probability(self, tol: float = MASS_TOL) -> bool:
        return abs(self.mass - 1.0) <= tol


@dataclass(frozen=True)
class MarginalMeasure:
    """Weights over the joint node set at a single time."""

    t: int
    weights: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        object.__setattr__(self, "weights", w)
        if np.any(w < -MASS_TOL) or not np.all(np.isfinite(w)):
            raise GridError("marginal needs finite nonnegative weights")

    @property
    def mass(self) -> float:
        return float(self.weights.sum())


@dataclass(frozen=True)
class SemistaticStrategy:
    """Static positions per time plus adapted dynamic positions.

    ``static[t]`` is a vector over the joint time-t node set;
    ``dynamic[t][j]`` is a vector over the time-t path prefixes (hence
    adapted by construction); ``beta`` is the cash shift.
    """

    static: tuple
    dynamic: tuple
    beta: float

    @staticmethod
    def zero(grid: MarketGrid) -> "SemistaticStrategy":
        T, d = grid.horizon, grid.num_assets
        static = tuple(np.zeros(grid.n_joint_nodes(t)) for t in range(T + 1))
        dynamic = tuple(
            tuple(np.zeros(grid.n_prefixes(t)) for _ in range(d)) for t in range(T)
        )
        return SemistaticStrategy(static, dynamic, 0.0)


def _check_dynamic(grid: MarketGrid, dynamic) -> None:
    T, d = grid.horizon, grid.num_assets
    if len(dynamic) != T:
        raise GridError(f"dynamic table needs {T} time steps, got {len(dynamic)}")
    for t in range(T):
        if len(dynamic[t]) != d:
            raise GridError(f"dynamic[{t}] needs {d} assets")
        for j in range(d):
            v = np.asarray(dynamic[t][j], dtype=float)
            if v.shape != (grid.n_prefixes(t),):
                raise GridError(
                    f"dynamic[{t}][{j}] has shape {v.shape}, "
                    f"expected ({grid.n_prefixes(t)},)"
                )
            if not np.all(np.isfinite(v)):
                raise GridError(f"dynamic[{t}][{j}] has non-finite entries")


def stochastic_integral(grid: MarketGrid, strategy) -> np.ndarray:
    """Gains-from-trading path function of the dynamic positions.

    ``strategy`` may be a SemistaticStrategy or a bare dynamic table
    ``dynamic[t][j]``; only the dynamic part matters.
    """
    dynamic = strategy.dynamic if isinstance(strategy, SemistaticStrategy) else strategy
    _check_dynamic(grid, dynamic)
    T, d = grid.horizon, grid.num_assets
    out = np.zeros(grid.n_paths)
    for t in range(T):
        blk = grid.prefix_block(t)
        prefix = np.arange(grid.n_paths) // blk
        for j in range(d):
            delta = np.asarray(dynamic[t][j], dtype=float)
            out += delta[prefix] * grid.increments(t, j)
    return out


def expectation(Q: PathMeasure, f: np.ndarray) -> float:
    """Sum of Q(x) f(x) with the convention 0 * inf = 0."""
    w = Q.weights
    f = np.asarray(f, dtype=float)
    inf_mask = np.isinf(f)
    if np.any(inf_mask & (w > 0)):
        return math.inf
    active = ~inf_mask
    return float(np.dot(w[active], f[active]))


def marginal(grid: MarketGrid, Q: PathMeasure, t: int) -> MarginalMeasure:
    """Project a path measure onto the joint time-t node set."""
    if not 0 <= t <= grid.horizon:
        raise GridError(f"time {t} out of range 0..{grid.horizon}")
    ids = grid.joint_node_index(t)
    w = np.bincount(ids, weights=Q.weights, minlength=grid.n_joint_nodes(t))
    return MarginalMeasure(t, w)


def martingale_residuals(grid: MarketGrid, Q: PathMeasure):
    """Conditional increment masses m[t][j][prefix] = E_Q[1_prefix (x_{t+1}-x_t)].

    All residuals vanish exactly when Q is a martingale measure for the
    canonical process.
    """
    T, d = grid.horizon, grid.num_assets
    res = []
    for t in range(T):
        blk = grid.prefix_block(t)
        npfx = grid.n_prefixes(t)
        per_j = []
        for j in range(d):
            contrib = Q.weights * grid.increments(t, j)
            per_j.append(contrib.reshape(npfx, blk).sum(axis=1))
        res.append(per_j)
    return res


def residual_l1_per_time(residuals) -> np.ndarray:
    return np.array([sum(float(np.abs(r).sum()) for r in per_t) for per_t in residuals])


def cone_membership(
    grid: MarketGrid, spec: ConeSpec, Q: PathMeasure, tol: float = RESIDUAL_TOL
):
    """Membership of Q in the polar feasible class of the cone.

    Returns ``(ok, witness)``; the witness names the violating
    (t, j, prefix) residual (or per-time budget for the eps variant).
    """
    if spec.tag == NULL_CONE:
        return True, None
    res = martingale_residuals(grid, Q)
    if spec.tag == EPS_MARTINGALE:
        budgets = residual_l1_per_time(res)
        for t, total in enumerate(budgets):
            if total > spec.eps + tol:
                return False, {"t": t, "l1_residual": float(total), "budget": spec.eps}
        return True, None
    for t, per_j in enumerate(res):
        for j, r in enumerate(per_j):
            if spec.tag == MARTINGALE:
                bad = np.abs(r) > tol
            elif spec.tag == NO_SHORT_SELLING:
                bad = r > tol
            else:  # NO_LONG_BUYING
                bad = r < -tol
            if np.any(bad):
                p = int(np.argmax(np.abs(np.where(bad, r, 0.0))))
                return False, {"t": t, "j": j, "prefix": p, "residual": float(r[p])}
    return True, None


def static_sum(grid: MarketGrid, static) -> np.ndarray:
    """Path function sum_t phi_t(x_t) for coordinate static positions."""
    T = grid.horizon
    if len(static) != T + 1:
        raise GridError(f"need {T + 1} static vectors, got {len(static)}")
    out = np.zeros(grid.n_paths)
    for t in range(T + 1):
        phi = np.asarray(static[t], dtype=float)
        if phi.shape != (grid.n_joint_nodes(t),):
            raise GridError(
                f"static[{t}] has shape {phi.shape}, "
                f"expected ({grid.n_joint_nodes(t)},)"
            )
        out += phi[grid.joint_node_index(t)]
    return out


def growth_bound_check(grid: MarketGrid, A: float, c: np.ndarray) -> bool:
    """Check c(x) >= -A (1 + sum |x_t^j|) on every path."""
    c = np.asarray(c, dtype=float)
    lower = -A * (1.0 + np.abs(grid.path_values).sum(axis=(1, 2)))
    return bool(np.all(c >= lower - 1e-15 * max(1.0, A)))


def call_control_inequality(d: int, T: int, A: float, points: np.ndarray):
    """Coercivity check for the call-based control functions.

    With a = 2 d (T+2) + 2 and beta = 2 d (T+1), verifies
    1 + sum |x| <= a * sum (|x| - A/beta)^+ at each supplied point outside
    the centered box [-A, A]^{d(T+1)}.  Points inside the box are skipped.
    Returns (holds_everywhere, worst_margin).
    """
    a = 2 * d * (T + 2) + 2
    beta = 2 * d * (T + 1)
    pts = np.asarray(points, dtype=float).reshape(-1, (T + 1) * d)
    outside = np.any(np.abs(pts) > A, axis=1)
    pts = pts[outside]
    if pts.size == 0:
        return True, math.inf
    lhs = 1.0 + np.abs(pts).sum(axis=1)
    rhs = a * np.maximum(np.abs(pts) - A / beta, 0.0).sum(axis=1)
    margin = rhs - lhs
    return bool(np.all(margin >= -1e-12)), float(margin.min())


def grid_from_node_lists(node_lists) -> MarketGrid:
    """Convenience for d=1 grids given as one node list per time."""
    return MarketGrid([[k] for k in node_lists])


def enumerate_paths(grid: MarketGrid):
    """Iterator over (path_index, values (T+1, d)) in enumeration order."""
    for i in range(grid.n_paths):
        yield i, grid.path_values[i]


def product_measure(grid: MarketGrid, per_time_weights) -> PathMeasure:
    """Tensor product of per-time joint-node weight vectors."""
    T = grid.horizon
    if len(per_time_weights) != T + 1:
        raise GridError("need one weight vector per time")
    w = np.ones(grid.n_paths)
    for t in range(T + 1):
        v = np.asarray(per_time_weights[t], dtype=float)
        if v.shape != (grid.n_joint_nodes(t),):
            raise GridError(f"weights at t={t} have the wrong length")
        w *= v[grid.joint_node_index(t)]
    return PathMeasure(w)
