"""Convergence experiments: solve a family of penalized problems along a
monotone parameter sequence and track the values against a known limit.

Each run produces one row per index with the solved value, the solver's
own certificate gap, the distance to the limit (when one is supplied)
and the wall time in milliseconds; ``to_csv`` renders the table.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from . import lattice, solver
from .lattice import ConeSpec, MarketGrid
from .penalties import FixedMarginals, WassersteinBall, loss
from .solver import EmotProblem, SolverOptions

CSV_HEADER = "n,value,certificate_gap,limit_gap,wall_time_ms"


class ConvergenceError(ValueError):
    pass


@dataclass
class ConvergenceRow:
    n: int
    value: float
    certificate_gap: float
    limit_gap: float
    wall_time_ms: float
    status: str = "optimal"


@dataclass
class ConvergenceResult:
    rows: list
    limit_value: float | None = None
    monotone_ok: bool = True
    limit_reached: bool = False
    direction: str = "nondecreasing"
    detail: dict = field(default_factory=dict)

    @property
    def values(self):
        return [r.value for r in self.rows]

    def to_csv(self) -> str:
        lines = [CSV_HEADER]
        for r in self.rows:
            lines.append(
                f"{r.n},{r.value!r},{r.certificate_gap!r},{r.limit_gap!r},"
                f"{r.wall_time_ms:.3f}"
            )
        return "\n".join(lines) + "\n"

    def to_dict(self) -> dict:
        return {
            "rows": [
                {
                    "n": r.n,
                    "value": r.value,
                    "certificate_gap": r.certificate_gap,
                    "limit_gap": r.limit_gap,
                    "wall_time_ms": r.wall_time_ms,
                    "status": r.status,
                }
                for r in self.rows
            ],
            "limit_value": self.limit_value,
            "monotone_ok": self.monotone_ok,
            "limit_reached": self.limit_reached,
            "direction": self.direction,
            "detail": self.detail,
        }


def _limit_tolerance(options: SolverOptions) -> float:
    tol = options.tol if options.tol is not None else 1e-5
    return max(1e-3, 10.0 * tol)


def _run(grid, cost, problems, limit_value, options, direction) -> ConvergenceResult:
    rows = []
    for n, (penalty, cone) in problems:
        t0 = time.perf_counter()
        rep = solver.solve_inf(EmotProblem(grid, cost, penalty, cone, options))
        ms = (time.perf_counter() - t0) * 1e3
        limit_gap = (
            abs(rep.inf_value - limit_value)
            if limit_value is not None and math.isfinite(rep.inf_value)
            else math.nan
        )
        rows.append(
            ConvergenceRow(
                n=n,
                value=rep.inf_value,
                certificate_gap=rep.gap,
                limit_gap=limit_gap,
                wall_time_ms=ms,
                status=rep.status,
            )
        )
    values = [r.value for r in rows]
    slack = 2.0 * (options.tol if options.tol is not None else 1e-5)
    if direction == "nondecreasing":
        mono = all(b >= a - slack for a, b in zip(values, values[1:]))
    elif direction == "nonincreasing":
        mono = all(b <= a + slack for a, b in zip(values, values[1:]))
    else:
        mono = True
    reached = (
        limit_value is not None
        and rows
        and math.isfinite(rows[-1].limit_gap)
        and rows[-1].limit_gap <= _limit_tolerance(options)
    )
    return ConvergenceResult(
        rows=rows,
        limit_value=limit_value,
        monotone_ok=mono,
        limit_reached=bool(reached),
        direction=direction,
    )


def run_monotone(
    grid: MarketGrid,
    cost,
    cone: ConeSpec,
    penalty_of_n,
    indices,
    limit_value: float | None = None,
    options: SolverOptions | None = None,
    direction: str = "nondecreasing",
) -> ConvergenceResult:
    """Solve along a parameterized penalty family ``penalty_of_n(n)``.

    Checks that the values move monotonically in the stated direction
    (within twice the solver tolerance) and whether the final value is
    inside the limit tolerance of ``limit_value``.
    """
    options = options or SolverOptions()
    cost = np.asarray(cost, dtype=float)
    problems = [(int(n), (penalty_of_n(int(n)), cone)) for n in indices]
    return _run(grid, cost, problems, limit_value, options, direction)


def run_eps_martingale(
    grid: MarketGrid,
    cost,
    penalty,
    eps_values,
    limit_value: float | None = None,
    options: SolverOptions | None = None,
) -> ConvergenceResult:
    """Shrink the eps-martingale relaxation toward the exact cone.

    The limit defaults to the value solved on the exact martingale cone;
    values are nonincreasing in eps, hence nondecreasing along the run.
    """
    options = options or SolverOptions()
    cost = np.asarray(cost, dtype=float)
    if limit_value is None:
        rep = solver.solve_inf(
            EmotProblem(grid, cost, penalty, ConeSpec(lattice.MARTINGALE), options)
        )
        limit_value = rep.inf_value
    problems = [
        (n, (penalty, ConeSpec(lattice.EPS_MARTINGALE, eps=float(e))))
        for n, e in enumerate(eps_values)
    ]
    res = _run(grid, cost, problems, limit_value, options, "nondecreasing")
    res.detail["limit_cone"] = lattice.MARTINGALE
    return res


def run_marginal_perturbation(
    grid: MarketGrid,
    cost,
    references,
    radii,
    limit_value: float | None = None,
    options: SolverOptions | None = None,
    loss_kind: str = "threshold",
) -> ConvergenceResult:
    """Wasserstein-ball penalties with shrinking radii around fixed
    reference marginals; the limit defaults to the pinned-marginal value."""
    options = options or SolverOptions()
    cost = np.asarray(cost, dtype=float)
    references = [np.asarray(r, dtype=float) for r in references]
    if limit_value is None:
        rep = solver.solve_inf(
            EmotProblem(
                grid,
                cost,
                FixedMarginals.of(references),
                ConeSpec(lattice.MARTINGALE),
                options,
            )
        )
        limit_value = rep.inf_value

    def spec_of(r):
        return WassersteinBall.of(
            references, [loss(loss_kind, eps=float(r)) for _ in references]
        )

    problems = [
        (n, (spec_of(r), ConeSpec(lattice.MARTINGALE))) for n, r in enumerate(radii)
    ]
    return _run(grid, cost, problems, limit_value, options, "nondecreasing")


def market_pinning_rank(grid: MarketGrid, t: int, quotes) -> dict:
    """Rank of the span {cash, price, quoted payoffs} on the time-t nodes.

    Full rank means the exactly-repriced marginal is unique (the quote set
    pins it), which is when a growing market-price family stops moving.
    """
    if grid.num_assets != 1:
        raise ConvergenceError("pinning rank supports single-asset grids")
    nodes = grid.nodes[t][0]
    rows = [np.ones_like(nodes), nodes]
    for q in quotes:
        rows.append(np.asarray(q.payoff, dtype=float))
    rank = int(np.linalg.matrix_rank(np.array(rows), tol=1e-10))
    return {"rank": rank, "n_nodes": int(nodes.size), "pinned": rank >= nodes.size}
