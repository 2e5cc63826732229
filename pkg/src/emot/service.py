"""HTTP surface: a small FastAPI app exposing solve / hedge / converge /
oracle / catalog / validate over JSON scenarios.

The CLI talks to this app in-process by default; the same app can be
served standalone (``uvicorn emot.service:app``).  Schema violations map
to 422 with diagnostics, solver reports (including infeasibility
certificates) come back in the response body with HTTP 200.
"""

from __future__ import annotations

import math

from fastapi import FastAPI, HTTPException
from pydantic import BaseModel, Field

from . import convergence, hedging, scenario, solver
from .hedging import HedgeProblem
from .penalties import DivergenceSum, scaled_utility
from .scenario import ScenarioError
from .solver import EmotProblem

app = FastAPI(title="emot", version="0.1.0")


class SolveOptions(BaseModel):
    model_config = {"extra": "forbid"}

    both: bool = False
    backend: str | None = None
    tol: float | None = None
    seed: int | None = None


class ScenarioRequest(BaseModel):
    model_config = {"extra": "forbid"}

    scenario: dict
    options: SolveOptions = Field(default_factory=SolveOptions)


class SolveResponse(BaseModel):
    report: dict
    hedge: dict | None = None
    summary: str


class ConvergeResponse(BaseModel):
    result: dict
    csv: str
    summary: str


class ValidateResponse(BaseModel):
    valid: bool
    errors: list[str]


def _fmt(x) -> str:
    if x is None or (isinstance(x, float) and math.isnan(x)):
        return "na"
    if isinstance(x, float) and math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return format(float(x), ".12g")


def summary_line(inf_value, sup_value, gap, status) -> str:
    return (
        f"inf={_fmt(inf_value)} sup={_fmt(sup_value)} "
        f"gap={_fmt(gap)} status={status}"
    )


def _build(req: ScenarioRequest):
    overrides = {
        "backend": req.options.backend,
        "tol": req.options.tol,
        "seed": req.options.seed,
    }
    try:
        return scenario.build(req.scenario, overrides)
    except ScenarioError as e:
        raise HTTPException(status_code=422, detail=str(e))
    except (ValueError, KeyError) as e:
        raise HTTPException(status_code=422, detail=f"invalid scenario: {e}")


@app.post("/solve", response_model=SolveResponse)
def post_solve(req: ScenarioRequest) -> SolveResponse:
    grid, cost, penalty, cone, options = _build(req)
    try:
        rep = solver.solve_inf(EmotProblem(grid, cost, penalty, cone, options))
    except solver.SolverError as e:
        raise HTTPException(status_code=400, detail=str(e))
    hedge_dict = None
    sup_value = None
    gap = rep.gap
    status = rep.status
    if req.options.both and rep.status != solver.STATUS_INFEASIBLE:
        try:
            hrep = hedging.solve_sup(
                HedgeProblem(grid, cost, penalty, cone, options), inf_report=rep
            )
        except (hedging.HedgeError, solver.SolverError) as e:
            raise HTTPException(status_code=400, detail=str(e))
        hedge_dict = hrep.to_dict()
        sup_value = hrep.sup_value
        if math.isfinite(rep.inf_value) and math.isfinite(hrep.sup_value):
            gap = rep.inf_value - hrep.sup_value
    return SolveResponse(
        report=rep.to_dict(),
        hedge=hedge_dict,
        summary=summary_line(rep.inf_value, sup_value, gap, status),
    )


@app.post("/hedge", response_model=SolveResponse)
def post_hedge(req: ScenarioRequest) -> SolveResponse:
    grid, cost, penalty, cone, options = _build(req)
    try:
        hrep = hedging.solve_sup(HedgeProblem(grid, cost, penalty, cone, options))
    except (hedging.HedgeError, solver.SolverError) as e:
        raise HTTPException(status_code=400, detail=str(e))
    return SolveResponse(
        report=hrep.to_dict(),
        summary=summary_line(None, hrep.sup_value, hrep.gap, hrep.status),
    )


@app.post("/converge", response_model=ConvergeResponse)
def post_converge(req: ScenarioRequest) -> ConvergeResponse:
    grid, cost, penalty, cone, options = _build(req)
    try:
        block = scenario.sequence_block(req.scenario)
    except ScenarioError as e:
        raise HTTPException(status_code=422, detail=str(e))
    kind = block["kind"]
    limit = block.get("limit_value")
    try:
        if kind == "utility_scaling":
            if not isinstance(penalty, DivergenceSum):
                raise HTTPException(
                    status_code=422,
                    detail="utility_scaling needs a divergence penalty block",
                )
            base = penalty

            def of_n(n):
                return DivergenceSum.of(
                    [scaled_utility(u, n) for u in base.utilities], base.references
                )

            res = convergence.run_monotone(
                grid, cost, cone, of_n, block["indices"], limit, options
            )
        elif kind == "eps_martingale":
            res = convergence.run_eps_martingale(
                grid, cost, penalty, block["eps_values"], limit, options
            )
        else:  # wasserstein_radius
            if not hasattr(penalty, "references"):
                raise HTTPException(
                    status_code=422,
                    detail="wasserstein_radius needs a penalty with references",
                )
            res = convergence.run_marginal_perturbation(
                grid, cost, list(penalty.references), block["radii"], limit, options
            )
    except (solver.SolverError, convergence.ConvergenceError) as e:
        raise HTTPException(status_code=400, detail=str(e))
    final_gap = res.rows[-1].limit_gap if res.rows else math.nan
    status = "limit_reached" if res.limit_reached else "open"
    return ConvergeResponse(
        result=res.to_dict(),
        csv=res.to_csv(),
        summary=(
            f"n_final={res.rows[-1].n if res.rows else 'na'} "
            f"limit_gap={_fmt(final_gap)} monotone={res.monotone_ok} status={status}"
        ),
    )


@app.post("/oracle", response_model=SolveResponse)
def post_oracle(req: ScenarioRequest) -> SolveResponse:
    req.options.backend = "oracle"
    grid, cost, penalty, cone, options = _build(req)
    try:
        rep = solver.solve_inf(EmotProblem(grid, cost, penalty, cone, options))
    except solver.SolverError as e:
        raise HTTPException(status_code=400, detail=str(e))
    return SolveResponse(
        report=rep.to_dict(),
        summary=summary_line(rep.inf_value, None, rep.gap, rep.status),
    )


@app.get("/catalog")
def get_catalog() -> dict:
    return scenario.catalog()


@app.post("/validate", response_model=ValidateResponse)
def post_validate(req: ScenarioRequest) -> ValidateResponse:
    errors = scenario.validate_dict(req.scenario)
    if not errors:
        # structural checks beyond the schema (sizes, grammar)
        try:
            scenario.build(req.scenario)
        except ScenarioError as e:
            errors = [str(e)]
        except (ValueError, KeyError) as e:
            errors = [f"invalid scenario: {e}"]
    return ValidateResponse(valid=not errors, errors=errors)
