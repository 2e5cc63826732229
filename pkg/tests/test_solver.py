import math

import numpy as np
import pytest

from emot import lattice, oracle, solver
from emot.lattice import ConeSpec, PathMeasure
from emot.penalties import (
    DivergenceSum,
    FixedMarginals,
    MarketPrice,
    OptionQuote,
    WassersteinBall,
    loss,
    penalty_value,
)
from emot.solver import EmotProblem, SolverError, SolverOptions
from emot.valuation import utility

THIRD = 1.0 / 3.0


def test_mot_value_one_period(g1, g1_uniform, g1_call):
    value, Q, rep = solver.mot_value(g1, g1_uniform, g1_call)
    assert value == pytest.approx(THIRD, abs=1e-12)
    assert rep.status == solver.STATUS_OPTIMAL
    assert rep.residuals["cone_ok"]
    assert np.allclose(lattice.marginal(g1, Q, 1).weights, g1_uniform[1])


def test_mot_value_two_period(g2, g2_marginals, g2_call):
    value, Q, rep = solver.mot_value(g2, g2_marginals, g2_call)
    assert value == pytest.approx(0.5, abs=1e-12)
    oracle_res = oracle.vertex_enum_mot(g2, g2_marginals, g2_call)
    assert value == pytest.approx(oracle_res.value, abs=1e-10)


def test_mot_infeasible_carries_farkas(g1):
    # mean 1.5 marginal cannot match spot 1 under the martingale rows
    bad = [np.array([1.0]), np.array([0.0, 0.5, 0.5])]
    value, Q, rep = solver.mot_value(g1, bad, np.zeros(3))
    assert value == math.inf and Q is None
    assert rep.status == solver.STATUS_INFEASIBLE
    assert rep.certificate["farkas_y_eq"] is not None


def test_backend_agreement_entropic_martingale(g1, g1_uniform, g1_call):
    u = utility("exponential")
    spec = DivergenceSum.of([u, u], g1_uniform)
    reports = {}
    for backend in ("fw", "oracle"):
        rep = solver.solve_inf(
            EmotProblem(g1, g1_call, spec, ConeSpec(lattice.MARTINGALE),
                        SolverOptions(backend=backend))
        )
        reports[backend] = rep
    ref = oracle.gibbs_tilt(
        np.array([0.0, 1.0, 2.0]), np.asarray(g1_uniform[1]),
        np.maximum(np.array([0.0, 1.0, 2.0]) - 1.0, 0.0), 1.0
    )
    assert reports["oracle"].inf_value == pytest.approx(ref.value, abs=1e-12)
    assert reports["fw"].inf_value == pytest.approx(ref.value, abs=1e-6)
    assert reports["fw"].status == solver.STATUS_GAP
    tv = 0.5 * float(
        np.abs(reports["fw"].optimizer.weights
               - reports["oracle"].optimizer.weights).sum()
    )
    assert tv < 1e-4


def test_lp_backend_rejects_smooth_penalty(g1, g1_uniform, g1_call):
    u = utility("exponential")
    spec = DivergenceSum.of([u, u], g1_uniform)
    with pytest.raises(SolverError):
        solver.solve_inf(
            EmotProblem(g1, g1_call, spec, ConeSpec(lattice.MARTINGALE),
                        SolverOptions(backend="lp"))
        )


def test_oracle_backend_cone_restrictions(g1, g1_uniform, g1_call):
    u = utility("exponential")
    spec = DivergenceSum.of([u, u], g1_uniform)
    with pytest.raises(SolverError):
        solver.solve_inf(
            EmotProblem(g1, g1_call, spec,
                        ConeSpec(lattice.NO_SHORT_SELLING),
                        SolverOptions(backend="oracle"))
        )


def test_optimizer_consistency_lp(g1, g1_uniform, g1_call):
    # reported inf value must equal E_Q[c] + penalty(Q) at the optimizer
    payoff = np.array([0.0, 0.0, 1.0])
    spec = MarketPrice.of(
        [[], [OptionQuote.of(payoff, 0.3, loss("threshold", eps=0.02))]]
    )
    rep = solver.solve_inf(
        EmotProblem(g1, g1_call, spec, ConeSpec(lattice.MARTINGALE),
                    SolverOptions(backend="lp"))
    )
    assert rep.status == solver.STATUS_OPTIMAL
    Q = rep.optimizer
    # the optimum sits on the threshold boundary, so check the pieces
    # directly instead of re-evaluating the indicator at the edge
    miss = abs(float(np.dot(Q.weights, payoff)) - 0.3)
    assert miss <= 0.02 + 1e-9
    assert rep.inf_value == pytest.approx(
        float(np.dot(Q.weights, g1_call)), abs=1e-8
    )


def test_optimizer_consistency_fw(g1, g1_uniform, g1_call):
    u = utility("exponential")
    spec = DivergenceSum.of([u, u], g1_uniform)
    rep = solver.solve_inf(
        EmotProblem(g1, g1_call, spec, ConeSpec(lattice.NULL_CONE),
                    SolverOptions(backend="fw"))
    )
    Q = rep.optimizer
    expect = float(np.dot(Q.weights, g1_call)) + penalty_value(spec, g1, Q)
    assert rep.inf_value == pytest.approx(expect, abs=1e-6)


def test_eps_martingale_values_monotone_in_eps(g2, g2_marginals):
    # loosening the cone can only lower the inf
    cost = g2.path_values[:, 1, 0] * g2.path_values[:, 2, 0]
    spec = FixedMarginals.of(g2_marginals)
    prev = None
    for eps in (0.0, 0.05, 0.2, 0.5, 2.0):
        cone = (ConeSpec(lattice.MARTINGALE) if eps == 0.0
                else ConeSpec(lattice.EPS_MARTINGALE, eps=eps))
        rep = solver.solve_inf(
            EmotProblem(g2, cost, spec, cone, SolverOptions(backend="lp"))
        )
        assert rep.status == solver.STATUS_OPTIMAL
        if prev is not None:
            assert rep.inf_value <= prev + 1e-9
        prev = rep.inf_value


def test_directional_cones_bracket_martingale(g1, g1_uniform):
    # supermartingale/submartingale relaxations can only lower the inf
    cost = np.array([1.0, 0.0, 2.0])
    spec = FixedMarginals.of(g1_uniform)
    vals = {}
    for tag in (lattice.MARTINGALE, lattice.NO_SHORT_SELLING,
                lattice.NO_LONG_BUYING, lattice.NULL_CONE):
        rep = solver.solve_inf(
            EmotProblem(g1, cost, spec, ConeSpec(tag),
                        SolverOptions(backend="lp"))
        )
        assert rep.status == solver.STATUS_OPTIMAL
        vals[tag] = rep.inf_value
    assert vals[lattice.NO_SHORT_SELLING] <= vals[lattice.MARTINGALE] + 1e-10
    assert vals[lattice.NO_LONG_BUYING] <= vals[lattice.MARTINGALE] + 1e-10
    assert vals[lattice.NULL_CONE] <= min(
        vals[lattice.NO_SHORT_SELLING], vals[lattice.NO_LONG_BUYING]
    ) + 1e-10
    # with pinned marginals and the null cone, only the coupling is free;
    # here the cost depends on x1 alone so the value is the plain expectation
    assert vals[lattice.NULL_CONE] == pytest.approx(1.0, abs=1e-10)


def test_wasserstein_ball_lp(g1, g1_uniform, g1_call):
    spec = WassersteinBall.of(
        g1_uniform, [loss("hard"), loss("threshold", eps=0.1)]
    )
    rep = solver.solve_inf(
        EmotProblem(g1, g1_call, spec, ConeSpec(lattice.MARTINGALE),
                    SolverOptions(backend="lp"))
    )
    assert rep.status == solver.STATUS_OPTIMAL
    # ball allows shifting 0.1 mass of the call-paying node downward
    assert rep.inf_value <= THIRD + 1e-10
    from emot.wasserstein import w1

    dist = w1(lattice.marginal(g1, rep.optimizer, 1).weights,
              g1_uniform[1], np.array([0.0, 1.0, 2.0]))
    assert dist <= 0.1 + 1e-9


def test_solve_eot_requires_null_cone(g1, g1_uniform, g1_call):
    u = utility("exponential")
    spec = DivergenceSum.of([u, u], g1_uniform)
    with pytest.raises(SolverError):
        solver.solve_eot(
            EmotProblem(g1, g1_call, spec, ConeSpec(lattice.MARTINGALE))
        )
    rep = solver.solve_eot(
        EmotProblem(g1, g1_call, spec, ConeSpec(lattice.NULL_CONE),
                    SolverOptions(backend="oracle"))
    )
    ref = oracle.gibbs_free(
        np.array([0.0, 1.0, 2.0]), np.asarray(g1_uniform[1]), np.asarray(g1_call)
    )
    assert rep.inf_value == pytest.approx(ref.value, abs=1e-12)


def test_measure_to_csv_round_trip(g1):
    Q = PathMeasure(np.array([0.25, 0.5, 0.25]))
    text = solver.measure_to_csv(g1, Q)
    lines = text.strip().split("\n")
    assert lines[0] == "path_index,x0_0,x1_0,weight"
    assert len(lines) == 4
    cells = lines[2].split(",")
    assert float(cells[2]) == 1.0 and float(cells[3]) == 0.5


def test_infinite_cost_paths_are_dropped(g1, g1_uniform):
    cost = np.array([0.0, math.inf, 0.0])
    spec = FixedMarginals.of(g1_uniform)
    rep = solver.solve_inf(
        EmotProblem(g1, cost, spec, ConeSpec(lattice.NULL_CONE),
                    SolverOptions(backend="lp"))
    )
    # the pinned marginal forces mass on the infinite path: infeasible
    assert rep.status == solver.STATUS_INFEASIBLE
    rep2 = solver.solve_inf(
        EmotProblem(g1, cost, FixedMarginals.of(
            [np.array([1.0]), np.array([0.5, 0.0, 0.5])]
        ), ConeSpec(lattice.NULL_CONE), SolverOptions(backend="lp"))
    )
    assert rep2.status == solver.STATUS_OPTIMAL
    assert rep2.inf_value == pytest.approx(0.0, abs=1e-12)


def test_report_to_dict_shape(g1, g1_uniform, g1_call):
    value, Q, rep = solver.mot_value(g1, g1_uniform, g1_call)
    d = rep.to_dict()
    assert d["status"] == "optimal" and d["backend"] == "lp"
    assert d["inf_value"] == pytest.approx(THIRD)
    assert isinstance(d["optimizer"], list) and len(d["optimizer"]) == 3
    assert "wall_time" in d and "iterations" in d
