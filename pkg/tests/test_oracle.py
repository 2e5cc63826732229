import math

import numpy as np
import pytest

from emot import oracle
from emot.lattice import MarketGrid
from emot.oracle import OracleError


def test_gibbs_free_closed_form():
    nodes = np.array([0.0, 1.0, 2.0])
    ref = np.full(3, 1.0 / 3.0)
    cost = np.array([1.0, 0.0, 1.0])
    res = oracle.gibbs_free(nodes, ref, cost)
    part = float(np.sum(ref * np.exp(-cost)))
    assert res.value == pytest.approx(-math.log(part), abs=1e-14)
    q = res.argopt
    assert q.sum() == pytest.approx(1.0)
    # first-order optimality: cost + log(q/ref) constant across support
    grad = cost + np.log(q / ref)
    assert np.ptp(grad) < 1e-12


def test_gibbs_free_is_a_lower_bound_over_random_measures():
    rng = np.random.default_rng(0)
    nodes = np.linspace(0, 3, 5)
    ref = rng.dirichlet(np.ones(5))
    cost = rng.normal(size=5)
    res = oracle.gibbs_free(nodes, ref, cost)
    for _ in range(200):
        q = rng.dirichlet(np.ones(5))
        val = float(np.dot(cost, q) + np.sum(q * np.log(q / ref)))
        assert val >= res.value - 1e-12


def test_gibbs_tilt_meets_mean_and_beats_feasible_competitors():
    rng = np.random.default_rng(1)
    nodes = np.array([0.0, 1.0, 2.0])
    ref = np.full(3, 1.0 / 3.0)
    cost = np.maximum(nodes - 1.0, 0.0)
    res = oracle.gibbs_tilt(nodes, ref, cost, 1.0)
    q = res.argopt
    assert float(np.dot(q, nodes)) == pytest.approx(1.0, abs=1e-11)
    assert q.sum() == pytest.approx(1.0)
    # compare against random measures projected onto the mean constraint
    for _ in range(300):
        w = rng.dirichlet(np.ones(3))
        # mix toward the tilt until the mean matches exactly
        m = float(np.dot(w, nodes))
        if abs(m - 1.0) > 1e-12:
            lam_mix = (1.0 - m) / (float(np.dot(q, nodes)) - m)
            if not 0.0 <= lam_mix <= 1.0:
                continue
            w = (1 - lam_mix) * w + lam_mix * q
        val = float(np.dot(cost, w) + np.sum(w * np.log(w / ref)))
        assert val >= res.value - 1e-9


def test_gibbs_tilt_symmetric_case_is_analytic():
    # symmetric cost and reference with mean at the center: lam = 0 component
    nodes = np.array([-1.0, 0.0, 1.0])
    ref = np.full(3, 1.0 / 3.0)
    cost = np.abs(nodes)
    res = oracle.gibbs_tilt(nodes, ref, cost, 0.0)
    free = oracle.gibbs_free(nodes, ref, cost)
    assert res.value == pytest.approx(free.value, abs=1e-11)
    assert res.detail["lam"] == pytest.approx(0.0, abs=1e-9)


def test_gibbs_tilt_input_validation():
    nodes = np.array([0.0, 1.0])
    with pytest.raises(OracleError):
        oracle.gibbs_tilt(nodes, np.array([1.0, 0.0]), np.zeros(2), 0.5)
    with pytest.raises(OracleError):
        oracle.gibbs_tilt(nodes, np.full(2, 0.5), np.zeros(2), 1.5)


def test_dense_grid_min_1d_and_2d():
    res = oracle.dense_grid_min(-3.0, 3.0, lambda x: (x - 0.7) ** 2)
    assert res.value == pytest.approx(0.0, abs=1e-8)
    assert float(res.argopt[0]) == pytest.approx(0.7, abs=1e-4)

    def rosen_like(p):
        return (p[0] - 1.0) ** 2 + 2.0 * (p[1] + 0.5) ** 2

    res2 = oracle.dense_grid_min([-2.0, -2.0], [2.0, 2.0], rosen_like)
    assert res2.value == pytest.approx(0.0, abs=1e-6)
    assert res2.detail["cell_diameter"] < 1e-3
    with pytest.raises(OracleError):
        oracle.dense_grid_min(np.zeros(4), np.ones(4), lambda p: 0.0)


def test_vertex_enum_mot_one_period(g1, g1_uniform, g1_call):
    res = oracle.vertex_enum_mot(g1, g1_uniform, g1_call)
    assert res.value == pytest.approx(1.0 / 3.0, abs=1e-12)
    q = res.argopt
    assert q.sum() == pytest.approx(1.0)
    assert float(np.dot(q, g1.path_values[:, 1, 0])) == pytest.approx(1.0, abs=1e-10)


def test_vertex_enum_mot_two_period(g2, g2_marginals, g2_call):
    res = oracle.vertex_enum_mot(g2, g2_marginals, g2_call)
    assert res.value == pytest.approx(0.5, abs=1e-10)
    assert res.detail["status"] == "optimal"


def test_vertex_enum_infeasible_marginals(g1):
    # marginal mean 1.5 cannot be a martingale started at 1
    bad = [np.array([1.0]), np.array([0.0, 0.5, 0.5])]
    res = oracle.vertex_enum_mot(g1, bad, np.zeros(3))
    assert res.value == math.inf
    assert res.detail["status"] == "infeasible"


def test_vertex_enum_no_marginals_is_cheapest_martingale(g1):
    cost = np.array([2.0, 5.0, 2.0])
    res = oracle.vertex_enum_mot(g1, None, cost)
    # any martingale measure has mean 1; putting half mass on each end
    # hits cost 2, the minimum
    assert res.value == pytest.approx(2.0, abs=1e-10)


def test_vertex_enum_respects_path_cap():
    g = MarketGrid([[[1.0]], [[0.0, 1.0, 2.0]]])
    with pytest.raises(OracleError):
        oracle.vertex_enum_mot(g, None, np.zeros(3), max_paths=2)
