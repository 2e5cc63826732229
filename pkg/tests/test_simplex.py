"""Dense simplex versus scipy.optimize.linprog as an independent oracle."""

import numpy as np
import pytest
from scipy.optimize import linprog

from emot import simplex


def random_lp(rng, n, m_eq, m_ub):
    # built around a known feasible point so the instance is never empty
    x0 = rng.uniform(0.0, 2.0, size=n)
    c = rng.normal(size=n)
    A_eq = rng.normal(size=(m_eq, n)) if m_eq else None
    b_eq = A_eq @ x0 if m_eq else None
    A_ub = rng.normal(size=(m_ub, n)) if m_ub else None
    b_ub = A_ub @ x0 + rng.uniform(0.1, 1.0, size=m_ub) if m_ub else None
    return c, A_eq, b_eq, A_ub, b_ub


@pytest.mark.parametrize("seed", range(30))
def test_matches_scipy_on_random_instances(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(3, 9))
    m_eq = int(rng.integers(0, min(n - 1, 4)))
    m_ub = int(rng.integers(1, 6))
    c, A_eq, b_eq, A_ub, b_ub = random_lp(rng, n, m_eq, m_ub)
    # bound the feasible region so both solvers agree on boundedness
    A_box = np.eye(n)
    b_box = np.full(n, 10.0)
    A_ub_full = A_box if A_ub is None else np.vstack([A_ub, A_box])
    b_ub_full = b_box if b_ub is None else np.concatenate([b_ub, b_box])

    res = simplex.solve_lp_nonneg(c, A_eq, b_eq, A_ub_full, b_ub_full)
    ref = linprog(c, A_ub=A_ub_full, b_ub=b_ub_full, A_eq=A_eq, b_eq=b_eq,
                  bounds=(0, None), method="highs")
    assert res.status == simplex.OPTIMAL
    assert ref.status == 0
    assert res.value == pytest.approx(ref.fun, abs=1e-8)
    # primal feasibility of our point
    if A_eq is not None:
        assert np.max(np.abs(A_eq @ res.x - b_eq)) < 1e-8
    assert np.max(A_ub_full @ res.x - b_ub_full) < 1e-8
    assert np.min(res.x) > -1e-9


@pytest.mark.parametrize("seed", range(12))
def test_strong_duality_and_dual_feasibility(seed):
    rng = np.random.default_rng(100 + seed)
    n = int(rng.integers(3, 8))
    m_eq = int(rng.integers(1, 3))
    m_ub = int(rng.integers(1, 5))
    c, A_eq, b_eq, A_ub, b_ub = random_lp(rng, n, m_eq, m_ub)
    A_ub = np.vstack([A_ub, np.eye(n)])
    b_ub = np.concatenate([b_ub, np.full(n, 10.0)])
    res = simplex.solve_lp_nonneg(c, A_eq, b_eq, A_ub, b_ub)
    assert res.status == simplex.OPTIMAL
    # y_ub <= 0, value = y . b, and y A <= c columnwise
    assert np.max(res.y_ub) < 1e-9
    dual_value = float(res.y_eq @ b_eq + res.y_ub @ b_ub)
    assert dual_value == pytest.approx(res.value, abs=1e-8)
    col = res.y_eq @ A_eq + res.y_ub @ A_ub
    assert np.max(col - c) < 1e-8
    assert res.compl_slack_residual < 1e-8


def test_infeasible_farkas_certificate():
    # x1 + x2 = 1 and x1 + x2 >= 3 cannot both hold
    A_eq = np.array([[1.0, 1.0]])
    b_eq = np.array([1.0])
    A_ub = np.array([[-1.0, -1.0]])
    b_ub = np.array([-3.0])
    res = simplex.solve_lp_nonneg(np.zeros(2), A_eq, b_eq, A_ub, b_ub)
    assert res.status == simplex.INFEASIBLE
    y_eq, y_ub = res.farkas_y_eq, res.farkas_y_ub
    # certificate: y A <= 0 componentwise with y . b > 0
    col = y_eq @ A_eq + y_ub @ A_ub
    assert np.max(col) < 1e-9
    assert float(y_eq @ b_eq + y_ub @ b_ub) > 1e-9
    assert np.max(y_ub) < 1e-9


def test_free_variables_match_scipy():
    rng = np.random.default_rng(7)
    for _ in range(10):
        n = 5
        c = rng.normal(size=n)
        A_eq = rng.normal(size=(2, n))
        x0 = rng.normal(size=n)
        b_eq = A_eq @ x0
        A_ub = np.vstack([np.eye(n), -np.eye(n)])
        b_ub = np.full(2 * n, 8.0)
        free = np.array([True, True, False, False, True])
        res = simplex.solve_lp(c, A_eq, b_eq, A_ub, b_ub, free=free)
        bounds = [(None, None) if f else (0, None) for f in free]
        ref = linprog(c, A_ub=A_ub, b_ub=b_ub, A_eq=A_eq, b_eq=b_eq,
                      bounds=bounds, method="highs")
        if ref.status == 2:
            assert res.status == simplex.INFEASIBLE
            continue
        assert res.status == simplex.OPTIMAL
        assert res.value == pytest.approx(ref.fun, abs=1e-8)


def test_degenerate_instance_terminates():
    # Beale's cycling example; Bland's rule must terminate
    c = np.array([-0.75, 150.0, -0.02, 6.0])
    A_ub = np.array(
        [
            [0.25, -60.0, -0.04, 9.0],
            [0.5, -90.0, -0.02, 3.0],
            [0.0, 0.0, 1.0, 0.0],
        ]
    )
    b_ub = np.array([0.0, 0.0, 1.0])
    res = simplex.solve_lp_nonneg(c, None, None, A_ub, b_ub)
    assert res.status == simplex.OPTIMAL
    assert res.value == pytest.approx(-0.05, abs=1e-9)


def test_unbounded_detected():
    res = simplex.solve_lp_nonneg(np.array([-1.0, 0.0]))
    assert res.status == simplex.UNBOUNDED
