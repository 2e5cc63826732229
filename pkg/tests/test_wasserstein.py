import numpy as np
import pytest
from scipy.stats import wasserstein_distance

from emot.wasserstein import (
    GroundMetric,
    WassersteinError,
    kr_dual_witness,
    w1,
)


@pytest.mark.parametrize("seed", range(20))
def test_w1_matches_scipy(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(2, 12))
    nodes = np.sort(rng.uniform(-5, 5, size=n))
    mu = rng.dirichlet(np.ones(n))
    nu = rng.dirichlet(np.ones(n))
    ours = w1(mu, nu, nodes)
    ref = wasserstein_distance(nodes, nodes, mu, nu)
    assert ours == pytest.approx(ref, abs=1e-10)


def test_w1_zero_and_symmetry():
    nodes = np.array([0.0, 1.0, 3.0])
    mu = np.array([0.2, 0.3, 0.5])
    nu = np.array([0.5, 0.5, 0.0])
    assert w1(mu, mu, nodes) == 0.0
    assert w1(mu, nu, nodes) == pytest.approx(w1(nu, mu, nodes))


def test_w1_point_masses():
    nodes = np.array([0.0, 2.0])
    assert w1([1.0, 0.0], [0.0, 1.0], nodes) == pytest.approx(2.0)


def test_w1_input_validation():
    with pytest.raises(WassersteinError):
        w1([0.5, 0.5], [1.0], np.array([0.0, 1.0]))
    with pytest.raises(WassersteinError):
        w1([0.5, 0.5], [0.2, 0.2], np.array([0.0, 1.0]))


def test_w1_custom_metric_matches_euclidean():
    rng = np.random.default_rng(3)
    nodes = np.array([0.0, 1.0, 2.5, 4.0])
    table = np.abs(nodes[:, None] - nodes[None, :])
    metric = GroundMetric.custom(table)
    for _ in range(10):
        mu = rng.dirichlet(np.ones(4))
        nu = rng.dirichlet(np.ones(4))
        assert w1(mu, nu, nodes, metric) == pytest.approx(
            w1(mu, nu, nodes), abs=1e-9
        )


def test_w1_custom_metric_discrete():
    # 0/1 metric turns w1 into half the total variation distance
    nodes = np.array([0.0, 1.0, 2.0])
    table = np.ones((3, 3)) - np.eye(3)
    metric = GroundMetric.custom(table)
    mu = np.array([0.6, 0.3, 0.1])
    nu = np.array([0.1, 0.3, 0.6])
    tv_half = 0.5 * float(np.abs(mu - nu).sum())
    assert w1(mu, nu, nodes, metric) == pytest.approx(tv_half, abs=1e-10)


def test_custom_metric_validation():
    with pytest.raises(WassersteinError):
        GroundMetric.custom(np.array([[0.0, 1.0]]))  # not square
    with pytest.raises(WassersteinError):
        GroundMetric.custom(np.array([[0.0, -1.0], [-1.0, 0.0]]))
    with pytest.raises(WassersteinError):
        GroundMetric.custom(np.array([[0.0, 1.0], [2.0, 0.0]]))  # asymmetric
    with pytest.raises(WassersteinError):
        GroundMetric.custom(np.array([[0.5, 1.0], [1.0, 0.0]]))  # diagonal
    bad_triangle = np.array(
        [[0.0, 1.0, 5.0], [1.0, 0.0, 1.0], [5.0, 1.0, 0.0]]
    )
    with pytest.raises(WassersteinError):
        GroundMetric.custom(bad_triangle)
    with pytest.raises(WassersteinError):
        # table size must match the node set at evaluation time
        metric = GroundMetric.custom(np.zeros((2, 2)))
        w1([0.5, 0.5, 0.0], [0.0, 0.5, 0.5], np.array([0.0, 1.0, 2.0]), metric)


@pytest.mark.parametrize("seed", range(15))
def test_kr_dual_witness_attains_and_is_lipschitz(seed):
    rng = np.random.default_rng(100 + seed)
    n = int(rng.integers(2, 8))
    nodes = np.sort(rng.uniform(-3, 3, size=n))
    mu = rng.dirichlet(np.ones(n))
    nu = rng.dirichlet(np.ones(n))
    val, ell = kr_dual_witness(mu, nu, nodes)
    assert val == pytest.approx(w1(mu, nu, nodes), abs=1e-8)
    assert ell[0] == 0.0
    D = np.abs(nodes[:, None] - nodes[None, :])
    assert np.max(np.abs(ell[:, None] - ell[None, :]) - D) <= 1e-9


def test_kr_dual_witness_custom_metric():
    nodes = np.array([0.0, 1.0, 2.0])
    table = np.ones((3, 3)) - np.eye(3)
    metric = GroundMetric.custom(table)
    mu = np.array([0.7, 0.2, 0.1])
    nu = np.array([0.2, 0.2, 0.6])
    val, ell = kr_dual_witness(mu, nu, nodes, metric)
    assert val == pytest.approx(w1(mu, nu, nodes, metric), abs=1e-8)
    assert np.max(np.abs(ell[:, None] - ell[None, :]) - table) <= 1e-9
