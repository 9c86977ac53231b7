import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import integrate, linalg

from liquidation import RegimeModel, SizeDistribution, table1_model, truncated_poisson
from liquidation.errors import DegenerateFlowError, ZeroLikelihoodError
from liquidation.filtering import (FlowCache, arrival_density, conditional_flow, expm, jump_update, propagate,
                                   renormalize, unnormalized_flow)
from liquidation.simulator import simulate_path

import oracles


def random_model(seed, m=3):
    rng = np.random.default_rng(seed)
    Q = rng.uniform(0.1, 3.0, (m, m))
    np.fill_diagonal(Q, 0.0)
    np.fill_diagonal(Q, -Q.sum(axis=1))
    lam = rng.uniform(0.5, 5.0, m)
    sizes = tuple(truncated_poisson(mu) for mu in rng.uniform(1.0, 8.0, m))
    return RegimeModel(Q, lam, sizes)


def random_belief(seed, m=3):
    return np.random.default_rng(seed).dirichlet(np.ones(m))


@given(st.integers(0, 10 ** 6), st.floats(1e-3, 50.0))
def test_expm_matches_scipy(seed, scale):
    A = np.random.default_rng(seed).normal(size=(4, 4)) * scale / 4
    assert np.allclose(expm(A), linalg.expm(A), rtol=1e-10, atol=1e-12 * np.abs(linalg.expm(A)).max())


def test_expm_batched():
    rng = np.random.default_rng(1)
    A = rng.normal(size=(5, 3, 3)) * np.array([0.01, 0.5, 2.0, 10.0, 30.0])[:, None, None]
    E = expm(A)
    for i in range(5):
        assert np.allclose(E[i], linalg.expm(A[i]), rtol=1e-10)
    assert np.allclose(expm(np.zeros((3, 3))), np.eye(3))


def test_scalar_flow():
    M = RegimeModel.poisson(1.0)
    c = FlowCache(M, 0.01)
    for u in (0.0, 0.37, 2.0):
        assert unnormalized_flow(c, [1.0], u)[0] == pytest.approx(math.exp(-u), rel=1e-13)
        assert conditional_flow(c, [1.0], u)[0] == 1.0
        assert arrival_density(c, [1.0], u, 0) == pytest.approx(math.exp(-u), rel=1e-13)


def test_two_regime_flow_against_scipy_and_mc():
    Q = [[-1.0, 1.0], [1.0, -1.0]]
    lam = [2.0, 1.0]
    M = RegimeModel(Q, lam)
    c = FlowCache(M, 0.01)
    m = unnormalized_flow(c, [0.5, 0.5], 0.1)
    assert np.allclose(m, oracles.no_arrival_flow(Q, lam, [0.5, 0.5], 0.1), rtol=1e-12)
    # P(no arrival by 0.1, regime at 0.1 = i) by simulation
    n = 20_000
    hits = np.zeros(2)
    for r in range(n):
        path = simulate_path(M, 0.1, 9, start=[0.5, 0.5], stream=r)
        if path.n_events == 0:
            hits[path.regime_at(0.1)] += 1
    est = hits / n
    se = np.sqrt(est * (1 - est) / n)
    assert np.all(np.abs(est - m) < 3 * se)


def test_cache_grid_and_off_grid():
    M = table1_model()
    c = FlowCache(M, 0.01, 50)
    A = M.flow_matrix()
    for u in (0.0, 0.01, 0.37, 0.5, 0.123456):
        assert np.allclose(c(u), linalg.expm(u * A), rtol=1e-11, atol=1e-14)
    assert np.array_equal(c(0.0), np.eye(3))


@given(st.integers(0, 10 ** 6), st.floats(0.0, 1.0), st.floats(0.0, 1.0))
def test_semigroup(seed, s, t):
    M = random_model(seed)
    c = FlowCache(M, 0.01)
    pi = random_belief(seed + 1)
    a = conditional_flow(c, pi, s + t)
    b = conditional_flow(c, conditional_flow(c, pi, s), t)
    assert np.allclose(a, b, atol=1e-9)
    assert abs(a.sum() - 1) < 1e-10


@given(st.integers(0, 10 ** 6), st.floats(0.0, 3.0), st.integers(1, 10))
def test_normalization_and_corners(seed, u, y):
    M = random_model(seed)
    c = FlowCache(M, 0.01)
    pi = jump_update(M, conditional_flow(c, random_belief(seed), u), y)
    assert abs(pi.sum() - 1) < 1e-10 and np.all(pi >= 0)
    for i in range(3):
        e = np.eye(3)[i]
        assert np.allclose(jump_update(M, e, y), e)


def test_subprobability():
    M = table1_model()
    c = FlowCache(M, 0.01)
    for u in (0.0, 0.1, 1.0, 5.0):
        m = unnormalized_flow(c, [0.2, 0.5, 0.3], u)
        assert np.all(m >= 0) and m.sum() <= 1 + 1e-15


def test_jump_update_examples():
    nu = SizeDistribution([0.4, 0.6])
    M = RegimeModel([[-1.0, 1.0], [1.0, -1.0]], [2.0, 1.0], (nu, nu))
    assert np.allclose(jump_update(M, [0.5, 0.5], 2), [2 / 3, 1 / 3])
    assert np.allclose(jump_update(RegimeModel.poisson(3.0), [1.0], 1), [1.0])
    with pytest.raises(ZeroLikelihoodError):
        jump_update(M, [0.5, 0.5], 3)
    with pytest.raises(ValueError):
        jump_update(M, [0.5, 0.5], 0)


def test_jump_update_batched():
    M = table1_model()
    P = np.array([[0.2, 0.3, 0.5], [0.6, 0.2, 0.2]])
    y = np.array([3, 11])
    out = jump_update(M, P, y)
    for r in range(2):
        assert np.allclose(out[r], jump_update(M, P[r], int(y[r])))


def test_high_intensity_weight_decays_without_arrivals():
    M = RegimeModel([[-1.0, 1.0], [1.0, -1.0]], [3.0, 1.0])
    c = FlowCache(M, 0.01)
    x = [conditional_flow(c, [0.5, 0.5], u)[0] for u in np.linspace(0, 3, 31)]
    assert np.all(np.diff(x) < 0)


def test_arrival_density():
    M = table1_model()
    c = FlowCache(M, 0.01)
    pi = np.array([0.2, 0.5, 0.3])
    assert np.allclose(arrival_density(c, pi, 0.0), M.intensities * pi)
    total, _ = integrate.quad(lambda u: arrival_density(c, pi, u).sum(), 0, np.inf, limit=200)
    assert total == pytest.approx(1.0, abs=1e-8)


def test_propagate_matches_sequential():
    M = table1_model()
    c = FlowCache(M, 0.01)
    P = np.array([[0.2, 0.3, 0.5], [1.0, 0.0, 0.0], [0.1, 0.1, 0.8]])
    u = np.array([0.05, 0.8, 1.3])
    out, surv = propagate(M, P, u)
    for r in range(3):
        assert np.allclose(out[r], conditional_flow(c, P[r], u[r]), atol=1e-13)
        assert surv[r] == pytest.approx(unnormalized_flow(c, P[r], u[r]).sum(), rel=1e-12)


def test_degenerate_normalizer():
    with pytest.raises(DegenerateFlowError):
        renormalize(np.zeros(3))
