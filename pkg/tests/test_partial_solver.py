import warnings

import numpy as np
import pytest
from hypothesis import given, strategies as st

from liquidation import (BeliefMesh, DepthFunction, RegimeModel, solve_base, solve_markov, solve_partial,
                         table1_model, truncated_poisson)
from liquidation.errors import DomainError, NumericalGuardError
from liquidation.partial_solver import best_action, first_jump_step, interpolate, node_count

F = DepthFunction(0.5, 2.0)


@pytest.fixture(scope="module")
def table1_surfaces():
    M = table1_model()
    return (solve_partial(M, F, 20, 1.0, 0.01, 1 / 20),
            solve_partial(M, F, 20, 1.0, 0.01, 1 / 20, constrained=True))


# --- mesh -------------------------------------------------------------------

def test_mesh_size_and_nodes():
    mesh = BeliefMesh(3, 1 / 20)
    assert len(mesh) == 231 == node_count(3, 1 / 20)
    assert np.allclose(mesh.nodes.sum(axis=1), 1.0)
    assert np.all(mesh.nodes >= 0)
    assert len({tuple(r) for r in mesh.counts}) == 231


def test_mesh_guards():
    with pytest.raises(NumericalGuardError):
        BeliefMesh(5, 0.5)
    with pytest.raises(DomainError):
        BeliefMesh(3, 0.3)
    with pytest.raises(DomainError):
        BeliefMesh(3, 0.0)


@given(st.integers(2, 4), st.sampled_from([1 / 4, 1 / 10, 1 / 20]), st.integers(0, 10 ** 6))
def test_locate_is_a_convex_combination(m, h, seed):
    mesh = BeliefMesh(m, h)
    P = np.random.default_rng(seed).dirichlet(np.ones(m), size=50)
    verts, w = mesh.locate(P)
    assert np.all(w >= 0) and np.allclose(w.sum(axis=1), 1.0)
    assert np.allclose((mesh.nodes[verts] * w[..., None]).sum(axis=1), P, atol=1e-12)
    # vertices of one cell are within one mesh step of each other
    spread = np.abs(mesh.nodes[verts][:, :, None, :] - mesh.nodes[verts][:, None, :, :]).max(axis=(1, 2, 3))
    assert np.all(spread <= mesh.h + 1e-12)


def test_interpolation_examples():
    mesh = BeliefMesh(3, 1 / 10)
    vals = np.random.default_rng(0).normal(size=len(mesh))
    for n in (0, 17, len(mesh) - 1):
        assert mesh.interpolate(vals, mesh.nodes[n]) == pytest.approx(vals[n], abs=1e-12)
    i, j = mesh.index_of([0.5, 0.5, 0.0]), mesh.index_of([0.4, 0.6, 0.0])
    mid = 0.5 * (mesh.nodes[i] + mesh.nodes[j])
    assert mesh.interpolate(vals, mid) == pytest.approx(0.5 * (vals[i] + vals[j]), abs=1e-12)
    lin = mesh.nodes @ np.array([1.0, -2.0, 3.0])
    p = np.array([0.123, 0.456, 0.421])
    assert mesh.interpolate(lin, p) == pytest.approx(p @ [1.0, -2.0, 3.0], abs=1e-12)


# --- operators ----------------------------------------------------------------

def test_best_action_examples():
    assert best_action([0.0, 0.7], 1, F, 5, False) == (pytest.approx(0.5), 1)
    vals = np.array([0.0, 0.4, 1.0, 2.0, 3.5])
    assert best_action(vals, 4, F, 1, True)[1] == 1
    tie = np.array([0.0, 1.5, 9.0])  # F(1) + v[1] == F(2) + v[0]
    assert best_action(tie, 2, F, 5, False) == (pytest.approx(2.0), 1)


@pytest.mark.parametrize("scheme", ["averaged", "lagged"])
@pytest.mark.parametrize("constrained", [False, True])
def test_reference_step_matches_vectorized(scheme, constrained):
    M = table1_model()
    s = solve_partial(M, F, 8, 0.03, 0.01, 1 / 10, constrained=constrained, half_step=scheme)
    for j in (0, 2):
        for node in (0, 20, 40, len(s.mesh) - 1):
            for k in range(1, 9):
                v, a = first_jump_step(s.v[:, j], s.v[:, j + 1], k, node, s.mesh, M, F, s.dt,
                                       constrained, scheme)
                assert v == pytest.approx(s.v[k, j + 1, node], abs=1e-10)
                assert a == s.a[k, j + 1, node]


def test_single_regime_step_is_euler_to_second_order():
    M = RegimeModel.poisson(1.0)
    b = solve_base(1.0, F, 20, 0.02, 0.01)
    dts = [0.01, 0.005]
    errs = []
    for dt in dts:
        s = solve_partial(M, F, 20, dt, dt, 1.0, half_step="lagged")
        e = solve_base(1.0, F, 20, dt, dt)
        errs.append(np.max(np.abs(s.v[:, 1, 0] - e.v[:, 1])))
    assert errs[0] < F(20.0) * dts[0] ** 2            # O(dt^2) on the scale of the values
    assert 3 < errs[0] / errs[1] < 5                  # halving dt quarters the gap
    assert b.n_steps == 2


def test_single_regime_matches_converged_base():
    M = RegimeModel.poisson(1.0)
    s = solve_partial(M, F, 20, 2.0, 0.01, 1.0)
    ref = solve_base(1.0, F, 20, 2.0, 1e-4).v[:, ::100]
    assert np.max(np.abs(s.v[:, :, 0] - ref)) < 5e-3


def test_corners_without_switching_match_base():
    nu = truncated_poisson(3.0)
    M = RegimeModel(np.zeros((2, 2)), [2.0, 0.5], (nu, nu))
    s = solve_partial(M, F, 12, 1.0, 0.01, 1 / 10)
    for i, node in enumerate(s.mesh.corners()):
        ref = solve_base(float(M.intensities[i]), F, 12, 1.0, 1e-4).v[:, ::100]
        assert np.max(np.abs(s.v[:, :, node] - ref)) < 5e-3


def test_terminal_condition(table1_surfaces):
    for s in table1_surfaces:
        assert np.allclose(s.v[:, 0, :], F.table(20)[:, None])
        assert np.all(s.v[0] == 0)


def test_constrained_dominates(table1_surfaces):
    unc, con = table1_surfaces
    assert np.all(con.v >= unc.v - 1e-9)


def test_information_ordering(table1_surfaces):
    M = table1_model()
    for s, con in zip(table1_surfaces, (False, True)):
        full = solve_markov(M, F, 20, 1.0, 0.001, constrained=con)
        X = s.mesh.nodes
        inner = np.all(X > 0.2, axis=1)
        for j in (25, 50, 100):
            blend = X @ full.v[:, :, 10 * j]        # (nodes, k)
            part = s.v[:, j, :].T
            # ordering holds up to the discretization error of either grid (~3e-5 relative)
            assert np.all(part >= blend - 1e-4 * np.maximum(blend, 1.0))
            assert np.all(part[inner, 20] > blend[inner, 20])


def test_two_regime_monotone_in_high_intensity_weight():
    nu = truncated_poisson(4.0)
    M = RegimeModel([[-1.0, 1.0], [2.0, -2.0]], [4.0, 1.0], (nu, nu))
    for con in (False, True):
        s = solve_partial(M, F, 15, 1.5, 0.01, 1 / 20, constrained=con)
        order = np.argsort(s.mesh.nodes[:, 0])
        d = np.diff(s.v[:, :, order], axis=2)
        assert np.all(d <= 1e-9)


def test_action_structure_findings(table1_surfaces):
    # carried over from the full-information results as an empirical check only
    for s in table1_surfaces:
        ak = np.diff(s.a[1:], axis=0)
        aT = np.diff(s.a, axis=1)
        bad_k = int(np.sum((ak != 0) & (ak != 1)))
        bad_T = int(np.sum((aT != 0) & (aT != -1)))
        if bad_k or bad_T:
            warnings.warn(f"action structure: {bad_k} k-step and {bad_T} T-step exceptions "
                          f"(constrained={s.constrained})")
        assert np.array_equal(s.a[2:, 0, 0], np.arange(2, 21) // 2)


def test_value_and_action_lookup(table1_surfaces):
    s = table1_surfaces[0]
    c0 = s.mesh.corners()[0]
    assert s.value(20, 1.0, [1.0, 0.0, 0.0]) == pytest.approx(s.v[20, -1, c0])
    v, a = interpolate(s, 20, 100, [1.0, 0.0, 0.0])
    assert v == pytest.approx(s.v[20, -1, c0]) and a == s.a[20, -1, c0]
    assert s.action(20, 0.5, [0.3, 0.3, 0.4]) >= 1


def test_csv_exports(tmp_path):
    s = solve_partial(table1_model(), F, 4, 0.05, 0.01, 1 / 4)
    lines = s.to_csv(tmp_path / "b.csv").read_text().splitlines()
    assert lines[1] == "k,T,pi0,pi1,pi2,v,a"
    assert len(lines) == 2 + 5 * 6 * len(s.mesh)
    sl = s.slice_csv(tmp_path / "s.csv", 4, 0.05).read_text().splitlines()
    assert sl[1] == "pi0,pi1,pi2,v,a" and len(sl) == 2 + len(s.mesh)


def test_bad_scheme_rejected():
    with pytest.raises(DomainError):
        solve_partial(table1_model(), F, 4, 0.05, 0.01, 1 / 4, half_step="midpoint")
