import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from d2oc.condensed import (CERT_TOL, CondensedQp, condense, projected_gradient_residual,
                            solve_box_qp, solve_condensed, surrogate_cost)
from d2oc.density import HorizonData
from d2oc.kkt import assemble_kkt, schur_reduce
from d2oc.lti import AgentState, ContractError, make_quadrotor8, make_scalar

from conftest import random_instance

SCALAR = make_scalar()


def scalar_hd(T):
    return HorizonData.constant(np.zeros((1, 1)), np.eye(1), [[1.0]], [2.0], T)


@pytest.mark.parametrize("T,H,g", [(1, 2.0, -2.0), (2, 3.0, -4.0)])
def test_scalar_examples(T, H, g):
    qp = condense(SCALAR, scalar_hd(T), AgentState([0.0]))
    assert qp.H.item() == pytest.approx(H)
    assert qp.g.item() == pytest.approx(g)


def test_on_reference_gradient_vanishes(rng):
    model, hd, x0 = random_instance(rng, 3, 2, 6, spectral_radius=0.9)
    refs, x = [], x0
    for _ in range(6):
        x = model.A @ x
        refs.append(x)
    hd = HorizonData(hd.Q, hd.R, hd.Qbar_seq, refs)
    np.testing.assert_allclose(condense(model, hd, AgentState(x0)).g, 0.0, atol=1e-12)


def test_matches_schur_block(rng):
    model, hd, x0 = random_instance(rng, 4, 2, 12, spectral_radius=1.05)
    qp = condense(model, hd, AgentState(x0))
    Hf, Gf = schur_reduce(assemble_kkt(model, hd, AgentState(x0)))
    np.testing.assert_allclose(qp.H, Hf[:2, :2], rtol=1e-9)
    np.testing.assert_allclose(qp.g, -Gf[:2], rtol=1e-9)


def test_one_term_recursion(rng):
    model, hd, x0 = random_instance(rng, 3, 2, 9)
    for T in range(1, 8):
        h0 = HorizonData(hd.Q, hd.R, hd.Qbar_seq[:T], hd.ref_seq[:T])
        h1 = HorizonData(hd.Q, hd.R, hd.Qbar_seq[:T + 1], hd.ref_seq[:T + 1])
        dH = condense(model, h1, AgentState(x0)).H - condense(model, h0, AgentState(x0)).H
        S = np.linalg.matrix_power(model.A, T) @ model.B
        np.testing.assert_allclose(dH, S.T @ hd.Qbar_seq[T] @ S, rtol=1e-9, atol=1e-10)


def test_hessian_dominates_R(rng):
    model, hd, x0 = random_instance(rng, 4, 2, 5)
    H = condense(model, hd, AgentState(x0)).H
    np.testing.assert_array_equal(H, H.T)
    assert np.linalg.eigvalsh(H).min() >= np.linalg.eigvalsh(hd.R).min() - 1e-12


@pytest.mark.parametrize("hi,expected", [(10.0, 1.0), (0.5, 0.5)])
def test_box_scalar(hi, expected):
    u, act = solve_box_qp(CondensedQp(np.array([[2.0]]), np.array([-2.0]), -10.0, hi))
    assert u.item() == pytest.approx(expected)
    assert act.item() == (0 if hi == 10.0 else 1)


def test_box_zero_gradient():
    u, _ = solve_box_qp(CondensedQp(np.eye(2), np.zeros(2), -1.0, 1.0))
    np.testing.assert_array_equal(u, 0.0)


def test_box_rejects_inverted_bounds():
    with pytest.raises(ContractError):
        CondensedQp(np.eye(1), np.zeros(1), 1.0, -1.0)


def _brute(H, g, lo, hi, n=401):
    grid = np.stack(np.meshgrid(*[np.linspace(l, h, n) for l, h in zip(lo, hi)]), -1).reshape(-1, len(g))
    vals = 0.5 * np.einsum("ij,jk,ik->i", grid, H, grid) + grid @ g
    return vals.min()


@settings(max_examples=80, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 4))
def test_box_certificate_and_feasibility(seed, m):
    rng = np.random.default_rng(seed)
    M = rng.standard_normal((m, m))
    H = M @ M.T + 0.1 * np.eye(m)
    g = 5 * rng.standard_normal(m)
    lo = -rng.uniform(0, 2, m)
    hi = rng.uniform(0, 2, m)
    qp = CondensedQp(H, g, lo, hi)
    u, act = solve_box_qp(qp)
    assert np.all(u >= lo) and np.all(u <= hi)
    assert projected_gradient_residual(qp, u) <= CERT_TOL
    assert np.all(u[act == -1] == lo[act == -1]) and np.all(u[act == 1] == hi[act == 1])


def test_box_matches_grid_in_2d(rng):
    for _ in range(10):
        M = rng.standard_normal((2, 2))
        H = M @ M.T + 0.1 * np.eye(2)
        g = 3 * rng.standard_normal(2)
        qp = CondensedQp(H, g, -1.0, 1.0)
        u, _ = solve_box_qp(qp)
        assert qp.objective(u) <= _brute(H, g, [-1, -1], [1, 1]) + 1e-12


def test_projected_newton_large_m(rng):
    m = 7
    M = rng.standard_normal((m, m))
    H = M @ M.T + 0.1 * np.eye(m)
    qp = CondensedQp(H, 10 * rng.standard_normal(m), -0.3, 0.3)
    u, act = solve_box_qp(qp)
    assert projected_gradient_residual(qp, u) <= 1e-9
    assert np.any(act != 0)


def test_surrogate_scalar_value():
    assert surrogate_cost(SCALAR, scalar_hd(1), AgentState([0.0]), [0.0]) == pytest.approx(2.0)


def test_surrogate_stationary_at_minimizer(rng):
    model, hd, x0 = random_instance(rng, 4, 2, 10, spectral_radius=0.95)
    x0 = AgentState(x0)
    qp = condense(model, hd, x0)
    u = np.linalg.solve(qp.H, -qp.g)
    np.testing.assert_allclose(qp.H @ u + qp.g, 0.0, atol=1e-9)
    h = 1e-5
    fd = [(surrogate_cost(model, hd, x0, u + h * e) - surrogate_cost(model, hd, x0, u - h * e)) / (2 * h)
          for e in np.eye(2)]
    np.testing.assert_allclose(fd, 0.0, atol=1e-6 * (1 + np.abs(qp.g).max()))


def test_surrogate_gradient_finite_difference(rng):
    model = make_quadrotor8()
    _, hd, _ = random_instance(rng, 8, 2, 15)
    x0 = AgentState(rng.standard_normal(8))
    qp = condense(model, hd, x0)
    for _ in range(20):
        u = rng.standard_normal(2)
        h = 1e-4
        fd = np.array([(surrogate_cost(model, hd, x0, u + h * e) - surrogate_cost(model, hd, x0, u - h * e)) / (2 * h)
                       for e in np.eye(2)])
        grad = qp.H @ u + qp.g
        np.testing.assert_allclose(fd, grad, rtol=1e-6, atol=1e-6)


def test_solve_condensed_clips():
    u = solve_condensed(SCALAR, scalar_hd(1), AgentState([0.0]), [-10.0], [0.5])
    assert u.item() == pytest.approx(0.5)
