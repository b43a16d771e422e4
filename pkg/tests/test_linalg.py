import numpy as np
import pytest

from scogce.game import GameDefinition, StrategyProfile
from scogce.linalg import (NotStableError, RiccatiError, care_residual, cross_bound_check, is_stable,
                           null_space_basis, psd_sqrt, solve_lyapunov, solve_scfne,
                           solve_soft_riccati, verify_care_stabilizing)


def test_null_space_basis():
    nb = null_space_basis(np.array([[1.0, 0.0]]))
    assert nb.basis.shape == (2, 1)
    assert np.allclose(np.abs(nb.basis[:, 0]), [0, 1])
    assert null_space_basis(np.eye(3)).basis.shape == (3, 0)


def test_null_space_example1_block(ex1):
    c1 = np.hstack([ex1.c[0], np.zeros((2, 2 + 1 + 1))])
    nb = null_space_basis(c1)
    assert nb.basis.shape == (7, 5)
    assert np.abs(c1 @ nb.basis).max() < 1e-12
    assert np.allclose(nb.basis.T @ nb.basis, np.eye(5))


def test_is_stable():
    assert is_stable(-np.eye(3)) == (True, -1.0)
    assert is_stable(np.eye(3)) == (False, 1.0)
    ok, ab = is_stable(np.array([[0.0, 1.0], [-1.0, 0.0]]))
    assert not ok and abs(ab) < 1e-12


def test_lyapunov(rng):
    assert solve_lyapunov(np.array([[-1.0]]), np.eye(1))[0, 0] == pytest.approx(0.5)
    assert solve_lyapunov(np.array([[-2.0]]), 4 * np.eye(1))[0, 0] == pytest.approx(1.0)
    a = rng.standard_normal((4, 4))
    a -= (np.max(np.linalg.eigvals(a).real) + 0.5) * np.eye(4)
    y = solve_lyapunov(a, np.eye(4))
    assert np.linalg.norm(a.T @ y + y @ a + np.eye(4)) < 1e-8
    with pytest.raises(NotStableError):
        solve_lyapunov(np.eye(2), np.eye(2))


def test_soft_riccati_scalar():
    sol = solve_soft_riccati(np.array([[-1.0]]), np.eye(1), 0.5 * np.eye(1))
    assert sol.p[0, 0] == pytest.approx(2 - np.sqrt(2), abs=1e-12)
    assert sol.abscissa == pytest.approx(-np.sqrt(0.5), abs=1e-12)
    assert sol.stabilizing


def test_soft_riccati_degenerations(rng):
    a = rng.standard_normal((3, 3)) - 4 * np.eye(3)
    q = np.eye(3)
    assert np.allclose(solve_soft_riccati(a, q, np.zeros((3, 3))).p, solve_lyapunov(a, q), atol=1e-10)
    assert np.allclose(solve_soft_riccati(a, np.zeros((3, 3)), 0.1 * np.eye(3)).p, 0, atol=1e-12)


def test_soft_riccati_no_solution():
    # a'P + Pa + 1 + 4P^2 = 0 with a = -1 has no real root
    with pytest.raises(RiccatiError):
        solve_soft_riccati(np.array([[-1.0]]), np.eye(1), 4 * np.eye(1))


def test_psd_sqrt():
    assert np.allclose(psd_sqrt(np.eye(3)), np.eye(3))
    q = np.array([[2.0, -1], [-1, 1]])
    s = psd_sqrt(q)
    assert np.allclose(s @ s, q)


def test_care_residual_zero(ex3):
    res = care_residual(ex3, [np.zeros((3, 3))] * 3)
    for i, r in enumerate(res):
        assert np.allclose(r, ex3.q_state(i))


def test_scfne_example3(ex3):
    r = solve_scfne(ex3)
    assert r.converged
    assert np.allclose(r.costs, [0.0999, 2.3385, 1.9535], atol=5e-4)
    assert max(np.linalg.norm(x) for x in care_residual(ex3, r.p)) < 1e-6
    rep = verify_care_stabilizing(ex3, r.p)
    assert len(rep.flags) == 4 and rep.all_stable
    assert max(rep.structural_residuals) == 0.0


def test_care_flags_unstable_zero(ex1):
    rep = verify_care_stabilizing(ex1, [np.zeros((3, 3))] * 3)
    assert not any(rep.flags)


def test_care_structure_example1(ex1):
    # the unrestricted Nash solution violates player 1's output structure
    full = GameDefinition(ex1.a, ex1.b, (np.eye(3),) * 3, ex1.e,
                          tuple(c.T @ q @ c for c, q in zip(ex1.c, ex1.q_weight)),
                          ex1.r_weight, ex1.d_weight, ex1.x0)
    r = solve_scfne(full)
    rep = verify_care_stabilizing(ex1, r.p)
    assert abs(r.p[0][0, 2]) > 1e-6
    assert rep.structural_residuals[0] == pytest.approx(abs(r.p[0][0, 2]), rel=1e-9)


def test_scfne_single_player(scalar):
    r = solve_scfne(scalar)
    s = np.eye(1)
    sol = solve_soft_riccati(scalar.a, np.eye(1), 0.5 * np.eye(1) - s)
    assert r.p[0][0, 0] == pytest.approx(sol.p[0, 0], abs=1e-10)


def test_scfne_symmetric_scalar():
    one = np.eye(1)
    g = GameDefinition(np.array([[0.5]]), (one, one), (one, one), one, (one, one), (one, one),
                       (4 * one, 4 * one), np.array([1.0]))
    r = solve_scfne(g, tol=1e-13)
    assert r.p[0][0, 0] == pytest.approx(r.p[1][0, 0], abs=1e-9)
    # by hand: 2ap - 3p^2 + 1 + p^2/4 = 0
    p = r.p[0][0, 0]
    assert 2 * 0.5 * p - 3 * p ** 2 + 1 + p ** 2 / 4 == pytest.approx(0, abs=1e-9)


def test_cross_bound(rng):
    x = rng.standard_normal((3, 2))
    l = np.eye(3)
    d = x.T @ l @ x + x.T @ l @ x - 2 * x.T @ l @ x
    assert np.allclose(d, 0)
    assert cross_bound_check(x, x, l, 1.0)
    for _ in range(50):
        x, y = rng.standard_normal((3, 2)), rng.standard_normal((3, 2))
        assert cross_bound_check(x, y, l, 2.0)
        gm = np.linalg.norm(y) / np.linalg.norm(x)
        assert cross_bound_check(x, y, l, gm)
    with pytest.raises(ValueError):
        cross_bound_check(x, y, l, 0.0)
