import numpy as np
import pytest

from scogce.equilibrium import initialize_stabilizing
from scogce.game import GameDefinition, StrategyProfile, disturbance_gram
from scogce.linalg import solve_lyapunov, solve_soft_riccati
from scogce.synth_sf import build_sf_blocks, sf_recover_gain, sf_response, sf_response_feasibility


def _scalar(a=1.0, e=0.1, d=1.0):
    one = np.eye(1)
    return GameDefinition(np.array([[a]]), (one,), (one,), e * one, (one,), (one,), (d * one,),
                          np.array([1.0]))


def test_requires_state_feedback(ex1):
    with pytest.raises(ValueError):
        build_sf_blocks(ex1, 0, StrategyProfile.zeros(ex1))


def test_example3_lone_player_has_no_guaranteed_cost(ex3):
    # against zero gains no single player can bound its worst case; the
    # single-player soft Riccati equation has no PSD stabilizing solution
    zero = StrategyProfile.zeros(ex3)
    for i in range(3):
        assert not sf_response_feasibility(ex3, i, zero, 20.0).success
        s = ex3.b[i] @ np.linalg.solve(ex3.r_weight[i], ex3.b[i].T)
        p = solve_soft_riccati(ex3.a, ex3.q_state(i), disturbance_gram(ex3, i) - s,
                               require_stable=False).p
        assert np.linalg.eigvalsh(p).min() < 0


def test_example3_delta2_feasible_from_stabilizing_start(ex3):
    start = initialize_stabilizing(ex3, mode="state_feedback")
    ok = [sf_response_feasibility(ex3, i, start, 2.0).success for i in range(3)]
    assert any(ok)


def test_tiny_delta_infeasible(ex3):
    zero = StrategyProfile.zeros(ex3)
    res = sf_response_feasibility(ex3, 0, zero, 1e-4)
    assert not res.success and res.stage == "stage1"


def test_scalar_recovery_stabilizes():
    g = _scalar(a=1.0, e=0.1)
    resp = sf_response(g, 0, StrategyProfile.zeros(g), 100.0)
    assert resp.success
    assert 1.0 + resp.gain[0, 0] < 0


def test_no_disturbance_gives_lyapunov_certificate(ex3):
    g = GameDefinition(ex3.a, ex3.b, ex3.c, np.zeros_like(ex3.e), ex3.q_weight, ex3.r_weight,
                       ex3.d_weight, ex3.x0)
    others = StrategyProfile((np.zeros((1, 3)), -5 * np.array([[0, 1.0, 0]]), -5 * np.array([[0, 0, 1.0]])))
    sets = sf_response_feasibility(g, 0, others, 50.0)
    assert sets.success
    rec = sf_recover_gain(g, 0, others, sets.p, sets.m, delta=50.0)
    assert rec.success
    f = rec.gain
    a_cl = g.a + sum(b @ k for b, k in zip(g.b, others.replace(0, f).gains))
    qe = g.q_weight[0] + f.T @ g.r_weight[0] @ f
    lhs = a_cl.T @ sets.p + sets.p @ a_cl + qe
    assert np.linalg.eigvalsh(lhs).max() < 0
    assert g.x0 @ solve_lyapunov(a_cl, qe) @ g.x0 < 50.0


def test_recovery_from_convex_path(ex3):
    others = StrategyProfile((np.zeros((1, 3)), -5 * np.array([[0, 1.0, 0]]), -5 * np.array([[0, 0, 1.0]])))
    sets = sf_response_feasibility(ex3, 0, others, 6.0)
    assert sets.success
    rec = sf_recover_gain(ex3, 0, others, sets.p, sets.m, delta=6.0)
    assert rec.success and rec.checks["exact_cost"] < 6.0
