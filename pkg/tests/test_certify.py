import numpy as np
import pytest

from scogce.certify import (CertificateBundle, check_bundle, exact_worst_case_costs,
                            sample_disturbance_suprematy, verify_scogce, worst_case_costs_or_inf,
                            worst_case_disturbance)
from scogce.game import CostProfile, GameDefinition, StrategyProfile
from scogce.linalg import NotStableError, solve_lyapunov, solve_scfne, spectral_abscissa


@pytest.fixture(scope="module")
def scfne3(ex3):
    r = solve_scfne(ex3)
    return r, StrategyProfile(tuple(r.gains), "state_feedback")


def test_scalar_exact_cost(scalar):
    rep = exact_worst_case_costs(scalar, StrategyProfile.zeros(scalar))
    assert rep.costs[0] == pytest.approx(2 - np.sqrt(2), abs=1e-12)
    assert rep.players[0].loop[0, 0] == pytest.approx(-np.sqrt(0.5), abs=1e-12)


def test_no_disturbance_is_lyapunov(ex3, scfne3):
    _, prof = scfne3
    g0 = GameDefinition(ex3.a, ex3.b, ex3.c, np.zeros_like(ex3.e), ex3.q_weight, ex3.r_weight,
                        ex3.d_weight, ex3.x0)
    rep = exact_worst_case_costs(g0, prof)
    a_cl = ex3.a + sum(b @ f for b, f in zip(ex3.b, prof.gains))
    for i in range(3):
        qe = ex3.q_state(i) + prof.gains[i].T @ ex3.r_weight[i] @ prof.gains[i]
        y = solve_lyapunov(a_cl, qe)
        assert rep.costs[i] == pytest.approx(ex3.x0 @ y @ ex3.x0, rel=1e-10)


def test_exact_costs_equal_scfne(ex3, scfne3):
    r, prof = scfne3
    assert np.allclose(exact_worst_case_costs(ex3, prof).costs, r.costs, atol=1e-8)


def test_unstable_profile(ex1):
    with pytest.raises(NotStableError):
        exact_worst_case_costs(ex1, StrategyProfile.zeros(ex1))
    assert np.all(np.isinf(worst_case_costs_or_inf(ex1, StrategyProfile.zeros(ex1))))


def test_verify_embedding(ex3, scfne3):
    r, prof = scfne3
    res = verify_scogce(ex3, prof, CostProfile(tuple(r.costs + 0.05)))
    assert res.success, res.failures
    for pc, c in zip(res.bundle.players, r.costs):
        assert c < pc.bound < c + 0.05
        assert pc.margins["loop_abscissa"] < 0


def test_verify_below_cost_fails(ex3, scfne3):
    r, prof = scfne3
    res = verify_scogce(ex3, prof, CostProfile(tuple(r.costs - 0.01)))
    assert not res.success
    assert all("delta" in f for f in res.failures)


def test_zero_gains_unstable_fails(ex1):
    res = verify_scogce(ex1, StrategyProfile.zeros(ex1), CostProfile((100.0,) * 3))
    assert not res.success
    assert len(res.failures) == 3
    assert all("riccati" in f for f in res.failures)


def test_bundle_reuse(ex3, scfne3):
    r, prof = scfne3
    deltas = CostProfile(tuple(r.costs + 0.05))
    res = verify_scogce(ex3, prof, deltas)
    bundle = CertificateBundle.from_dict(res.bundle.to_dict())
    assert check_bundle(ex3, prof, bundle, deltas)
    assert check_bundle(ex3, prof, bundle, CostProfile(tuple(r.costs + 1.0)))
    assert not check_bundle(ex3, prof, bundle, CostProfile(tuple(r.costs)))


def test_x0_free_mode(ex3, scfne3):
    r, prof = scfne3
    rep = exact_worst_case_costs(ex3, prof)
    alpha = float(ex3.x0 @ ex3.x0)
    ball = rep.ball_costs(alpha)
    assert np.all(ball >= rep.costs - 1e-12)
    res = verify_scogce(ex3, prof, CostProfile(tuple(ball + 0.1)), x0_free_alpha=alpha)
    assert res.success, res.failures


def test_worst_case_disturbance(ex3, scfne3):
    _, prof = scfne3
    rep = exact_worst_case_costs(ex3, prof)
    pl = rep.players[1]
    d0 = np.linalg.solve(ex3.d_weight[1], ex3.e.T @ pl.p @ ex3.x0)
    assert np.allclose(worst_case_disturbance(rep, 1, 0.0), d0, atol=1e-15)
    t_big = 20 / abs(spectral_abscissa(pl.loop))
    assert np.linalg.norm(worst_case_disturbance(rep, 1, t_big)) < 1e-6 * np.linalg.norm(d0)
    g0 = GameDefinition(ex3.a, ex3.b, ex3.c, ex3.e, ex3.q_weight, ex3.r_weight, ex3.d_weight,
                        np.zeros(3))
    rep0 = exact_worst_case_costs(g0, prof)
    assert np.all(worst_case_disturbance(rep0, 0, np.linspace(0, 3, 5)) == 0)


def test_sampling_never_beats_worst_case(ex3, scfne3):
    _, prof = scfne3
    for dist in ("centered", "white"):
        s = sample_disturbance_suprematy(ex3, prof, n_samples=100, distribution=dist)
        assert s.ok, (dist, s.max_violation)
    s = sample_disturbance_suprematy(ex3, prof, n_samples=100)
    # centered samples come close to the bound
    assert s.max_violation > -0.05
