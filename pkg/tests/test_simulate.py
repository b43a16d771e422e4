import numpy as np
import pytest
import scipy.linalg as sla

from scogce.certify import exact_worst_case_costs
from scogce.game import StrategyProfile, closed_loop_matrix
from scogce.linalg import solve_lyapunov, solve_scfne, spectral_abscissa
from scogce.simulate import (ExpressionDisturbance, FileDisturbance, ZeroDisturbance,
                             default_horizon, default_step, parse_disturbance,
                             read_trajectory_csv, simulate)


@pytest.fixture(scope="module")
def ex3_scfne(ex3):
    return StrategyProfile(tuple(solve_scfne(ex3).gains), "state_feedback")


def test_defaults():
    assert default_step(-1.0) == 0.01
    assert default_step(-100.0) == pytest.approx(0.001)
    assert default_horizon(-0.5) == pytest.approx(40.0)


def test_zero_disturbance_decays(ex3, ex3_scfne):
    a_cl = closed_loop_matrix(ex3, ex3_scfne)
    sim = simulate(ex3, ex3_scfne, ZeroDisturbance())
    assert sim.time_grid[-1] == pytest.approx(20 / abs(spectral_abscissa(a_cl)))
    assert np.linalg.norm(sim.state_trajectory[-1]) < 1e-3 * np.linalg.norm(ex3.x0)
    # against the matrix exponential
    t = sim.time_grid[len(sim.time_grid) // 7]
    k = len(sim.time_grid) // 7
    assert np.allclose(sim.state_trajectory[k], sla.expm(a_cl * t) @ ex3.x0, atol=1e-8)
    # disturbance-free cost equals the Lyapunov value and lies below the worst case
    rep = exact_worst_case_costs(ex3, ex3_scfne)
    for i in range(3):
        qe = ex3.q_state(i) + ex3_scfne.gains[i].T @ ex3.r_weight[i] @ ex3_scfne.gains[i]
        lyap = ex3.x0 @ solve_lyapunov(a_cl, qe) @ ex3.x0
        assert sim.final_costs[i] == pytest.approx(lyap, rel=1e-6)
        assert sim.final_costs[i] <= rep.costs[i]


def test_worst_case_quadrature(ex3, ex3_scfne):
    rep = exact_worst_case_costs(ex3, ex3_scfne)
    for i in range(3):
        sim = simulate(ex3, ex3_scfne, parse_disturbance(f"worst_case:{i + 1}", rep))
        assert sim.final_costs[i] == pytest.approx(rep.costs[i], rel=1e-3)


def test_halving_dt(ex3, ex3_scfne):
    rep = exact_worst_case_costs(ex3, ex3_scfne)
    src = parse_disturbance("worst_case:2", rep)
    a = simulate(ex3, ex3_scfne, src, dt=0.01).final_costs
    b = simulate(ex3, ex3_scfne, src, dt=0.005).final_costs
    assert np.all(np.abs(a - b) <= 1e-4 * np.abs(b))


def test_expression_and_file(tmp_path, ex3, ex3_scfne):
    expr = ExpressionDisturbance("10*sin(t)*exp(-t)")
    t = np.array([0.0, 1.0, 2.0])
    assert np.allclose(expr(t)[:, 0], 10 * np.sin(t) * np.exp(-t))
    ts = np.linspace(0, 10, 2001)
    np.savetxt(tmp_path / "d.csv", np.column_stack([ts, 10 * np.sin(ts) * np.exp(-ts)]), delimiter=",")
    a = simulate(ex3, ex3_scfne, expr, t_final=10, dt=0.01)
    b = simulate(ex3, ex3_scfne, parse_disturbance(f"file:{tmp_path / 'd.csv'}"), t_final=10, dt=0.01)
    assert np.allclose(a.state_trajectory, b.state_trajectory, atol=1e-4)
    for bad in ("__import__('os')", "t.real", "open(1)"):
        with pytest.raises(ValueError):
            ExpressionDisturbance(bad)
    with pytest.raises(ValueError):
        parse_disturbance("worst_case:1")
    assert isinstance(parse_disturbance("zero"), ZeroDisturbance)
    with pytest.raises(ValueError):
        parse_disturbance("worst_case:9", exact_worst_case_costs(ex3, ex3_scfne))
    np.savetxt(tmp_path / "bad.csv", np.array([[1.0, 0.0], [0.5, 1.0]]), delimiter=",")
    with pytest.raises(ValueError):
        FileDisturbance(tmp_path / "bad.csv")


def test_unstable_loop_blowup(ex1):
    with pytest.warns(RuntimeWarning):
        sim = simulate(ex1, StrategyProfile.zeros(ex1), t_final=2000.0, dt=0.5)
    assert sim.blowup_time is not None and sim.blowup_time < 2000.0


def test_csv_round_trip(tmp_path, ex4):
    g, _, opt = ex4
    prof = StrategyProfile(tuple(np.array(f) for f in opt["reference_gains"]))
    cons = [np.array(l) for l in opt["consensus_errors"]]
    sim = simulate(g, prof, ExpressionDisturbance(opt["disturbance"]), t_final=2.0, dt=0.01,
                   consensus=cons)
    sim.to_csv(tmp_path / "t.csv")
    back = read_trajectory_csv(tmp_path / "t.csv")
    assert np.array_equal(back["t"], sim.time_grid)
    assert np.array_equal(back["x"], sim.state_trajectory)
    assert np.array_equal(back["J"], sim.accumulated_costs)
    assert all(np.array_equal(u, v) for u, v in zip(back["errors"], sim.errors))
