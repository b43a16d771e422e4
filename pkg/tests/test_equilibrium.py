import csv

import numpy as np
import pytest

from scogce.certify import exact_worst_case_costs
from scogce.equilibrium import (InitializationError, RunOptions, cooperative_cost, delta_sweep,
                                initialize_stabilizing, parse_grid, price_of_stability,
                                run_sequential, sweep_monotonicity, team_game)
from scogce.game import CostProfile, GameDefinition, StrategyProfile, closed_loop_matrix
from scogce.linalg import solve_scfne, spectral_abscissa

SF = RunOptions(mode="state_feedback")


def test_init_stable_a_gives_zero(ex3):
    g = GameDefinition(-np.eye(3), ex3.b, ex3.c, ex3.e, ex3.q_weight, ex3.r_weight, ex3.d_weight,
                       ex3.x0)
    prof = initialize_stabilizing(g)
    assert all(np.all(f == 0) for f in prof.gains)


def test_init_example1(ex1):
    prof = initialize_stabilizing(ex1)
    assert spectral_abscissa(closed_loop_matrix(ex1, prof)) < 0


def test_init_unstabilizable(ex1):
    g = GameDefinition(ex1.a, tuple(np.zeros_like(b) for b in ex1.b), ex1.c, ex1.e, ex1.q_weight,
                       ex1.r_weight, ex1.d_weight, ex1.x0)
    with pytest.raises(InitializationError):
        initialize_stabilizing(g)


def test_short_circuit_round_one(ex3):
    r = solve_scfne(ex3)
    prof = StrategyProfile(tuple(r.gains), "state_feedback")
    run = run_sequential(ex3, CostProfile(tuple(r.costs + 10)), SF, initial_profile=prof)
    assert run.status == "scogce_found" and run.rounds == 1 and not run.history


def test_example2_below_region(ex2):
    g = ex2[0]
    run = run_sequential(g, CostProfile((0.2, 0.4, 0.2)))
    assert run.status == "stopped_all_players_failed"
    assert not run.found and run.certificates is None


def test_example3_delta6(ex3):
    run = run_sequential(ex3, CostProfile((6.0,) * 3), SF)
    assert run.found
    assert np.all(run.costs < 6.0)
    coop = cooperative_cost(ex3).value
    assert price_of_stability(ex3, run.profile, coop) <= 18 / coop


def test_random_order_is_seeded(ex3):
    opts = RunOptions(mode="state_feedback", random_order=True, seed=3)
    a = run_sequential(ex3, CostProfile((6.0,) * 3), opts)
    b = run_sequential(ex3, CostProfile((6.0,) * 3), opts)
    assert [h.player for h in a.history] == [h.player for h in b.history]
    assert a.found


def test_pos_scfne(ex3):
    r = solve_scfne(ex3)
    prof = StrategyProfile(tuple(r.gains), "state_feedback")
    assert price_of_stability(ex3, prof) == pytest.approx(1.3390, abs=0.01)


def test_pos_of_cooperative_profile(ex3):
    coop = cooperative_cost(ex3)
    prof = StrategyProfile(tuple(coop.gain[[i]] for i in range(3)), "state_feedback")
    # each player faces its own worst case, so the sum can only exceed J_co
    pos = price_of_stability(ex3, prof, coop)
    assert 1.0 <= pos < 1.05


def test_cooperative_full_information(ex3, ex2):
    assert cooperative_cost(ex3).value == pytest.approx(3.2801, abs=1e-3)
    assert cooperative_cost(ex2[0]).value == pytest.approx(0.875, abs=1e-2)


def test_cooperative_structured_upper_bounds(ex2):
    g = ex2[0]
    fi = cooperative_cost(g).value
    st = cooperative_cost(g, "structured_bisection")
    assert st.value >= fi - 1e-9
    # the structured gain is block diagonal and its team cost is the value
    f = st.gain
    assert f.shape == (3, 7)
    assert np.all(f[0, 2:] == 0) and np.all(f[1, :2] == 0) and np.all(f[1, 5:] == 0)
    tg = team_game(g)
    assert exact_worst_case_costs(tg, StrategyProfile((f,))).costs[0] == pytest.approx(st.value)


def test_parse_grid():
    names, grid = parse_grid("delta=1.1:6:0.05", 3)
    assert len(grid) == 99 and grid[0].deltas == (1.1,) * 3 and grid[-1].deltas == (6.0,) * 3
    names, grid = parse_grid("d1=0.1:0.3:0.1,d2=0.5", 3, "d3=d1")
    assert [g.deltas for g in grid] == [(0.1, 0.5, 0.1), (0.2, 0.5, 0.2), (0.3, 0.5, 0.3)]
    with pytest.raises(ValueError):
        parse_grid("d1=0.1:0.3:0.1", 3)
    with pytest.raises(ValueError):
        parse_grid("x=1", 3)
    with pytest.raises(ValueError):
        parse_grid("delta=1:2:0", 3)


def test_small_sweep(tmp_path, ex3):
    res = delta_sweep(ex3, ("delta=1.6:2.4:0.4", None), SF)
    status = [o.status for o in res.outcomes]
    assert status[0] != "scogce_found" and status[-1] == "scogce_found"
    ok, n = sweep_monotonicity(ex3, res)
    assert ok and n >= 1
    res.to_csv(tmp_path / "s.csv")
    rows = list(csv.DictReader(open(tmp_path / "s.csv")))
    assert len(rows) == 3 and rows[-1]["status"] == "scogce_found"
    assert float(rows[-1]["J1"]) < 2.4
