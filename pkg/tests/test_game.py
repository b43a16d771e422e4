import json

import numpy as np
import pytest

from scogce import load_fixture
from scogce.game import (CostProfile, GameDefinition, StrategyProfile, closed_loop_matrix,
                         disturbance_gram, game_from_dict, game_to_dict, load_game_file,
                         residual_loop_matrix, save_game, validate_game)


def _scalar(a=1.0, b=1.0, c=1.0, r=1.0, e=1.0, d=1.0):
    one = np.eye(1)
    return GameDefinition(np.array([[a]]), (b * one,), (c * one,), e * one, (one,), (r * one,),
                          (d * one,), np.array([1.0]))


def test_example1_valid(ex1):
    assert validate_game(ex1) == []


def test_nonpositive_r_is_reported(ex1):
    bad = GameDefinition(ex1.a, ex1.b, ex1.c, ex1.e, ex1.q_weight,
                         (np.zeros((1, 1)),) + ex1.r_weight[1:], ex1.d_weight, ex1.x0)
    v = validate_game(bad)
    assert len(v) == 1 and "r_weight[1]" in v[0]


def test_zero_output_row(ex1):
    bad = GameDefinition(ex1.a, ex1.b, (np.zeros((1, 3)),) + ex1.c[1:], ex1.e,
                         (np.eye(1),) + ex1.q_weight[1:], ex1.r_weight, ex1.d_weight, ex1.x0)
    v = " ".join(validate_game(bad))
    assert "rank" in v and "detectab" in v


def test_closed_loop(ex1):
    assert np.array_equal(closed_loop_matrix(ex1, StrategyProfile.zeros(ex1)), ex1.a)
    f = (np.array([[-2.0, 0.0]]), np.array([[0.0, -2.0, 0.0]]), np.array([[0.0, -2.0]]))
    assert np.allclose(closed_loop_matrix(ex1, StrategyProfile(f)), -np.eye(3))
    g = _scalar()
    assert closed_loop_matrix(g, StrategyProfile((np.array([[-3.0]]),)))[0, 0] == -2.0


def test_residual_loop(ex1):
    prof = StrategyProfile.zeros(ex1)
    assert np.array_equal(residual_loop_matrix(ex1, prof, 0), ex1.a)
    g = _scalar()
    assert np.array_equal(residual_loop_matrix(g, StrategyProfile((np.array([[5.0]]),)), 0), g.a)


def test_disturbance_gram(ex1):
    assert np.allclose(disturbance_gram(ex1, 0), 0.01 * np.ones((3, 3)))
    assert disturbance_gram(_scalar(e=2.0, d=4.0), 0)[0, 0] == pytest.approx(1.0)
    assert np.all(disturbance_gram(_scalar(e=0.0), 0) == 0)


def test_arrays_are_read_only(ex3):
    with pytest.raises(ValueError):
        ex3.a[0, 0] = 5.0


def test_json_round_trip(tmp_path, ex3):
    path = tmp_path / "g.json"
    save_game(path, ex3, CostProfile((1.0, 2.0, 3.0)), {"note": "x"})
    g, d, opt = load_game_file(path)
    for name in ("a", "e", "x0"):
        assert np.array_equal(getattr(g, name), getattr(ex3, name))
    for name in ("b", "c", "q_weight", "r_weight", "d_weight"):
        assert all(np.array_equal(u, v) for u, v in zip(getattr(g, name), getattr(ex3, name)))
    assert d.deltas == (1.0, 2.0, 3.0) and opt == {"note": "x"}


def test_json_rejects_nonfinite(tmp_path, ex3):
    data = game_to_dict(ex3)
    text = json.dumps(data).replace("-2.0", "NaN", 1)
    path = tmp_path / "bad.json"
    path.write_text(text)
    with pytest.raises(ValueError):
        load_game_file(path)


def test_json_missing_key(ex3):
    data = game_to_dict(ex3)
    del data["E"]
    with pytest.raises(ValueError, match="E"):
        game_from_dict(data)


def test_fixtures_load():
    for name in ("example1", "example2", "example3", "example4", "scalar"):
        g, _, _ = load_fixture(name)
        assert validate_game(g) == []
    g4, d4, opt = load_fixture("example4")
    assert g4.n_players == 5 and g4.state_dim == 12
    assert d4.deltas == (1.3, 0.7, 1.3, 0.7, 1.3)
    assert len(opt["consensus_errors"]) == 5
