import json

import cvxpy as cp
import numpy as np
import pytest

from scogce.lmi import LmiProblem, bmat, solve_feasibility, solve_trace_min


def test_contradictory_signs_infeasible():
    pb = LmiProblem()
    x = pb.variable("x", 1)
    pb.add_neg(x, 1e-6)
    pb.add_pos(x, 1e-6)
    res = solve_feasibility(pb)
    assert res.status == "infeasible"
    assert not res.feasible and not res.assignment


def test_lyapunov_feasible():
    a = -np.eye(2)
    pb = LmiProblem()
    P = pb.variable("P", 2)
    pb.add_pos(P, 1e-6, "P>0")
    pb.add_neg(a.T @ P + P @ a, 1e-6, "lyap")
    res = solve_feasibility(pb)
    assert res.feasible
    assert min(res.margins.values()) >= -1e-7
    assert np.allclose(res["P"], res["P"].T)
    # P = I works too
    assert min(pb.evaluate({"P": np.eye(2)}).values()) > 0


def test_trace_min():
    pb = LmiProblem()
    P = pb.variable("P", 2)
    pb.add_pos(P - np.eye(2), 0.0)
    pb.set_objective(cp.trace(P))
    res = solve_trace_min(pb)
    assert res.feasible
    assert res.objective_value == pytest.approx(2.0, abs=1e-6)
    assert np.allclose(res["P"], np.eye(2), atol=1e-5)


def test_trace_min_needs_objective():
    pb = LmiProblem()
    pb.variable("P", 1)
    with pytest.raises(ValueError):
        solve_trace_min(pb)


def test_empty_set_infeasible():
    pb = LmiProblem()
    P = pb.variable("P", 2)
    pb.add_pos(P - 2 * np.eye(2), 0.0)
    pb.add_neg(P - np.eye(2), 0.0)
    pb.set_objective(cp.trace(P))
    assert solve_trace_min(pb).status == "infeasible"


def test_rejects_non_affine_and_non_square():
    pb = LmiProblem()
    P = pb.variable("P", 2)
    with pytest.raises(ValueError):
        pb.add_neg(P @ P, 0.0)
    F = pb.variable("F", 2, 3)
    with pytest.raises(ValueError):
        pb.add_neg(F, 0.0)
    with pytest.raises(ValueError):
        pb.variable("P", 2)


def test_bmat_drops_empty_blocks():
    a = np.ones((2, 2))
    out = bmat([[a, np.zeros((2, 0))], [np.zeros((0, 2)), np.zeros((0, 0))]])
    assert out.shape == (2, 2)


def test_json_dump_reconstructs(tmp_path):
    pb = LmiProblem("dump")
    P = pb.variable("P", 2)
    F = pb.variable("F", 1, 2, symmetric=False)
    pb.add_neg(bmat([[P, F.T], [F, -np.eye(1)]]), 1e-6, "blk")
    pb.dump(tmp_path / "d.json")
    d = json.loads((tmp_path / "d.json").read_text())
    assert d["format"] == "lmi-dump-v1"
    # reconstruct at a point and compare
    pv, fv = np.array([[1.0, 0.3], [0.3, 2.0]]), np.array([[0.5, -1.0]])
    x = []
    for name, a, b in d["coordinates"]:
        x.append(pv[a, b] if name == "P" else fv[a, b])
    c = d["constraints"][0]
    m = np.array(c["F0"]) + sum(xk * np.array(fk) for xk, fk in zip(x, c["F"]))
    assert np.allclose(m, np.block([[pv, fv.T], [fv, -np.eye(1)]]))
