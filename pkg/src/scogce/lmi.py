"""Semidefinite feasibility / trace-minimization oracle.

Problems are modelled with cvxpy and solved by an interior-point conic
backend (Clarabel by default).  Every "feasible" answer is re-checked by
plain eigenvalue computations on the returned assignment, so callers only
rely on certified margins, never on solver status strings.
"""
from __future__ import annotations

import json
import logging
import time
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import cvxpy as cp
import numpy as np

__all__ = [
    "LmiConstraint",
    "LmiProblem",
    "OracleResult",
    "solve_feasibility",
    "solve_trace_min",
    "bmat",
    "DEFAULT_BACKEND",
    "POSTCHECK_TOL",
]

log = logging.getLogger(__name__)

DEFAULT_BACKEND = "CLARABEL"
POSTCHECK_TOL = 1e-7


def _is_expr(x) -> bool:
    return isinstance(x, cp.Expression)


def bmat(rows: list[list[Any]]):
    """Block matrix from numpy arrays and/or cvxpy expressions.

    Block rows or columns of zero size are dropped, so a game without a
    disturbance channel (q = 0) just loses the corresponding blocks.
    """
    keep_r = [k for k, row in enumerate(rows) if row[0].shape[0] > 0]
    keep_c = [k for k in range(len(rows[0])) if rows[0][k].shape[1] > 0]
    rows = [[rows[r][c] for c in keep_c] for r in keep_r]
    if any(_is_expr(b) for row in rows for b in row):
        return cp.bmat(rows)
    return np.block(rows)


def _sym_expr(x):
    return (x + x.T) / 2


@dataclass
class LmiConstraint:
    """``expr <= -eps I`` (sense "neg") or ``expr >= eps I`` (sense "pos")."""

    expr: Any
    sense: str
    eps: float
    label: str

    @property
    def size(self) -> int:
        return self.expr.shape[0]


@dataclass
class OracleResult:
    status: str                                   # feasible | infeasible | inconclusive
    assignment: dict = field(default_factory=dict)
    objective_value: float | None = None
    margins: dict = field(default_factory=dict)   # label -> certified margin
    solver_stats: dict = field(default_factory=dict)
    message: str = ""

    @property
    def feasible(self) -> bool:
        return self.status == "feasible"

    def __getitem__(self, name):
        return self.assignment[name]


class LmiProblem:
    """Affine symmetric-matrix constraints with an optional linear objective.

    Examples
    --------
    >>> pb = LmiProblem()
    >>> P = pb.variable("P", 2)
    >>> pb.add_neg(-P - P, eps=1e-6, label="lyap")   # A'P + PA with A = -I
    >>> pb.add_pos(P, eps=1e-6, label="P>0")
    >>> solve_feasibility(pb).status
    'feasible'
    """

    def __init__(self, label: str = ""):
        self.label = label
        self.variables: dict[str, cp.Variable] = {}
        self.constraints: list[LmiConstraint] = []
        self.scalar_constraints: list = []        # plain cvxpy constraints (e.g. norm bounds)
        self.objective = None
        self._cache: dict = {}

    # construction ---------------------------------------------------------
    def variable(self, name: str, rows: int, cols: int | None = None, symmetric: bool | None = None):
        if name in self.variables:
            raise ValueError(f"duplicate variable {name!r}")
        cols = rows if cols is None else cols
        if symmetric is None:
            symmetric = rows == cols
        v = cp.Variable((rows, cols), symmetric=symmetric, name=name)
        self.variables[name] = v
        self._cache.clear()
        return v

    def _add(self, expr, sense, eps, label):
        if eps < 0:
            raise ValueError("eps must be nonnegative")
        if not _is_expr(expr):
            expr = cp.Constant(np.atleast_2d(expr))
        if expr.ndim != 2 or expr.shape[0] != expr.shape[1]:
            raise ValueError(f"constraint {label!r}: expression is not square, shape {expr.shape}")
        if not expr.is_affine():
            raise ValueError(f"constraint {label!r}: expression is not affine")
        if expr.shape[0] == 0:
            return
        self.constraints.append(LmiConstraint(expr, sense, float(eps), label or f"c{len(self.constraints)}"))
        self._cache.clear()

    def add_neg(self, expr, eps: float = 1e-6, label: str = ""):
        """Require ``expr <= -eps I``."""
        self._add(expr, "neg", eps, label)

    def add_pos(self, expr, eps: float = 1e-6, label: str = ""):
        """Require ``expr >= eps I``."""
        self._add(expr, "pos", eps, label)

    def add_convex(self, constraint, label: str = ""):
        """Extra cvxpy constraint; checked by the solver only."""
        self.scalar_constraints.append((constraint, label))
        self._cache.clear()

    def set_objective(self, expr):
        """Linear objective to minimize (scalar affine expression)."""
        self.objective = expr
        self._cache.clear()

    # evaluation -------------------------------------------------------------
    def evaluate(self, values: dict) -> dict[str, float]:
        """Certified margins of every constraint at `values`.

        A margin is ``-eps - lambda_max(expr)`` for "neg" constraints and
        ``lambda_min(expr) - eps`` for "pos"; nonnegative means satisfied.
        Expressions are evaluated through numpy only.
        """
        saved = {k: v.value for k, v in self.variables.items()}
        try:
            for k, v in self.variables.items():
                if k in values:
                    v.value = np.asarray(values[k], dtype=float)
            out = {}
            for c in self.constraints:
                m = np.asarray(c.expr.value, dtype=float)
                m = (m + m.T) / 2
                w = np.linalg.eigvalsh(m)
                out[c.label] = float(-c.eps - w[-1]) if c.sense == "neg" else float(w[0] - c.eps)
            return out
        finally:
            for k, v in self.variables.items():
                v.value = saved[k]

    # lowering ---------------------------------------------------------------
    def _cp_constraints(self):
        out = []
        for c in self.constraints:
            e = _sym_expr(c.expr)
            eye = np.eye(c.size)
            out.append(e << -c.eps * eye if c.sense == "neg" else e >> c.eps * eye)
        out.extend(con for con, _ in self.scalar_constraints)
        return out

    def to_cvxpy(self) -> cp.Problem:
        if "problem" not in self._cache:
            obj = cp.Minimize(0 if self.objective is None else self.objective)
            self._cache["problem"] = cp.Problem(obj, self._cp_constraints())
        return self._cache["problem"]

    # debug dump ------------------------------------------------------------
    def to_json(self) -> dict:
        """Self-describing dense dump: each constraint as F0 + sum_k x_k F_k."""
        names = list(self.variables)
        coords = []
        for name in names:
            v = self.variables[name]
            r, c = v.shape
            for a in range(r):
                for b in range(a if v.attributes.get("symmetric") else 0, c):
                    coords.append((name, a, b))
        saved = {k: v.value for k, v in self.variables.items()}

        def set_point(active):
            for k, v in self.variables.items():
                val = np.zeros(v.shape)
                if active is not None and active[0] == k:
                    val[active[1], active[2]] = 1.0
                    if v.attributes.get("symmetric"):
                        val[active[2], active[1]] = 1.0
                v.value = val

        try:
            set_point(None)
            blocks = [np.asarray(c.expr.value, dtype=float) for c in self.constraints]
            obj0 = float(self.objective.value) if self.objective is not None else None
            coeffs = []
            obj = []
            for co in coords:
                set_point(co)
                coeffs.append([(np.asarray(c.expr.value, dtype=float) - b0).tolist()
                               for c, b0 in zip(self.constraints, blocks)])
                if self.objective is not None:
                    obj.append(float(self.objective.value) - obj0)
        finally:
            for k, v in self.variables.items():
                v.value = saved[k]
        return {
            "format": "lmi-dump-v1",
            "label": self.label,
            "variables": [{"name": k, "shape": list(v.shape),
                           "symmetric": bool(v.attributes.get("symmetric"))}
                          for k, v in self.variables.items()],
            "coordinates": [list(c) for c in coords],
            "constraints": [{"label": c.label, "sense": c.sense, "eps": c.eps,
                             "F0": b0.tolist(),
                             "F": [coeffs[k][j] for k in range(len(coords))]}
                            for j, (c, b0) in enumerate(zip(self.constraints, blocks))],
            "objective": None if self.objective is None else {"c0": obj0, "c": obj},
            "extra_constraints": [lab for _, lab in self.scalar_constraints],
        }

    def dump(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json()))


_FEAS = {cp.OPTIMAL, cp.OPTIMAL_INACCURATE}


def _solve(problem: LmiProblem, backend: str | None, settings: dict | None,
           with_objective: bool) -> OracleResult:
    backend = backend or DEFAULT_BACKEND
    prob = problem.to_cvxpy()
    t0 = time.perf_counter()
    try:
        with warnings.catch_warnings():
            # inaccurate solutions are caught by the post-check instead
            warnings.filterwarnings("ignore", message="Solution may be inaccurate")
            prob.solve(solver=backend, **(settings or {}))
    except (cp.error.SolverError, ValueError, ZeroDivisionError, np.linalg.LinAlgError) as exc:
        return OracleResult("inconclusive", message=f"{backend} failed: {exc}",
                            solver_stats={"backend": backend,
                                          "wall_time": time.perf_counter() - t0})
    stats = {"backend": backend, "wall_time": time.perf_counter() - t0,
             "solver_status": prob.status}
    st = prob.solver_stats
    if st is not None:
        stats["iterations"] = st.num_iters
        stats["solve_time"] = st.solve_time
    if prob.status in _FEAS:
        values = {k: np.array(v.value, dtype=float) for k, v in problem.variables.items()}
        for k, v in values.items():
            if problem.variables[k].attributes.get("symmetric"):
                values[k] = (v + v.T) / 2
        margins = problem.evaluate(values)
        worst = min(margins.values(), default=0.0)
        stats["min_margin"] = worst
        objv = float(prob.value) if with_objective and problem.objective is not None else None
        if worst >= -POSTCHECK_TOL:
            return OracleResult("feasible", values, objv, margins, stats)
        bad = min(margins, key=margins.get)
        return OracleResult("inconclusive", values, objv, margins, stats,
                            f"post-check failed on {bad!r} (margin {worst:.2e})")
    if prob.status == cp.INFEASIBLE:
        # the interior-point backend only reports this with a certificate
        stats["certificate"] = f"primal infeasibility certificate from {backend}"
        return OracleResult("infeasible", solver_stats=stats, message="infeasible")
    if prob.status in (cp.UNBOUNDED, cp.UNBOUNDED_INACCURATE):
        return OracleResult("inconclusive", solver_stats=stats, message="objective unbounded below")
    return OracleResult("inconclusive", solver_stats=stats, message=f"solver status {prob.status}")


def solve_feasibility(problem: LmiProblem, backend: str | None = None,
                      settings: dict | None = None) -> OracleResult:
    """Find any point satisfying every constraint (objective ignored)."""
    saved = problem.objective
    if saved is not None:
        problem.set_objective(None)
    try:
        return _solve(problem, backend, settings, False)
    finally:
        if saved is not None:
            problem.set_objective(saved)


def solve_trace_min(problem: LmiProblem, backend: str | None = None,
                    settings: dict | None = None) -> OracleResult:
    """Minimize the problem's linear objective subject to its constraints."""
    if problem.objective is None:
        raise ValueError("solve_trace_min needs an objective")
    return _solve(problem, backend, settings, True)
