"""Output-feedback guaranteed cost response.

For player i, with the other gains fixed (loop A_i), the response set is
searched in three steps:

1. P-stage: find (P, W) with P in the X-set, W in the Y-set and
   [[P, I], [I, W]] >= 0, then drive tr(PW) down to n (the boundary PW = I)
   by sequential trace linearization (NSLPMM).
2. M-stage: same for the stability pair (M, N) with P fixed.
3. Recovery: solve the LMI in F_i obtained by fixing (P, M).
"""
from __future__ import annotations

import csv
import logging
import time
from dataclasses import dataclass, field
from typing import Sequence

import cvxpy as cp
import numpy as np

from .certify import effective_weight, worst_case_costs_or_inf
from .game import (GameDefinition, StrategyProfile, disturbance_gram,
                   residual_loop_matrix)
from .linalg import NullBasis, null_space_basis, psd_sqrt, solve_lyapunov, spectral_abscissa, sym
from .lmi import LmiProblem, OracleResult, bmat, solve_feasibility, solve_trace_min

__all__ = [
    "SYNTH_GAMMA_GRID",
    "ProjectionBlocks",
    "NslpmmTrace",
    "NslpmmResult",
    "RecoveryResult",
    "ResponseResult",
    "build_projection_blocks",
    "relaxed_p_stage_set",
    "relaxed_m_stage_set",
    "nslpmm_p_stage",
    "nslpmm_m_stage",
    "line_search_step",
    "recover_gain",
    "of_response",
]

log = logging.getLogger(__name__)

SYNTH_GAMMA_GRID = tuple(10.0 ** k for k in range(-2, 3))


def _zeros(r, c):
    return np.zeros((r, c))


@dataclass
class ProjectionBlocks:
    """Block builders and annihilators of player i's response problem."""

    i: int
    a_i: np.ndarray
    b: np.ndarray
    c: np.ndarray
    e: np.ndarray
    sqrt_q: np.ndarray
    r_inv: np.ndarray
    d: np.ndarray
    g: np.ndarray
    qc: np.ndarray          # C'QC
    gamma: float
    n_c1: NullBasis
    n_b1: NullBasis
    n_c2: NullBasis
    n_b2: NullBasis

    @property
    def n(self) -> int:
        return self.a_i.shape[0]

    @property
    def dims(self):
        return self.n, self.c.shape[0], self.b.shape[1], self.e.shape[1]

    def omega1(self, x):
        n, s, m, q = self.dims
        a, sq, c, e = self.a_i, self.sqrt_q, self.c, self.e
        return bmat([[a.T @ x + x @ a, c.T @ sq, _zeros(n, m), x @ e],
                     [sq @ c, -np.eye(s), _zeros(s, m), _zeros(s, q)],
                     [_zeros(m, n), _zeros(m, s), -self.r_inv, _zeros(m, q)],
                     [e.T @ x, _zeros(q, s), _zeros(q, m), -self.d]])

    def omega2(self, y):
        n, s, m, q = self.dims
        a, sq, c, e = self.a_i, self.sqrt_q, self.c, self.e
        return bmat([[y @ a.T + a @ y, y @ c.T @ sq, _zeros(n, m), e],
                     [sq @ c @ y, -np.eye(s), _zeros(s, m), _zeros(s, q)],
                     [_zeros(m, n), _zeros(m, s), -self.r_inv, _zeros(m, q)],
                     [e.T, _zeros(q, s), _zeros(q, m), -self.d]])

    def omega3(self, u, z):
        n, _, _, q = self.dims
        a, e, gm = self.a_i, self.e, self.gamma
        return bmat([[a.T @ u + u @ a, z @ e, u @ e],
                     [e.T @ z, -self.d / gm, _zeros(q, q)],
                     [e.T @ u, _zeros(q, q), -gm * self.d]])

    def omega4(self, v, z):
        n, _, _, q = self.dims
        a, e, gm = self.a_i, self.e, self.gamma
        return bmat([[v @ a.T + a @ v, v @ z @ e, e],
                     [e.T @ z @ v, -self.d / gm, _zeros(q, q)],
                     [e.T, _zeros(q, q), -gm * self.d]])

    def with_gamma(self, gamma: float) -> "ProjectionBlocks":
        out = ProjectionBlocks(**{k: getattr(self, k) for k in self.__dataclass_fields__})
        out.gamma = float(gamma)
        return out


def _others(game: GameDefinition, f_others) -> StrategyProfile:
    if isinstance(f_others, StrategyProfile):
        return f_others
    gains = [np.zeros((game.input_dim(k), game.output_dim(k))) if f is None else f
             for k, f in enumerate(f_others)]
    return StrategyProfile(tuple(gains))


def build_projection_blocks(game: GameDefinition, i: int, f_others, gamma_i: float = 1.0) -> ProjectionBlocks:
    """Assemble A_i, sqrt(Q_i), the four Omega builders and the annihilators.

    `f_others` is a StrategyProfile (player i's own gain is ignored) or a
    list of gains with ``None`` allowed at position i.
    """
    prof = _others(game, f_others)
    a_i = residual_loop_matrix(game, prof, i)
    b, c, e = game.b[i], game.c[i], game.e
    n, s, m, q = game.state_dim, c.shape[0], b.shape[1], e.shape[1]
    sq = psd_sqrt(game.q_weight[i])
    c1 = np.hstack([c, _zeros(s, s), _zeros(s, m), _zeros(s, q)])
    b1 = np.hstack([b.T, _zeros(m, s), np.eye(m), _zeros(m, q)])
    c2 = np.hstack([c, _zeros(s, q), _zeros(s, q)])
    b2 = np.hstack([b.T, _zeros(m, q), _zeros(m, q)])
    return ProjectionBlocks(
        i=i, a_i=a_i, b=b, c=c, e=e, sqrt_q=sq, r_inv=np.linalg.inv(game.r_weight[i]),
        d=game.d_weight[i], g=disturbance_gram(game, i), qc=game.q_state(i), gamma=float(gamma_i),
        n_c1=null_space_basis(c1), n_b1=null_space_basis(b1),
        n_c2=null_space_basis(c2), n_b2=null_space_basis(b2))


def _compress(nb: NullBasis, expr):
    k = nb.basis
    return k.T @ expr @ k


def relaxed_p_stage_set(blocks: ProjectionBlocks, delta_i: float, x0, eps: float = 1e-6,
                        x0_free_alpha: float | None = None) -> LmiProblem:
    """SDP relaxation of the P-stage over (P, W).

    P >= eps I, W >= eps I, N_C1' Omega1(P) N_C1 <= -eps I,
    N_B1' Omega2(W) N_B1 <= -eps I, [[delta, x0'], [x0, W]] >= eps I and
    [[P, I], [I, W]] >= 0.  In x0-free mode the delta block is replaced
    by P <= (delta/alpha) I - eps I.
    """
    n = blocks.n
    pb = LmiProblem(label=f"P-stage player {blocks.i}")
    P = pb.variable("P", n)
    W = pb.variable("W", n)
    pb.add_pos(P, eps, "P>0")
    pb.add_pos(W, eps, "W>0")
    pb.add_neg(_compress(blocks.n_c1, blocks.omega1(P)), eps, "X-set")
    pb.add_neg(_compress(blocks.n_b1, blocks.omega2(W)), eps, "Y-set")
    if x0_free_alpha is None:
        x0 = np.asarray(x0, dtype=float).reshape(-1, 1)
        pb.add_pos(bmat([[np.array([[delta_i]]), x0.T], [x0, W]]), eps, "delta")
    else:
        pb.add_neg(P - (delta_i / x0_free_alpha) * np.eye(n), eps, "delta")
    pb.add_pos(bmat([[P, np.eye(n)], [np.eye(n), W]]), 0.0, "coupling")
    return pb


def relaxed_m_stage_set(blocks: ProjectionBlocks, p_fixed: np.ndarray, eps: float = 1e-6) -> LmiProblem:
    """SDP relaxation of the M-stage over (M, N) for the fixed P."""
    n = blocks.n
    pb = LmiProblem(label=f"M-stage player {blocks.i} gamma {blocks.gamma:g}")
    M = pb.variable("M", n)
    N = pb.variable("N", n)
    pb.add_pos(M, eps, "M>0")
    pb.add_pos(N, eps, "N>0")
    pb.add_neg(_compress(blocks.n_c2, blocks.omega3(M, p_fixed)), eps, "U-set")
    pb.add_neg(_compress(blocks.n_b2, blocks.omega4(N, p_fixed)), eps, "V-set")
    pb.add_pos(bmat([[M, np.eye(n)], [np.eye(n), N]]), 0.0, "coupling")
    return pb


# ---------------------------------------------------------------------------
# NSLPMM

@dataclass
class NslpmmTrace:
    stage: str                                   # "P-stage" | "M-stage"
    traces: list = field(default_factory=list)   # tr(X^k Y^k)
    steps: list = field(default_factory=list)    # step length that produced iterate k (None for k = 0)
    terminal_status: str = ""
    n: int = 0

    def rows(self):
        return [(k, t, s) for k, (t, s) in enumerate(zip(self.traces, self.steps))]

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["iteration", "trace", "step", "stage"])
            for k, t, s in self.rows():
                w.writerow([k, repr(t), "" if s is None else repr(s), self.stage])

    @classmethod
    def from_csv(cls, path) -> "NslpmmTrace":
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
        stage = rows[0]["stage"] if rows else ""
        return cls(stage=stage, traces=[float(r["trace"]) for r in rows],
                   steps=[float(r["step"]) if r["step"] else None for r in rows])

    def is_monotone(self, tol: float = 1e-9) -> bool:
        t = np.asarray(self.traces)
        return bool(np.all(np.diff(t) <= tol * (1 + np.abs(t[:-1])))) if t.size > 1 else True


@dataclass
class NslpmmResult:
    status: str                      # boundary_hit | stalled | infeasible_init
    x: np.ndarray | None             # P (or M)
    y: np.ndarray | None             # W (or N)
    trace: NslpmmTrace
    coupling_error: float = float("nan")     # ||XY - I||_F
    coupling_bound: float = float("nan")     # sqrt(2 n tol cond(X))
    condition: float = float("nan")
    gamma: float | None = None
    message: str = ""

    @property
    def success(self) -> bool:
        return self.status == "boundary_hit"


def line_search_step(c1: float, c2: float) -> float:
    """Minimizer over [0, 1] of c0 + c1 a + c2 a^2."""
    if c2 <= 0:
        # concave or linear: an endpoint wins
        return 1.0 if c1 + c2 <= 0 else 0.0
    return float(min(max(-c1 / (2 * c2), 0.0), 1.0))


def _inverse_is_feasible(problem: LmiProblem, xname, yname, x):
    """True when (X, X^{-1}) satisfies every constraint of `problem`."""
    try:
        xinv = sym(np.linalg.inv(x))
    except np.linalg.LinAlgError:
        return False, None
    margins = problem.evaluate({xname: x, yname: xinv})
    scale = 1e-9 * (1 + np.linalg.norm(x) + np.linalg.norm(xinv))
    ok = all(v >= (-scale if k == "coupling" else 0.0) for k, v in margins.items())
    return ok, xinv


def _nslpmm(problem: LmiProblem, xname: str, yname: str, stage: str, tol_boundary: float,
            max_iter: int, shortcut: bool, start: OracleResult | None, backend) -> NslpmmResult:
    X, Y = problem.variables[xname], problem.variables[yname]
    n = X.shape[0]
    trace = NslpmmTrace(stage=stage, n=n)
    init = start if start is not None else solve_feasibility(problem, backend)
    if not init.feasible:
        trace.terminal_status = "infeasible_init"
        return NslpmmResult("infeasible_init", None, None, trace, message=init.message or init.status)
    xk, yk = init[xname], init[yname]
    xp = cp.Parameter((n, n), name=f"{xname}k")
    yp = cp.Parameter((n, n), name=f"{yname}k")
    problem.set_objective(cp.trace(X @ yp) + cp.trace(xp @ Y))
    status, msg = "stalled", f"max_iter {max_iter} reached"
    step = None
    try:
        for k in range(max_iter + 1):
            tr = float(np.trace(xk @ yk))
            trace.traces.append(tr)
            trace.steps.append(step)
            if tr - n <= tol_boundary:
                status, msg = "boundary_hit", f"tr - n = {tr - n:.2e}"
                break
            if shortcut:
                ok, xinv = _inverse_is_feasible(problem, xname, yname, xk)
                if ok:
                    yk = xinv
                    trace.traces.append(float(np.trace(xk @ yk)))
                    trace.steps.append(0.0)
                    status, msg = "boundary_hit", "inverse of the current iterate is feasible"
                    break
            if k == max_iter:
                break
            xp.value, yp.value = xk, yk
            res = solve_trace_min(problem, backend)
            if not res.feasible:
                msg = f"trace minimization {res.status}: {res.message}"
                break
            s, t = res[xname], res[yname]
            c1 = float(np.trace(s @ yk) + np.trace(xk @ t) - 2 * tr)
            c2 = float(np.trace((s - xk) @ (t - yk)))
            if abs(c1) <= 1e-6 * (1 + tr):
                msg = "stationary above the boundary"
                break
            step = line_search_step(c1, c2)
            xk, yk = sym(xk + step * (s - xk)), sym(yk + step * (t - yk))
    finally:
        problem.set_objective(None)
    trace.terminal_status = status
    out = NslpmmResult(status, xk, yk, trace, message=msg)
    if status == "boundary_hit":
        out.condition = float(np.linalg.cond(xk))
        out.coupling_error = float(np.linalg.norm(xk @ yk - np.eye(n)))
        out.coupling_bound = float(np.sqrt(2 * n * tol_boundary * out.condition))
    else:
        out.x = out.y = None
    return out


def nslpmm_p_stage(problem: LmiProblem, tol_boundary: float = 1e-4, max_iter: int = 200,
                   shortcut: bool = True, start: OracleResult | None = None,
                   backend: str | None = None) -> NslpmmResult:
    """Drive (P, W) in the relaxed P-stage set to the boundary tr(PW) = n.

    With `shortcut`, an iterate P whose inverse already satisfies the W
    constraints ends the search at the boundary point (P, P^{-1}).
    """
    return _nslpmm(problem, "P", "W", "P-stage", tol_boundary, max_iter, shortcut, start, backend)


def nslpmm_m_stage(blocks: ProjectionBlocks, p_fixed: np.ndarray, eps: float = 1e-6,
                   tol_boundary: float = 1e-4, max_iter: int = 200, gammas=None,
                   backend: str | None = None) -> NslpmmResult:
    """M-stage NSLPMM for the fixed P.

    When `gammas` is given, the first gamma whose relaxed set is nonempty
    is used; otherwise ``blocks.gamma``.
    """
    grid = [blocks.gamma] if gammas is None else list(gammas)
    chosen = None
    for gm in grid:
        pb = relaxed_m_stage_set(blocks.with_gamma(gm), p_fixed, eps)
        init = solve_feasibility(pb, backend)
        if init.feasible:
            chosen = (gm, pb, init)
            break
    if chosen is None:
        tr = NslpmmTrace("M-stage", terminal_status="infeasible_init", n=blocks.n)
        return NslpmmResult("infeasible_init", None, None, tr, message="no gamma gives a feasible start")
    gm, pb, init = chosen
    out = _nslpmm(pb, "M", "N", "M-stage", tol_boundary, max_iter, False, init, backend)
    out.gamma = gm
    return out


# ---------------------------------------------------------------------------
# gain recovery

@dataclass
class RecoveryResult:
    status: str                   # joint | schur_only | failed
    gain: np.ndarray | None
    m: np.ndarray | None = None   # stability certificate actually used
    checks: dict = field(default_factory=dict)
    message: str = ""

    @property
    def success(self) -> bool:
        return self.gain is not None


def _structured_gain(pb: LmiProblem, m: int, s: int, structure):
    if structure is None:
        return pb.variable("F", m, s, symmetric=False)
    f = 0
    for k, (rs, cs) in enumerate(structure):
        v = pb.variable(f"F{k}", rs.stop - rs.start, cs.stop - cs.start, symmetric=False)
        left = np.eye(m)[:, rs]
        right = np.eye(s)[cs, :]
        f = f + left @ v @ right
    return f


def recover_gain(game: GameDefinition, i: int, f_others, P: np.ndarray, M: np.ndarray,
                 eps: float = 1e-6, delta: float | None = None, structure=None,
                 x0_free_alpha: float | None = None, backend: str | None = None) -> RecoveryResult:
    """Solve for F_i with (P, M) fixed.

    First the joint system (Schur-form cost block and Lyapunov stability
    block) is tried.  If it is infeasible, the cost block alone is solved
    and the loop A_i + B_iF_iC_i + G_iP is checked for stability directly;
    a stable loop admits its own Lyapunov certificate.  The recovered gain
    must make A_i + B_iF_iC_i stable and, when `delta` is given, give an
    exact worst-case cost below delta.

    `structure` optionally lists (row slice, column slice) blocks of F_i
    that are free; every other entry is fixed to zero.
    """
    prof = _others(game, f_others)
    a_i = residual_loop_matrix(game, prof, i)
    b, c, e = game.b[i], game.c[i], game.e
    n, s, m, q = game.state_dim, c.shape[0], b.shape[1], e.shape[1]
    g = disturbance_gram(game, i)
    r_inv = np.linalg.inv(game.r_weight[i])

    def problem(with_m):
        pb = LmiProblem(label=f"recover player {i}")
        F = _structured_gain(pb, m, s, structure)
        acl = a_i + b @ F @ c
        pb.add_neg(bmat([[acl.T @ P + P @ acl + game.q_state(i), c.T @ F.T, P @ e],
                         [F @ c, -r_inv, _zeros(m, q)],
                         [e.T @ P, _zeros(q, m), -game.d_weight[i]]]), eps, "cost")
        if with_m:
            lp = acl + g @ P
            pb.add_neg(lp.T @ M + M @ lp, eps, "stability")
        return pb, F

    status = "joint"
    pb, F = problem(True)
    res = solve_feasibility(pb, backend)
    if not res.feasible:
        status = "schur_only"
        pb, F = problem(False)
        res = solve_feasibility(pb, backend)
        if not res.feasible:
            return RecoveryResult("failed", None, message=f"cost block {res.status}")
    for k, v in pb.variables.items():
        v.value = res.assignment[k]
    f = np.array(F.value, dtype=float)
    acl = a_i + b @ f @ c
    checks = {"loop_abscissa": spectral_abscissa(acl),
              "disturbed_loop_abscissa": spectral_abscissa(acl + g @ P)}
    m_used = M
    if checks["loop_abscissa"] >= 0 or checks["disturbed_loop_abscissa"] >= 0:
        return RecoveryResult("failed", None, checks=checks, message="direct stability check failed")
    if status == "schur_only":
        m_used = solve_lyapunov(acl + g @ P, np.eye(n))
    if delta is not None:
        cost = worst_case_costs_or_inf(game, prof.replace(i, f), x0_free_alpha)[i]
        checks["exact_cost"] = float(cost)
        if not cost < delta:
            return RecoveryResult("failed", None, checks=checks,
                                  message=f"exact worst-case cost {cost:.6g} >= delta {delta:.6g}")
    return RecoveryResult(status, f, m_used, checks)


# ---------------------------------------------------------------------------

@dataclass
class ResponseResult:
    success: bool
    gain: np.ndarray | None
    p: np.ndarray | None = None
    m: np.ndarray | None = None
    gamma: float | None = None
    traces: list = field(default_factory=list)
    stages: list = field(default_factory=list)    # stage status strings
    attempts: int = 0
    wall_time: float = 0.0

    @property
    def info(self) -> str:
        return "|".join(self.stages)


def of_response(game: GameDefinition, i: int, profile: StrategyProfile, delta_i: float,
                eps: float = 1e-6, tol_boundary: float = 1e-4, max_iter: int = 200,
                gammas=SYNTH_GAMMA_GRID, x0_free_alpha: float | None = None,
                retries: int = 1, structure=None, backend: str | None = None) -> ResponseResult:
    """One output-feedback guaranteed cost response of player i.

    On recovery failure the P-stage is restarted once from a different
    feasible point (the minimizer of tr(P + W) over the relaxed set).
    """
    t0 = time.perf_counter()
    out = ResponseResult(False, None)
    blocks = build_projection_blocks(game, i, profile)
    for attempt in range(retries + 1):
        out.attempts = attempt + 1
        pset = relaxed_p_stage_set(blocks, delta_i, game.x0, eps, x0_free_alpha)
        start = None
        if attempt > 0:
            pset.set_objective(cp.trace(pset.variables["P"] + pset.variables["W"]))
            start = solve_trace_min(pset, backend)
            pset.set_objective(None)
            if not start.feasible:
                out.stages.append(f"restart:{start.status}")
                break
        pres = nslpmm_p_stage(pset, tol_boundary, max_iter, start=start, backend=backend)
        out.traces.append(pres.trace)
        out.stages.append(pres.status)
        if not pres.success:
            break
        mres = nslpmm_m_stage(blocks, pres.x, eps, tol_boundary, max_iter, gammas, backend)
        out.traces.append(mres.trace)
        out.stages.append(mres.status)
        if not mres.success:
            break
        rec = recover_gain(game, i, profile, pres.x, mres.x, eps, delta_i, structure,
                           x0_free_alpha, backend)
        out.stages.append(rec.status)
        if rec.success:
            out.success, out.gain, out.p, out.m, out.gamma = True, rec.gain, pres.x, rec.m, mres.gamma
            break
    out.wall_time = time.perf_counter() - t0
    return out
