"""State-feedback guaranteed cost response.

With C_i = I both response sets are convex in the inverse variables, so a
player's response needs two LMI feasibility problems (Y = P^{-1}, then
V = M^{-1}) and one recovery LMI in F_i; no trace relaxation is involved.
"""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

from .certify import worst_case_costs_or_inf
from .game import GameDefinition, StrategyProfile, disturbance_gram, residual_loop_matrix
from .linalg import NullBasis, null_space_basis, psd_sqrt, solve_lyapunov, spectral_abscissa, sym
from .lmi import LmiProblem, bmat, solve_feasibility
from .synth_of import SYNTH_GAMMA_GRID, RecoveryResult, ResponseResult, _others, _zeros

__all__ = [
    "StateFeedbackBlocks",
    "SFResponseSets",
    "build_sf_blocks",
    "sf_stage1_problem",
    "sf_stage2_problem",
    "sf_response_feasibility",
    "sf_recover_gain",
    "sf_response",
]

log = logging.getLogger(__name__)


@dataclass
class StateFeedbackBlocks:
    i: int
    a_i: np.ndarray
    b: np.ndarray
    e: np.ndarray
    sqrt_q: np.ndarray
    r_inv: np.ndarray
    d: np.ndarray
    g: np.ndarray
    gamma: float
    n_b3: NullBasis
    n_b4: NullBasis

    @property
    def n(self) -> int:
        return self.a_i.shape[0]

    def phi1(self, y):
        n, m = self.n, self.b.shape[1]
        a, sq = self.a_i, self.sqrt_q
        return bmat([[y @ a.T + a @ y + self.g, y @ sq, _zeros(n, m)],
                     [sq @ y, -np.eye(n), _zeros(n, m)],
                     [_zeros(m, n), _zeros(m, n), -self.r_inv]])

    def phi2(self, v, z):
        a, e, gm = self.a_i, self.e, self.gamma
        return bmat([[v @ a.T + a @ v + self.g / gm, v @ z @ e],
                     [e.T @ z @ v, -self.d / gm]])


def _check_sf(game: GameDefinition, i: int):
    n = game.state_dim
    if game.c[i].shape != (n, n) or not np.allclose(game.c[i], np.eye(n)):
        raise ValueError(f"player {i} does not have state feedback (C_i != I)")


def build_sf_blocks(game: GameDefinition, i: int, f_others, gamma_i: float = 1.0) -> StateFeedbackBlocks:
    _check_sf(game, i)
    prof = _others(game, f_others)
    a_i = residual_loop_matrix(game, prof, i)
    b, e = game.b[i], game.e
    n, m, q = game.state_dim, b.shape[1], e.shape[1]
    b3 = np.hstack([b.T, _zeros(m, n), np.eye(m)])
    b4 = np.hstack([b.T, _zeros(m, q)])
    return StateFeedbackBlocks(i, a_i, b, e, psd_sqrt(game.q_weight[i]),
                               np.linalg.inv(game.r_weight[i]), game.d_weight[i],
                               disturbance_gram(game, i), float(gamma_i),
                               null_space_basis(b3), null_space_basis(b4))


def sf_stage1_problem(blocks: StateFeedbackBlocks, delta_i: float, x0, eps: float = 1e-6,
                      x0_free_alpha: float | None = None) -> LmiProblem:
    n = blocks.n
    pb = LmiProblem(label=f"SF stage 1 player {blocks.i}")
    Y = pb.variable("Y", n)
    pb.add_pos(Y, eps, "Y>0")
    if x0_free_alpha is None:
        x0 = np.asarray(x0, dtype=float).reshape(-1, 1)
        pb.add_pos(bmat([[np.array([[delta_i]]), x0.T], [x0, Y]]), eps, "delta")
    else:
        # P < (delta/alpha) I  <=>  Y > (alpha/delta) I
        pb.add_pos(Y - (x0_free_alpha / delta_i) * np.eye(n), eps, "delta")
    k = blocks.n_b3.basis
    pb.add_neg(k.T @ blocks.phi1(Y) @ k, eps, "Y-set")
    return pb


def sf_stage2_problem(blocks: StateFeedbackBlocks, p: np.ndarray, eps: float = 1e-6) -> LmiProblem:
    pb = LmiProblem(label=f"SF stage 2 player {blocks.i} gamma {blocks.gamma:g}")
    V = pb.variable("V", blocks.n)
    pb.add_pos(V, eps, "V>0")
    k = blocks.n_b4.basis
    pb.add_neg(k.T @ blocks.phi2(V, p) @ k, eps, "V-set")
    return pb


def _spd_inverse(x: np.ndarray, what: str) -> np.ndarray:
    cond = np.linalg.cond(x)
    if cond > 1e10:
        log.warning("%s badly conditioned (cond %.2e)", what, cond)
    c, low = sla.cho_factor(x)
    return sym(sla.cho_solve((c, low), np.eye(x.shape[0])))


@dataclass
class SFResponseSets:
    success: bool
    p: np.ndarray | None = None
    m: np.ndarray | None = None
    gamma: float | None = None
    stage: str = ""          # stage that failed, or "ok"
    message: str = ""


def sf_response_feasibility(game: GameDefinition, i: int, f_others, delta_i: float,
                            eps: float = 1e-6, gamma_i=None, x0_free_alpha: float | None = None,
                            backend: str | None = None) -> SFResponseSets:
    """Two sequential LMI problems: Y for P = Y^{-1}, then V for M = V^{-1}.

    `gamma_i` is a single value or a grid; the first feasible one is kept.
    """
    grid = SYNTH_GAMMA_GRID if gamma_i is None else np.atleast_1d(gamma_i).tolist()
    blocks = build_sf_blocks(game, i, f_others, grid[0])
    r1 = solve_feasibility(sf_stage1_problem(blocks, delta_i, game.x0, eps, x0_free_alpha), backend)
    if not r1.feasible:
        return SFResponseSets(False, stage="stage1", message=f"{r1.status}: {r1.message}")
    p = _spd_inverse(r1["Y"], "Y")
    for gm in grid:
        blocks.gamma = float(gm)
        r2 = solve_feasibility(sf_stage2_problem(blocks, p, eps), backend)
        if r2.feasible:
            return SFResponseSets(True, p, _spd_inverse(r2["V"], "V"), float(gm), "ok")
    return SFResponseSets(False, p, stage="stage2", message="no gamma gives a feasible V")


def sf_recover_gain(game: GameDefinition, i: int, f_others, P: np.ndarray, M: np.ndarray,
                    eps: float = 1e-6, delta: float | None = None,
                    x0_free_alpha: float | None = None, backend: str | None = None) -> RecoveryResult:
    """Joint LMI in F_i for fixed (P, M); fallback as in the output-feedback case."""
    _check_sf(game, i)
    prof = _others(game, f_others)
    a_i = residual_loop_matrix(game, prof, i)
    b, n = game.b[i], game.state_dim
    m = b.shape[1]
    g = disturbance_gram(game, i)
    r_inv = np.linalg.inv(game.r_weight[i])

    def problem(with_m):
        pb = LmiProblem(label=f"SF recover player {i}")
        F = pb.variable("F", m, n, symmetric=False)
        acl = a_i + b @ F
        pb.add_neg(bmat([[acl.T @ P + P @ acl + game.q_weight[i] + P @ g @ P, F.T],
                         [F, -r_inv]]), eps, "cost")
        if with_m:
            lp = acl + g @ P
            pb.add_neg(lp.T @ M + M @ lp, eps, "stability")
        return pb

    status = "joint"
    pb = problem(True)
    res = solve_feasibility(pb, backend)
    if not res.feasible:
        status = "schur_only"
        pb = problem(False)
        res = solve_feasibility(pb, backend)
        if not res.feasible:
            return RecoveryResult("failed", None, message=f"cost block {res.status}")
    f = res["F"]
    acl = a_i + b @ f
    checks = {"loop_abscissa": spectral_abscissa(acl),
              "disturbed_loop_abscissa": spectral_abscissa(acl + g @ P)}
    if checks["loop_abscissa"] >= 0 or checks["disturbed_loop_abscissa"] >= 0:
        return RecoveryResult("failed", None, checks=checks, message="direct stability check failed")
    m_used = M if status == "joint" else solve_lyapunov(acl + g @ P, np.eye(n))
    if delta is not None:
        cost = worst_case_costs_or_inf(game, prof.replace(i, f), x0_free_alpha)[i]
        checks["exact_cost"] = float(cost)
        if not cost < delta:
            return RecoveryResult("failed", None, checks=checks,
                                  message=f"exact worst-case cost {cost:.6g} >= delta {delta:.6g}")
    return RecoveryResult(status, f, m_used, checks)


def sf_response(game: GameDefinition, i: int, profile: StrategyProfile, delta_i: float,
                eps: float = 1e-6, gammas=SYNTH_GAMMA_GRID, x0_free_alpha: float | None = None,
                backend: str | None = None, **_ignored) -> ResponseResult:
    """One state-feedback guaranteed cost response of player i."""
    t0 = time.perf_counter()
    out = ResponseResult(False, None, attempts=1)
    sets = sf_response_feasibility(game, i, profile, delta_i, eps, gammas, x0_free_alpha, backend)
    out.stages.append(sets.stage if not sets.success else "sets_ok")
    if sets.success:
        rec = sf_recover_gain(game, i, profile, sets.p, sets.m, eps, delta_i, x0_free_alpha, backend)
        out.stages.append(rec.status)
        if rec.success:
            out.success, out.gain, out.p, out.m, out.gamma = True, rec.gain, sets.p, rec.m, sets.gamma
    out.wall_time = time.perf_counter() - t0
    return out
