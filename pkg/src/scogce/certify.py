"""Guaranteed-cost verification and exact worst-case evaluation.

A profile F is verified for the cost profile delta when, for every player,
there are P, M > 0 and gamma > 0 with

    [[A°'P + P A° + Qeff, P E], [E'P, -D]]                       <= -eps I
    x0' P x0                                                    <= delta - eps_delta
    [[A°'M + M A°, P E, M E], [E'P, -D/gamma, 0], [E'M, 0, -gamma D]] <= -eps I

where Qeff = C'QC + C'F'RFC.  The exact worst-case cost is x0'P*x0 for the
stabilizing solution P* of A°'P + P A° + Qeff + P G P = 0.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

from .game import (CostProfile, GameDefinition, StrategyProfile, closed_loop_matrix,
                   disturbance_gram)
from .linalg import (NotStableError, RiccatiError, is_stable, solve_lyapunov,
                     solve_soft_riccati, spectral_abscissa, sym)
from .lmi import LmiProblem, bmat, solve_feasibility

__all__ = [
    "GAMMA_GRID",
    "eps_delta",
    "effective_weight",
    "PlayerCertificate",
    "CertificateBundle",
    "VerificationResult",
    "PlayerWorstCase",
    "WorstCaseReport",
    "SamplingResult",
    "verify_scogce",
    "check_bundle",
    "exact_worst_case_costs",
    "worst_case_costs_or_inf",
    "worst_case_disturbance",
    "sample_disturbance_suprematy",
]

log = logging.getLogger(__name__)

GAMMA_GRID = tuple(10.0 ** k for k in range(-3, 4))


def eps_delta(delta: float) -> float:
    return 1e-9 * max(1.0, delta)


def effective_weight(game: GameDefinition, profile: StrategyProfile, i: int) -> np.ndarray:
    """C_i'Q_iC_i + C_i'F_i'R_iF_iC_i."""
    c, f = game.c[i], profile.gains[i]
    return sym(c.T @ (game.q_weight[i] + f.T @ game.r_weight[i] @ f) @ c)


@dataclass
class PlayerCertificate:
    p: np.ndarray
    m: np.ndarray
    gamma: float
    margins: dict
    bound: float          # x0'P x0 (or alpha * lambda_max(P) in x0-free mode)
    delta: float

    @property
    def gap(self) -> float:
        return self.delta - self.bound

    def to_dict(self) -> dict:
        return {"P": self.p.tolist(), "M": self.m.tolist(), "gamma": self.gamma,
                "margins": self.margins, "bound": self.bound, "delta": self.delta,
                "gap": self.gap}

    @classmethod
    def from_dict(cls, d: dict) -> "PlayerCertificate":
        return cls(np.array(d["P"], dtype=float), np.array(d["M"], dtype=float), float(d["gamma"]),
                   dict(d["margins"]), float(d["bound"]), float(d["delta"]))


@dataclass
class CertificateBundle:
    players: list
    eps: float
    x0_free_alpha: float | None = None

    def to_dict(self) -> dict:
        return {"eps": self.eps, "x0_free_alpha": self.x0_free_alpha,
                "players": [p.to_dict() for p in self.players]}

    @classmethod
    def from_dict(cls, d: dict) -> "CertificateBundle":
        return cls([PlayerCertificate.from_dict(p) for p in d["players"]], float(d["eps"]),
                   d.get("x0_free_alpha"))


@dataclass
class VerificationResult:
    success: bool
    bundle: CertificateBundle | None
    failures: list = field(default_factory=list)      # (player, condition) messages
    abscissa: float = float("nan")
    loop_abscissae: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"success": self.success, "failures": self.failures,
                "abscissa": self.abscissa, "loop_abscissae": self.loop_abscissae,
                "bundle": None if self.bundle is None else self.bundle.to_dict()}


def _bound_of(game, p, alpha):
    if alpha is None:
        return float(game.x0 @ p @ game.x0)
    return float(alpha * np.linalg.eigvalsh(p)[-1])


def _player_problem(game, a_cl, qeff, i, delta, gamma, eps, alpha, with_m=True):
    n = game.state_dim
    e, d = game.e, game.d_weight[i]
    q = e.shape[1]
    pb = LmiProblem(label=f"verify player {i} gamma {gamma:g}")
    P = pb.variable("P", n)
    pb.add_pos(P, eps, "P>0")
    pb.add_neg(bmat([[a_cl.T @ P + P @ a_cl + qeff, P @ e],
                     [e.T @ P, -d]]), eps, "riccati")
    ed = eps_delta(delta)
    if alpha is None:
        x0 = game.x0
        pb.add_neg(cp_quad(x0, P) - delta, ed, "delta")
    else:
        pb.add_neg(P - (delta / alpha) * np.eye(n), ed, "delta")
    if with_m:
        M = pb.variable("M", n)
        pb.add_pos(M, eps, "M>0")
        z = np.zeros((q, q))
        pb.add_neg(bmat([[a_cl.T @ M + M @ a_cl, P @ e, M @ e],
                         [e.T @ P, -d / gamma, z],
                         [e.T @ M, z, -gamma * d]]), eps, "stability")
    return pb


def cp_quad(x0, P):
    """x0' P x0 as a 1x1 expression."""
    return x0[None, :] @ P @ x0[:, None]


def _direct_margins(game, a_cl, qeff, i, p, m, gamma):
    """Eigenvalue margins of the certificate conditions, computed without the solver."""
    e, d = game.e, game.d_weight[i]
    g = disturbance_gram(game, i)
    ric = a_cl.T @ p + p @ a_cl + qeff + p @ g @ p
    lp = a_cl + g @ p
    bil = lp.T @ m + m @ lp
    return {
        "riccati_bmi": float(-np.linalg.eigvalsh(sym(ric))[-1]),
        "bilinear_stability": float(-np.linalg.eigvalsh(sym(bil))[-1]),
        "loop_abscissa": spectral_abscissa(lp),
    }


def check_bundle(game: GameDefinition, profile: StrategyProfile, bundle: CertificateBundle,
                 cost_profile: CostProfile, eps: float | None = None) -> bool:
    """Re-check a stored certificate against a (possibly new) cost profile.

    Only eigenvalue evaluations are used; no solver is called.
    """
    eps = bundle.eps if eps is None else eps
    a_cl = closed_loop_matrix(game, profile)
    for i, pc in enumerate(bundle.players):
        delta = cost_profile[i]
        qeff = effective_weight(game, profile, i)
        if min(_certificate_margins(game, a_cl, qeff, i, pc.p, pc.m, pc.gamma, eps).values()) < -1e-7:
            return False
        if _bound_of(game, pc.p, bundle.x0_free_alpha) > delta - eps_delta(delta):
            return False
    return True


def _certificate_margins(game, a_cl, qeff, i, p, m, gamma, eps):
    """Margins of the P/M conditions (positive means satisfied with eps to spare)."""
    e, d = game.e, game.d_weight[i]
    q = e.shape[1]
    z = np.zeros((q, q))
    ric = np.block([[a_cl.T @ p + p @ a_cl + qeff, p @ e], [e.T @ p, -d]])
    stab = np.block([[a_cl.T @ m + m @ a_cl, p @ e, m @ e],
                     [e.T @ p, -d / gamma, z],
                     [e.T @ m, z, -gamma * d]])
    top = lambda x: float(np.linalg.eigvalsh(sym(x))[-1])
    low = lambda x: float(np.linalg.eigvalsh(sym(x))[0])
    return {"P>0": low(p) - eps, "M>0": low(m) - eps,
            "riccati": -eps - top(ric), "stability": -eps - top(stab)}


def verify_scogce(game: GameDefinition, profile: StrategyProfile, cost_profile: CostProfile,
                  eps: float = 1e-6, gammas=GAMMA_GRID, x0_free_alpha: float | None = None,
                  backend: str | None = None) -> VerificationResult:
    """Search a certificate (P_i, M_i, gamma_i) for every player.

    For each player the joint LMI system is solved for gamma in `gammas`
    (first feasible wins).  On success the loops A° and A° + G_i P_i are
    also checked directly.
    """
    if len(cost_profile) != game.n_players:
        raise ValueError("cost profile length does not match the number of players")
    a_cl = closed_loop_matrix(game, profile)
    ab = spectral_abscissa(a_cl)
    players, failures, loops = [], [], []
    for i in range(game.n_players):
        delta = cost_profile[i]
        qeff = effective_weight(game, profile, i)
        found = None
        for gamma in gammas:
            res = solve_feasibility(_player_problem(game, a_cl, qeff, i, delta, gamma, eps,
                                                    x0_free_alpha), backend)
            if res.feasible:
                found = (gamma, res)
                break
        if found is None:
            # name the first failing condition
            sub = solve_feasibility(_player_problem(game, a_cl, qeff, i, delta, 1.0, eps,
                                                    x0_free_alpha, with_m=False), backend)
            if not sub.feasible:
                base = LmiProblem()
                P = base.variable("P", game.state_dim)
                base.add_pos(P, eps, "P>0")
                base.add_neg(bmat([[a_cl.T @ P + P @ a_cl + qeff, P @ game.e],
                                   [game.e.T @ P, -game.d_weight[i]]]), eps, "riccati")
                which = "delta" if solve_feasibility(base, backend).feasible else "riccati"
                failures.append(f"player {i}: {which} condition {sub.status}")
            else:
                failures.append(f"player {i}: stability condition infeasible for every gamma")
            players.append(None)
            continue
        gamma, res = found
        p, m = res["P"], res["M"]
        margins = dict(res.margins)
        margins.update(_direct_margins(game, a_cl, qeff, i, p, m, gamma))
        bound = _bound_of(game, p, x0_free_alpha)
        loops.append(margins["loop_abscissa"])
        if bound > delta - eps_delta(delta):
            failures.append(f"player {i}: delta margin violated after post-check")
        elif margins["loop_abscissa"] >= 0 or ab >= 0:
            failures.append(f"player {i}: direct spectral check failed")
        players.append(PlayerCertificate(p, m, gamma, margins, bound, delta))
    ok = not failures
    bundle = CertificateBundle(players, eps, x0_free_alpha) if ok else None
    return VerificationResult(ok, bundle, failures, ab, loops)


# ---------------------------------------------------------------------------
# exact worst case

@dataclass
class PlayerWorstCase:
    exact_cost: float                     # inf when no stabilizing solution
    p: np.ndarray | None
    disturbance_gain: np.ndarray | None   # D_i^{-1} E' P_i
    loop: np.ndarray | None               # A° + G_i P_i
    residual_norm: float = float("nan")
    bound: float | None = None
    message: str = ""

    def to_dict(self) -> dict:
        return {"exact_cost": self.exact_cost if np.isfinite(self.exact_cost) else None,
                "bound": self.bound, "residual_norm": self.residual_norm,
                "P": None if self.p is None else self.p.tolist(), "message": self.message}


@dataclass
class WorstCaseReport:
    players: list
    x0: np.ndarray
    abscissa: float

    @property
    def costs(self) -> np.ndarray:
        return np.array([p.exact_cost for p in self.players])

    def ball_costs(self, alpha: float) -> np.ndarray:
        """alpha * lambda_max(P_i*), the worst case over x0'x0 <= alpha."""
        return np.array([alpha * np.linalg.eigvalsh(p.p)[-1] if p.p is not None else np.inf
                         for p in self.players])

    def to_dict(self) -> dict:
        return {"abscissa": self.abscissa, "costs": [None if not np.isfinite(c) else c for c in self.costs],
                "players": [p.to_dict() for p in self.players]}


def exact_worst_case_costs(game: GameDefinition, profile: StrategyProfile,
                           bundle: CertificateBundle | None = None) -> WorstCaseReport:
    """Exact worst-case cost of every player at `profile`.

    Raises
    ------
    NotStableError
        if A° is not stable.
    """
    a_cl = closed_loop_matrix(game, profile)
    ok, ab = is_stable(a_cl)
    if not ok:
        raise NotStableError(f"closed loop not stable (abscissa {ab:.3e})")
    out = []
    for i in range(game.n_players):
        qeff = effective_weight(game, profile, i)
        g = disturbance_gram(game, i)
        bound = None if bundle is None else bundle.players[i].bound
        try:
            sol = solve_soft_riccati(a_cl, qeff, g)
        except RiccatiError as exc:
            out.append(PlayerWorstCase(np.inf, None, None, None, bound=bound, message=str(exc)))
            continue
        if not sol.stabilizing:
            out.append(PlayerWorstCase(np.inf, None, None, None, sol.residual_norm, bound,
                                       "solution not stabilizing"))
            continue
        p = sol.p
        k = np.linalg.solve(game.d_weight[i], game.e.T @ p) if game.dist_dim else np.zeros((0, game.state_dim))
        out.append(PlayerWorstCase(float(game.x0 @ p @ game.x0), p, k, a_cl + g @ p,
                                   sol.residual_norm, bound))
    return WorstCaseReport(out, np.array(game.x0), ab)


def worst_case_costs_or_inf(game: GameDefinition, profile: StrategyProfile,
                            x0_free_alpha: float | None = None) -> np.ndarray:
    """Exact worst-case costs, all +inf when the loop is unstable."""
    try:
        rep = exact_worst_case_costs(game, profile)
    except NotStableError:
        return np.full(game.n_players, np.inf)
    return rep.costs if x0_free_alpha is None else rep.ball_costs(x0_free_alpha)


def worst_case_disturbance(report: WorstCaseReport, i: int, t) -> np.ndarray:
    """d_i(t) = D_i^{-1} E' P_i exp((A° + G_i P_i) t) x0.

    Scalar t gives a q-vector, an array of times a (len(t), q) array.
    """
    pl = report.players[i]
    if pl.p is None:
        raise ValueError(f"player {i} has no stabilizing worst-case solution")
    ts = np.atleast_1d(np.asarray(t, dtype=float))
    out = np.array([pl.disturbance_gain @ (sla.expm(pl.loop * s) @ report.x0) for s in ts])
    return out[0] if np.ndim(t) == 0 else out


@dataclass
class SamplingResult:
    ok: bool
    max_violation: float          # max over samples/players of (J(d) - J*) / max(|J*|, 1e-12)
    per_player: list
    n_samples: int
    horizon: float


def sample_disturbance_suprematy(game: GameDefinition, profile: StrategyProfile,
                                 report: WorstCaseReport | None = None, n_samples: int = 100,
                                 seed: int | None = 0, rtol: float = 1e-3,
                                 segments: int = 64, distribution: str = "centered") -> SamplingResult:
    """Monte-Carlo check that no sampled disturbance beats the exact worst case.

    For each player, `n_samples` piecewise-constant disturbances on [0, T]
    (T = 20/|abscissa(A°)|, `segments` pieces, zero after T) are drawn.
    ``distribution="white"``: standard normal amplitudes scaled by 1/||E||.
    ``distribution="centered"``: the player's worst-case disturbance at the
    segment midpoints plus white noise whose size relative to the worst
    case is uniform in [0, 2]; these samples come close to the bound, so
    the check has teeth.  Costs are integrated by RK4 on [0, T]; the
    disturbance-free tail is added in closed form through a Lyapunov solve.
    """
    from .simulate import default_step, rk4_piecewise_batch

    if report is None:
        report = exact_worst_case_costs(game, profile)
    a_cl = closed_loop_matrix(game, profile)
    ab = spectral_abscissa(a_cl)
    horizon = 20.0 / abs(ab)
    rng = np.random.default_rng(seed)
    q = game.dist_dim
    qeffs = [effective_weight(game, profile, i) for i in range(game.n_players)]
    mids = (np.arange(segments) + 0.5) * horizon / segments
    per, worst = [], -np.inf
    for i, qe in enumerate(qeffs):
        ref = report.players[i].exact_cost
        if not np.isfinite(ref):
            per.append(np.nan)
            continue
        noise = rng.standard_normal((segments, q, n_samples))
        if distribution == "white":
            amps = noise / max(np.linalg.norm(game.e, 2), 1e-300)
        elif distribution == "centered":
            base = worst_case_disturbance(report, i, mids).reshape(segments, q)
            scale = np.sqrt(np.mean(base ** 2)) if np.any(base) else 1.0
            amps = base[:, :, None] + noise * scale * rng.uniform(0.0, 2.0, n_samples)
        else:
            raise ValueError(f"unknown distribution {distribution!r}")
        x_end, costs = rk4_piecewise_batch(a_cl, game.e, [qe], [game.d_weight[i]], game.x0,
                                           amps, horizon, default_step(ab))
        tail = solve_lyapunov(a_cl, qe)
        tot = costs[0] + np.einsum("ib,ij,jb->b", x_end, tail, x_end)
        rel = float(np.max((tot - ref) / max(abs(ref), 1e-12)))
        per.append(rel)
        worst = max(worst, rel)
    return SamplingResult(bool(worst <= rtol), worst, per, n_samples, horizon)
