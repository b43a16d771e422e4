"""Dense linear-algebra kernel: null spaces, stability, Lyapunov and Riccati solvers."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

from .game import GameDefinition, disturbance_gram

__all__ = [
    "NullBasis",
    "RiccatiSolution",
    "RiccatiError",
    "NotStableError",
    "SCFNEResult",
    "CareReport",
    "sym",
    "null_space_basis",
    "spectral_abscissa",
    "is_stable",
    "psd_sqrt",
    "solve_lyapunov",
    "solve_soft_riccati",
    "care_residual",
    "verify_care_stabilizing",
    "solve_scfne",
    "cross_bound_check",
]


class RiccatiError(ArithmeticError):
    """No stabilizing Riccati solution (imaginary-axis Hamiltonian spectrum)."""


class NotStableError(ValueError):
    pass


def sym(x: np.ndarray) -> np.ndarray:
    return (x + x.T) / 2


@dataclass(frozen=True)
class NullBasis:
    """Orthonormal basis of ker(m), stored column-wise."""

    basis: np.ndarray
    source_rows: int
    source_cols: int

    @property
    def width(self) -> int:
        return self.basis.shape[1]


def null_space_basis(m: np.ndarray, rtol: float = 1e-9) -> NullBasis:
    """Orthonormal null-space basis of `m` via SVD.

    Singular values below ``rtol * s_max`` count as zero.
    """
    m = np.atleast_2d(np.asarray(m, dtype=float))
    rows, cols = m.shape
    if rows == 0 or not np.any(m):
        return NullBasis(np.eye(cols), rows, cols)
    _, s, vt = np.linalg.svd(m)
    rank = int(np.sum(s > rtol * s[0]))
    return NullBasis(np.ascontiguousarray(vt[rank:].T), rows, cols)


def spectral_abscissa(m: np.ndarray) -> float:
    m = np.atleast_2d(m)
    if m.size == 0:
        return -np.inf
    return float(np.max(np.linalg.eigvals(m).real))


def is_stable(m: np.ndarray, margin: float = 0.0) -> tuple[bool, float]:
    """Return (stable, abscissa); stable iff max Re(eig) < -margin."""
    m = np.atleast_2d(np.asarray(m, dtype=float))
    if m.shape[0] != m.shape[1]:
        raise ValueError("is_stable needs a square matrix")
    ab = spectral_abscissa(m)
    return bool(ab < -margin), ab


def psd_sqrt(q: np.ndarray, tol: float = 1e-9) -> np.ndarray:
    """Symmetric PSD square root; raises when q has eigenvalues below -tol."""
    q = sym(np.atleast_2d(np.asarray(q, dtype=float)))
    if q.size == 0:
        return q
    w, v = np.linalg.eigh(q)
    if w.min() < -tol * max(1.0, abs(w).max()):
        raise ValueError(f"matrix not positive semidefinite (min eig {w.min():.3e})")
    return sym((v * np.sqrt(np.clip(w, 0, None))) @ v.T)


def solve_lyapunov(a_cl: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    """Solve a' Y + Y a = -rhs for stable a."""
    a_cl = np.atleast_2d(np.asarray(a_cl, dtype=float))
    ok, ab = is_stable(a_cl)
    if not ok:
        raise NotStableError(f"matrix not stable (abscissa {ab:.3e})")
    return sym(sla.solve_continuous_lyapunov(a_cl.T, -np.atleast_2d(rhs)))


@dataclass(frozen=True)
class RiccatiSolution:
    p: np.ndarray
    residual_norm: float
    stabilizing: bool
    abscissa: float = float("nan")   # of a_cl + g p

    @property
    def converged(self) -> bool:
        return self.residual_norm <= 1e-8 * (1 + np.linalg.norm(self.p) ** 2)


def _riccati_residual(a, q, g, p):
    return a.T @ p + p @ a + q + p @ g @ p


def solve_soft_riccati(a_cl, q_eff, g, *, require_stable: bool = True,
                       newton_steps: int = 1) -> RiccatiSolution:
    """Stabilizing solution of ``a'P + P a + q + P g P = 0``.

    Uses the ordered real Schur form of the Hamiltonian
    ``[[a, g], [-q, -a']]``; `g` may be indefinite, which covers the
    completed-square form used in the Nash iteration.  One Newton
    correction is applied afterwards.

    Raises
    ------
    NotStableError
        if `require_stable` and `a_cl` is not stable.
    RiccatiError
        if the Hamiltonian has eigenvalues on the imaginary axis or the
        stable subspace is not a graph.
    """
    a = np.atleast_2d(np.asarray(a_cl, dtype=float))
    q = sym(np.atleast_2d(np.asarray(q_eff, dtype=float)))
    g = sym(np.atleast_2d(np.asarray(g, dtype=float)))
    n = a.shape[0]
    if require_stable:
        ok, ab = is_stable(a)
        if not ok:
            raise NotStableError(f"a_cl not stable (abscissa {ab:.3e})")
    h = np.block([[a, g], [-q, -a.T]])
    scale = max(1.0, np.linalg.norm(h, 1))
    eig = np.linalg.eigvals(h)
    if np.min(np.abs(eig.real)) <= 1e-10 * scale:
        raise RiccatiError("Hamiltonian has eigenvalues on the imaginary axis")
    t, z, sdim = sla.schur(h, output="real", sort="lhp")
    if sdim != n:
        raise RiccatiError(f"stable subspace has dimension {sdim}, expected {n}")
    u1, u2 = z[:n, :n], z[n:, :n]
    if np.linalg.cond(u1) > 1e12:
        raise RiccatiError("stable invariant subspace is not a graph")
    p = sym(np.linalg.solve(u1.T, u2.T).T)
    for _ in range(newton_steps):
        acl = a + g @ p
        if spectral_abscissa(acl) >= 0:
            break
        res = _riccati_residual(a, q, g, p)
        dp = sla.solve_continuous_lyapunov(acl.T, -res)
        p_new = sym(p + dp)
        if np.linalg.norm(_riccati_residual(a, q, g, p_new)) < np.linalg.norm(res):
            p = p_new
    res = float(np.linalg.norm(_riccati_residual(a, q, g, p)))
    ab = spectral_abscissa(a + g @ p)
    return RiccatiSolution(p=p, residual_norm=res, stabilizing=bool(ab < 0), abscissa=ab)


# ---------------------------------------------------------------------------
# coupled Riccati equations of the state-feedback Nash game

def _s_mats(game: GameDefinition):
    return [b @ np.linalg.solve(r, b.T) for b, r in zip(game.b, game.r_weight)]


def care_residual(game: GameDefinition, p_tuple) -> list[np.ndarray]:
    """Left-hand sides of the coupled Riccati equations, one per player."""
    s = _s_mats(game)
    out = []
    for i, p in enumerate(p_tuple):
        a_i = game.a - sum(s[j] @ p_tuple[j] for j in range(game.n_players) if j != i)
        r = a_i.T @ p + p @ a_i + game.q_state(i) - p @ s[i] @ p + p @ disturbance_gram(game, i) @ p
        out.append(sym(r))
    return out


@dataclass
class CareReport:
    flags: list          # N+1 stability flags, joint loop first
    abscissae: list
    structural_residuals: list

    @property
    def all_stable(self) -> bool:
        return all(self.flags)


def verify_care_stabilizing(game: GameDefinition, p_tuple) -> CareReport:
    s = _s_mats(game)
    a_cl = game.a - sum(s[j] @ p_tuple[j] for j in range(game.n_players))
    flags, abs_ = [], []
    ok, ab = is_stable(a_cl)
    flags.append(ok)
    abs_.append(ab)
    structural = []
    for i, p in enumerate(p_tuple):
        ok, ab = is_stable(a_cl + disturbance_gram(game, i) @ p)
        flags.append(ok)
        abs_.append(ab)
        c = game.c[i]
        proj = np.eye(game.state_dim) - c.T @ np.linalg.solve(c @ c.T, c)
        structural.append(float(np.linalg.norm(game.b[i].T @ p @ proj)))
    return CareReport(flags, abs_, structural)


@dataclass
class SCFNEResult:
    converged: bool
    p: list
    costs: np.ndarray
    gains: list            # state-feedback gains -R^{-1} B' P
    sweeps: int
    report: CareReport | None
    history: list = field(default_factory=list)   # max update norm per sweep
    message: str = ""

    @property
    def total_cost(self) -> float:
        return float(np.sum(self.costs))


def solve_scfne(game: GameDefinition, tol: float = 1e-9, max_sweeps: int = 500) -> SCFNEResult:
    """Gauss-Seidel iteration on the coupled Riccati equations.

    Player i's equation is the single soft Riccati equation with
    ``a = A - sum_{j != i} S_j P_j`` and indefinite ``g = G_i - S_i``.
    The iteration starts from the decoupled solutions (``a = A``), or from
    a joint LQ solution when some decoupled equation has no solution.
    """
    N, n = game.n_players, game.state_dim
    s = _s_mats(game)
    gs = [disturbance_gram(game, i) for i in range(N)]
    qs = [game.q_state(i) for i in range(N)]

    def step(i, p):
        a_i = game.a - sum(s[j] @ p[j] for j in range(N) if j != i)
        return solve_soft_riccati(a_i, qs[i], gs[i] - s[i], require_stable=False).p

    hist: list[float] = []
    try:
        p = [solve_soft_riccati(game.a, qs[i], gs[i] - s[i], require_stable=False).p
             for i in range(N)]
    except RiccatiError:
        # a player alone cannot stabilize: start from a joint LQ solution,
        # which makes A - sum S_j P_j stable
        try:
            p0 = solve_soft_riccati(game.a, np.eye(n), -sum(s), require_stable=False).p
        except RiccatiError as exc:
            return SCFNEResult(False, [], np.full(N, np.nan), [], 0, None, hist,
                               f"no starting point: {exc}")
        p = [p0.copy() for _ in range(N)]
    for k in range(1, max_sweeps + 1):
        upd = 0.0
        try:
            for i in range(N):
                new = step(i, p)
                upd = max(upd, float(np.linalg.norm(new - p[i])))
                p[i] = new
        except RiccatiError as exc:
            return SCFNEResult(False, p, np.full(N, np.nan), [], k, None, hist,
                               f"sweep {k}, player {i}: {exc}")
        hist.append(upd)
        if not np.isfinite(upd):
            break
        if upd < tol:
            rep = verify_care_stabilizing(game, p)
            costs = np.array([game.x0 @ pi @ game.x0 for pi in p])
            gains = [-np.linalg.solve(game.r_weight[i], game.b[i].T @ p[i]) for i in range(N)]
            return SCFNEResult(True, p, costs, gains, k, rep, hist,
                               "converged" if rep.all_stable else "converged, not stabilizing")
    return SCFNEResult(False, p, np.full(N, np.nan), [], len(hist), None, hist,
                       f"no convergence after {max_sweeps} sweeps")


def cross_bound_check(x: np.ndarray, y: np.ndarray, l: np.ndarray, gamma: float,
                      tol: float = 1e-10) -> bool:
    """Check X'LY + Y'LX <= gamma X'LX + Y'LY / gamma for L > 0, gamma > 0."""
    if gamma <= 0:
        raise ValueError("gamma must be positive")
    d = gamma * x.T @ l @ x + y.T @ l @ y / gamma - x.T @ l @ y - y.T @ l @ x
    d = sym(np.atleast_2d(d))
    scale = max(1.0, np.linalg.norm(d, 2))
    return bool(np.linalg.eigvalsh(d).min() >= -tol * scale)
