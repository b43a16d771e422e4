"""Uncertain LQ differential game data and derived closed-loop matrices.

The game is

    x' = A x + sum_i B_i u_i + E d,    y_i = C_i x,    u_i = F_i y_i

and player i pays the soft-constrained cost

    J_i = int_0^inf  y_i' Q_i y_i + u_i' R_i u_i - d' D_i d  dt.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Sequence

import numpy as np

__all__ = [
    "GameDefinition",
    "StrategyProfile",
    "CostProfile",
    "validate_game",
    "structural_warnings",
    "closed_loop_matrix",
    "residual_loop_matrix",
    "disturbance_gram",
    "load_game",
    "load_game_file",
    "game_to_dict",
    "save_game",
    "RANK_RTOL",
    "PSD_TOL",
    "PBH_TOL",
]

RANK_RTOL = 1e-9   # singular values below RANK_RTOL * s_max count as zero
PSD_TOL = 1e-9     # eigenvalue threshold for (semi)definiteness
PBH_TOL = 1e-9     # eigenvalues with real part >= -PBH_TOL are tested


def _frozen(x, ndim: int = 2) -> np.ndarray:
    a = np.array(x, dtype=float)
    if ndim == 2 and a.ndim == 0:
        a = a.reshape(1, 1)
    elif ndim == 2 and a.ndim == 1:
        # a bare vector is read as a column (B, E) by convention of the caller
        a = a.reshape(-1, 1)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class GameDefinition:
    """Immutable description of an N-player uncertain LQ game.

    Parameters
    ----------
    a : (n, n) array
    b : sequence of (n, m_i) arrays
    c : sequence of (s_i, n) arrays
    e : (n, q) array
    q_weight, r_weight, d_weight : sequences of symmetric arrays
    x0 : (n,) array
    """

    a: np.ndarray
    b: tuple
    c: tuple
    e: np.ndarray
    q_weight: tuple
    r_weight: tuple
    d_weight: tuple
    x0: np.ndarray

    def __post_init__(self):
        set_ = object.__setattr__
        set_(self, "a", _frozen(self.a))
        set_(self, "e", _frozen(self.e))
        for name in ("b", "c", "q_weight", "r_weight", "d_weight"):
            set_(self, name, tuple(_frozen(m) for m in getattr(self, name)))
        x0 = np.array(self.x0, dtype=float).reshape(-1)
        x0.setflags(write=False)
        set_(self, "x0", x0)
        lens = {len(self.b), len(self.c), len(self.q_weight), len(self.r_weight), len(self.d_weight)}
        if len(lens) != 1:
            raise ValueError("per-player lists B, C, Q, R, D must have equal length")
        if self.n_players == 0:
            raise ValueError("a game needs at least one player")

    @property
    def n_players(self) -> int:
        return len(self.b)

    @property
    def state_dim(self) -> int:
        return self.a.shape[0]

    @property
    def dist_dim(self) -> int:
        return self.e.shape[1]

    def input_dim(self, i: int) -> int:
        return self.b[i].shape[1]

    def output_dim(self, i: int) -> int:
        return self.c[i].shape[0]

    def q_state(self, i: int) -> np.ndarray:
        """C_i' Q_i C_i."""
        c = self.c[i]
        return c.T @ self.q_weight[i] @ c

    def is_state_feedback(self) -> bool:
        n = self.state_dim
        return all(c.shape == (n, n) and np.array_equal(c, np.eye(n)) for c in self.c)


@dataclass(frozen=True)
class StrategyProfile:
    """One static output-feedback gain per player, u_i = F_i y_i."""

    gains: tuple
    mode: str = "output_feedback"

    def __post_init__(self):
        if self.mode not in ("output_feedback", "state_feedback"):
            raise ValueError(f"unknown mode {self.mode!r}")
        object.__setattr__(self, "gains", tuple(_frozen(f) for f in self.gains))

    def __len__(self):
        return len(self.gains)

    def replace(self, i: int, f) -> "StrategyProfile":
        g = list(self.gains)
        g[i] = f
        return StrategyProfile(tuple(g), self.mode)

    @classmethod
    def zeros(cls, game: GameDefinition, mode: str = "output_feedback") -> "StrategyProfile":
        return cls(tuple(np.zeros((game.input_dim(i), game.output_dim(i)))
                         for i in range(game.n_players)), mode)

    def to_list(self) -> list:
        return [f.tolist() for f in self.gains]


@dataclass(frozen=True)
class CostProfile:
    """Cost thresholds delta_i > 0, one per player."""

    deltas: tuple

    def __post_init__(self):
        d = tuple(float(v) for v in np.atleast_1d(self.deltas))
        if not d or any(not (v > 0) or not math.isfinite(v) for v in d):
            raise ValueError("cost profile entries must be finite and strictly positive")
        object.__setattr__(self, "deltas", d)

    def __len__(self):
        return len(self.deltas)

    def __getitem__(self, i):
        return self.deltas[i]

    def as_array(self) -> np.ndarray:
        return np.array(self.deltas)


# ---------------------------------------------------------------------------
# validation

def _rank(m: np.ndarray) -> int:
    if m.size == 0:
        return 0
    s = np.linalg.svd(m, compute_uv=False)
    return int(np.sum(s > RANK_RTOL * s[0])) if s[0] > 0 else 0


def _unstable_eigs(a: np.ndarray) -> np.ndarray:
    w = np.linalg.eigvals(a)
    return w[w.real >= -PBH_TOL]


def _pbh_stabilizable(a, b) -> bool:
    n = a.shape[0]
    for lam in _unstable_eigs(a):
        if _rank(np.hstack([a - lam * np.eye(n), b.astype(complex)])) < n:
            return False
    return True


def _pbh_detectable(a, c) -> bool:
    return _pbh_stabilizable(a.T, c.T)


def _sym_err(m) -> float:
    return float(np.max(np.abs(m - m.T))) if m.size else 0.0


def validate_game(game: GameDefinition) -> list[str]:
    """Return every violated invariant of `game` (empty list when valid).

    Stabilizability and detectability are checked for the joint input
    ``[B_1 ... B_N]`` and the stacked output ``col(C_i)``; per-player PBH
    failures are advisory and reported by :func:`structural_warnings`.
    Players are numbered from 1 in the messages.
    """
    out: list[str] = []
    a, n = game.a, game.a.shape[0]
    if a.ndim != 2 or a.shape[1] != n:
        return [f"A must be square, got shape {a.shape}"]
    if game.e.shape[0] != n:
        out.append(f"E has {game.e.shape[0]} rows, expected {n}")
    if game.x0.shape != (n,):
        out.append(f"x0 has length {game.x0.size}, expected {n}")
    q = game.e.shape[1]
    dims_ok = not out
    for i in range(game.n_players):
        k = i + 1
        b, c = game.b[i], game.c[i]
        qi, ri, di = game.q_weight[i], game.r_weight[i], game.d_weight[i]
        if b.shape[0] != n:
            out.append(f"b[{k}] has {b.shape[0]} rows, expected {n}")
            dims_ok = False
        if c.shape[1] != n:
            out.append(f"c[{k}] has {c.shape[1]} columns, expected {n}")
            dims_ok = False
        s, m = c.shape[0], b.shape[1]
        if qi.shape != (s, s):
            out.append(f"q_weight[{k}] has shape {qi.shape}, expected {(s, s)}")
            dims_ok = False
        if ri.shape != (m, m):
            out.append(f"r_weight[{k}] has shape {ri.shape}, expected {(m, m)}")
            dims_ok = False
        if di.shape != (q, q):
            out.append(f"d_weight[{k}] has shape {di.shape}, expected {(q, q)}")
            dims_ok = False
        if s > n:
            out.append(f"c[{k}] has {s} rows, more than the state dimension {n}")
        elif c.shape[1] == n and _rank(c) < s:
            out.append(f"c[{k}] does not have full row rank {s}")
        if qi.shape[0] == qi.shape[1]:
            if _sym_err(qi) > PSD_TOL * max(1.0, np.abs(qi).max(initial=0.0)):
                out.append(f"q_weight[{k}] not symmetric")
            elif qi.size and np.linalg.eigvalsh(qi).min() < -PSD_TOL:
                out.append(f"q_weight[{k}] not positive semidefinite")
        for name, w in (("r_weight", ri), ("d_weight", di)):
            if w.shape[0] != w.shape[1]:
                continue
            if _sym_err(w) > PSD_TOL * max(1.0, np.abs(w).max(initial=0.0)):
                out.append(f"{name}[{k}] not symmetric")
            elif w.size and np.linalg.eigvalsh(w).min() <= PSD_TOL:
                out.append(f"{name}[{k}] not positive definite")
    if dims_ok:
        bj = np.hstack(game.b)
        cj = np.vstack(game.c)
        if not _pbh_stabilizable(a, bj):
            out.append("(A, [B_1 .. B_N]) not stabilizable")
        if not _pbh_detectable(a, cj):
            out.append("(A, col(C_1 .. C_N)) not detectable")
        for i in range(game.n_players):
            k = i + 1
            if not np.any(game.c[i]) and not _pbh_detectable(a, game.c[i]):
                out.append(f"c[{k}] is zero: (A, c[{k}]) not detectable")
    return out


def structural_warnings(game: GameDefinition) -> list[str]:
    """Per-player PBH failures; informative only, never blocking."""
    out = []
    for i in range(game.n_players):
        k = i + 1
        if not _pbh_stabilizable(game.a, game.b[i]):
            out.append(f"(A, b[{k}]) not stabilizable on its own")
        if not _pbh_detectable(game.a, game.c[i]):
            out.append(f"(A, c[{k}]) not detectable on its own")
    return out


# ---------------------------------------------------------------------------
# derived matrices

def _check_profile(game: GameDefinition, profile: StrategyProfile) -> None:
    if len(profile.gains) != game.n_players:
        raise ValueError(f"profile has {len(profile.gains)} gains for {game.n_players} players")
    for i, f in enumerate(profile.gains):
        want = (game.input_dim(i), game.output_dim(i))
        if f.shape != want:
            raise ValueError(f"gain {i} has shape {f.shape}, expected {want}")


def closed_loop_matrix(game: GameDefinition, profile: StrategyProfile) -> np.ndarray:
    """A + sum_i B_i F_i C_i."""
    _check_profile(game, profile)
    out = np.array(game.a)
    for b, f, c in zip(game.b, profile.gains, game.c):
        out += b @ f @ c
    return out


def residual_loop_matrix(game: GameDefinition, profile: StrategyProfile, i: int) -> np.ndarray:
    """A + sum_{j != i} B_j F_j C_j, the loop seen by player i."""
    _check_profile(game, profile)
    out = np.array(game.a)
    for j, (b, f, c) in enumerate(zip(game.b, profile.gains, game.c)):
        if j != i:
            out += b @ f @ c
    return out


def disturbance_gram(game: GameDefinition, i: int) -> np.ndarray:
    """G_i = E D_i^{-1} E'."""
    e = game.e
    if e.shape[1] == 0:
        return np.zeros((game.state_dim,) * 2)
    g = e @ np.linalg.solve(game.d_weight[i], e.T)
    return (g + g.T) / 2


# ---------------------------------------------------------------------------
# JSON I/O

def _finite_matrix(obj, what: str, vector: bool = False) -> np.ndarray:
    try:
        m = np.array(obj, dtype=float)
    except (TypeError, ValueError) as exc:
        raise ValueError(f"{what}: not a numeric array ({exc})") from None
    if not np.all(np.isfinite(m)):
        raise ValueError(f"{what}: contains NaN or Inf")
    if vector:
        if m.ndim > 1 and 1 not in m.shape:
            raise ValueError(f"{what}: expected a vector")
        return m.reshape(-1)
    if m.ndim == 0:
        return m.reshape(1, 1)
    if m.ndim == 1:
        return m.reshape(-1, 1)
    if m.ndim != 2:
        raise ValueError(f"{what}: expected a matrix")
    return m


def _reject_constant(token):
    raise ValueError(f"non-finite literal {token} in game file")


def _per_player(obj, key: str, n_players: int | None) -> list:
    if not isinstance(obj, list):
        raise ValueError(f"{key}: expected a list with one entry per player")
    # a scalar or flat list per player (e.g. "R": [1, 1, 1]) is accepted too
    mats = [_finite_matrix(x, f"{key}[{i + 1}]") for i, x in enumerate(obj)]
    if n_players is not None and len(mats) != n_players:
        raise ValueError(f"{key}: {len(mats)} entries, expected {n_players}")
    return mats


def game_from_dict(data: dict) -> tuple[GameDefinition, CostProfile | None, dict]:
    """Build a game from the JSON schema; returns (game, deltas or None, options)."""
    missing = [k for k in ("A", "B", "C", "E", "Q", "R", "D", "x0") if k not in data]
    if missing:
        raise ValueError(f"missing keys: {', '.join(missing)}")
    a = _finite_matrix(data["A"], "A")
    b = _per_player(data["B"], "B", None)
    n_players = len(b)
    c = _per_player(data["C"], "C", n_players)
    # row-vector outputs must stay rows
    c = [m.T if m.shape[1] == 1 and a.shape[0] != 1 else m for m in c]
    e = _finite_matrix(data["E"], "E")
    if e.shape[0] != a.shape[0] and e.shape[1] == a.shape[0]:
        e = e.T
    game = GameDefinition(
        a=a, b=tuple(b), c=tuple(c), e=e,
        q_weight=tuple(_per_player(data["Q"], "Q", n_players)),
        r_weight=tuple(_per_player(data["R"], "R", n_players)),
        d_weight=tuple(_per_player(data["D"], "D", n_players)),
        x0=_finite_matrix(data["x0"], "x0", vector=True),
    )
    deltas = None
    if data.get("deltas") is not None:
        deltas = CostProfile(tuple(_finite_matrix(data["deltas"], "deltas", vector=True)))
    options = dict(data.get("options") or {})
    return game, deltas, options


def load_game_file(path) -> tuple[GameDefinition, CostProfile | None, dict]:
    text = Path(path).read_text()
    data = json.loads(text, parse_constant=_reject_constant)
    if not isinstance(data, dict):
        raise ValueError("game file must hold a JSON object")
    return game_from_dict(data)


def load_game(path) -> GameDefinition:
    return load_game_file(path)[0]


def game_to_dict(game: GameDefinition, deltas: CostProfile | Sequence[float] | None = None,
                 options: dict | None = None) -> dict[str, Any]:
    out: dict[str, Any] = {
        "A": game.a.tolist(),
        "B": [m.tolist() for m in game.b],
        "C": [m.tolist() for m in game.c],
        "E": game.e.tolist(),
        "Q": [m.tolist() for m in game.q_weight],
        "R": [m.tolist() for m in game.r_weight],
        "D": [m.tolist() for m in game.d_weight],
        "x0": game.x0.tolist(),
    }
    if deltas is not None:
        out["deltas"] = list(deltas.deltas if isinstance(deltas, CostProfile) else deltas)
    if options:
        out["options"] = options
    return out


def save_game(path, game: GameDefinition, deltas=None, options=None) -> None:
    Path(path).write_text(json.dumps(game_to_dict(game, deltas, options), indent=1))
