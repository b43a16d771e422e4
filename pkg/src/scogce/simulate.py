"""Closed-loop simulation with classical RK4 and running-cost quadrature."""
from __future__ import annotations

import csv
import math
import re
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.linalg as sla

from .game import GameDefinition, StrategyProfile, closed_loop_matrix
from .linalg import spectral_abscissa

__all__ = [
    "SimulationResult",
    "ZeroDisturbance",
    "FunctionDisturbance",
    "ExpressionDisturbance",
    "FileDisturbance",
    "WorstCaseDisturbance",
    "parse_disturbance",
    "default_step",
    "default_horizon",
    "simulate",
    "rk4_piecewise_batch",
    "consensus_matrices",
    "read_trajectory_csv",
]


def default_step(abscissa: float) -> float:
    """min(0.01, 0.1/|abscissa|)."""
    if not np.isfinite(abscissa) or abscissa == 0:
        return 0.01
    return min(0.01, 0.1 / abs(abscissa))


def default_horizon(abscissa: float) -> float:
    """20/|abscissa|, the time for exp(abscissa t) to reach ~2e-9."""
    if not np.isfinite(abscissa) or abscissa == 0:
        return 20.0
    return 20.0 / abs(abscissa)


# ---------------------------------------------------------------------------
# disturbance sources.  Each returns, for every RK4 step, the values at the
# three stage times t_k, t_k + dt/2, t_k + dt as an array (steps, 3, q).

class _Source:
    label = "source"

    def stages(self, q: int, dt: float, steps: int) -> np.ndarray:
        t = dt * np.arange(steps)[:, None] + dt * np.array([0.0, 0.5, 1.0])[None, :]
        v = np.asarray(self(t.reshape(-1)), dtype=float).reshape(steps * 3, -1)
        if v.shape[1] == 1 and q > 1:
            v = np.repeat(v, q, axis=1)
        return v.reshape(steps, 3, q)


class ZeroDisturbance(_Source):
    label = "zero"

    def __call__(self, t):
        return np.zeros((np.size(t), 1))

    def stages(self, q, dt, steps):
        return np.zeros((steps, 3, q))


class FunctionDisturbance(_Source):
    """Wrap a vectorized callable t -> (len(t), q) or (len(t),)."""

    def __init__(self, fun, label="function"):
        self.fun = fun
        self.label = label

    def __call__(self, t):
        v = np.asarray(self.fun(np.asarray(t, dtype=float)), dtype=float)
        return v.reshape(np.size(t), -1)


_EXPR_ALLOWED = re.compile(r"^[0-9t\s\.\+\-\*/\(\),eE]*$")
_EXPR_FUNCS = {"sin": np.sin, "cos": np.cos, "exp": np.exp, "pi": math.pi}


class ExpressionDisturbance(FunctionDisturbance):
    """Closed-form signal in t built from +, -, *, /, **, sin, cos, exp, pi.

    Components are separated by ';' (one per disturbance channel),
    e.g. ``"10*sin(t)*exp(-t)"``.
    """

    def __init__(self, text: str):
        parts = [p.strip() for p in text.split(";") if p.strip()]
        if not parts:
            raise ValueError("empty disturbance expression")
        codes = []
        for p in parts:
            stripped = p
            for name in _EXPR_FUNCS:
                stripped = stripped.replace(name, "")
            if not _EXPR_ALLOWED.match(stripped):
                raise ValueError(f"unsupported token in disturbance expression {p!r}")
            codes.append(compile(p, "<disturbance>", "eval"))
        self.text = text

        def fun(t):
            env = dict(_EXPR_FUNCS, t=t, __builtins__={})
            cols = [np.broadcast_to(np.asarray(eval(c, env), dtype=float), np.shape(t)) for c in codes]
            return np.stack(cols, axis=-1)

        super().__init__(fun, label=f"expression:{text}")


class FileDisturbance(FunctionDisturbance):
    """CSV with columns t, d_1..d_q; linear interpolation, zero outside."""

    def __init__(self, path):
        data = np.loadtxt(path, delimiter=",", ndmin=2, comments="#")
        if data.shape[1] < 2:
            raise ValueError("disturbance file needs a time column and at least one value column")
        ts, vals = data[:, 0], data[:, 1:]
        if np.any(np.diff(ts) <= 0):
            raise ValueError("disturbance file times must be increasing")

        def fun(t):
            t = np.asarray(t, dtype=float)
            return np.stack([np.interp(t, ts, vals[:, k], left=0.0, right=0.0)
                             for k in range(vals.shape[1])], axis=-1)

        super().__init__(fun, label=f"file:{path}")


class WorstCaseDisturbance(_Source):
    """d(t) = D_i^{-1} E' P_i exp((A + G_i P_i) t) x0 from a worst-case report."""

    def __init__(self, report, player: int):
        pl = report.players[player]
        if pl.p is None:
            raise ValueError(f"player {player} has no worst-case solution")
        self.gain = pl.disturbance_gain
        self.loop = pl.loop
        self.x0 = report.x0
        self.player = player
        self.label = f"worst_case:{player + 1}"

    def __call__(self, t):
        t = np.atleast_1d(np.asarray(t, dtype=float))
        return np.array([self.gain @ (sla.expm(self.loop * s) @ self.x0) for s in t])

    def stages(self, q, dt, steps):
        half = sla.expm(self.loop * dt / 2)
        z = np.empty((2 * steps + 1, self.x0.size))
        z[0] = self.x0
        for k in range(2 * steps):
            z[k + 1] = half @ z[k]
        d = z @ self.gain.T
        idx = 2 * np.arange(steps)[:, None] + np.arange(3)[None, :]
        return d[idx]


def parse_disturbance(spec: str, report=None) -> _Source:
    """Parse a CLI disturbance spec.

    ``zero`` | ``worst_case:I`` (I counted from 1) | ``file:PATH`` | ``expr:EXPRESSION``
    (a bare expression is accepted too).
    """
    spec = spec.strip()
    if spec in ("zero", "0", "none"):
        return ZeroDisturbance()
    if spec.startswith("worst_case"):
        m = re.fullmatch(r"worst_case(?:[:(](\d+)\)?)?", spec)
        if not m:
            raise ValueError(f"bad worst-case spec {spec!r}")
        if report is None:
            raise ValueError("worst-case disturbance needs a worst-case report")
        k = int(m.group(1) or 1)
        if not 1 <= k <= len(report.players):
            raise ValueError(f"worst-case player {k} out of range (players are numbered from 1)")
        return WorstCaseDisturbance(report, k - 1)
    if spec.startswith("file:"):
        return FileDisturbance(spec[5:])
    if spec.startswith("expr:"):
        spec = spec[5:]
    return ExpressionDisturbance(spec)


# ---------------------------------------------------------------------------

@dataclass
class SimulationResult:
    time_grid: np.ndarray
    state_trajectory: np.ndarray          # (T, n)
    disturbance: np.ndarray               # (T, q)
    controls: list                        # per player (T, m_i)
    per_player_outputs: list              # per player (T, s_i)
    accumulated_costs: np.ndarray         # (T, N)
    errors: list = field(default_factory=list)   # consensus errors per player (T, k_i)
    blowup_time: float | None = None

    @property
    def final_costs(self) -> np.ndarray:
        return self.accumulated_costs[-1]

    def error_norms(self) -> np.ndarray:
        """(T, N) Euclidean norms of the consensus errors."""
        return np.stack([np.linalg.norm(e, axis=1) for e in self.errors], axis=1)

    def to_csv(self, path) -> None:
        n = self.state_trajectory.shape[1]
        N = self.accumulated_costs.shape[1]
        head = ["t"] + [f"x{k + 1}" for k in range(n)] + [f"J{i + 1}" for i in range(N)]
        for i, e in enumerate(self.errors):
            head += [f"e{i + 1}_{k + 1}" for k in range(e.shape[1])]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(head)
            cols = [self.time_grid[:, None], self.state_trajectory, self.accumulated_costs] + list(self.errors)
            for row in np.hstack(cols):
                w.writerow([repr(float(v)) for v in row])


def read_trajectory_csv(path) -> dict:
    """Columns of a trajectory CSV written by SimulationResult.to_csv.

    Returns t, x (T, n), J (T, N) and errors (list of (T, k_i)).
    """
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    head, data = rows[0], np.array([[float(v) for v in r] for r in rows[1:]])
    xs = [k for k, h in enumerate(head) if re.fullmatch(r"x\d+", h)]
    js = [k for k, h in enumerate(head) if re.fullmatch(r"J\d+", h)]
    groups: dict[int, list] = {}
    for k, h in enumerate(head):
        m = re.fullmatch(r"e(\d+)_\d+", h)
        if m:
            groups.setdefault(int(m.group(1)), []).append(k)
    return {"t": data[:, 0], "x": data[:, xs], "J": data[:, js],
            "errors": [data[:, groups[i]] for i in sorted(groups)]}


def consensus_matrices(options: dict | None):
    """Consensus-error maps e_i = L_i y_i stored in game options, if any."""
    if not options or "consensus_errors" not in options:
        return None
    return [np.atleast_2d(np.array(m, dtype=float)) for m in options["consensus_errors"]]


def simulate(game: GameDefinition, profile: StrategyProfile, disturbance=None,
             t_final: float | None = None, dt: float | None = None,
             consensus=None) -> SimulationResult:
    """RK4 simulation of x' = A° x + E d(t) with per-player running costs.

    The running cost of player i is x'(C_i'Q_iC_i + C_i'F_i'R_iF_iC_i)x - d'D_i d,
    integrated with the same RK4 scheme as the state.
    """
    a_cl = closed_loop_matrix(game, profile)
    ab = spectral_abscissa(a_cl)
    if ab >= 0:
        warnings.warn(f"closed loop not stable (abscissa {ab:.3g}); simulating for diagnosis",
                      RuntimeWarning, stacklevel=2)
    source = disturbance if disturbance is not None else ZeroDisturbance()
    dt = default_step(ab) if dt is None else float(dt)
    if t_final is None:
        # a worst-case disturbance decays with its own loop, which may be slower
        slow = max(ab, spectral_abscissa(source.loop)) if isinstance(source, WorstCaseDisturbance) else ab
        t_final = default_horizon(slow)
    t_final = float(t_final)
    if dt <= 0 or t_final <= 0:
        raise ValueError("dt and t_final must be positive")
    steps = int(math.ceil(t_final / dt - 1e-9))
    dt = t_final / steps
    n, q, N = game.state_dim, game.dist_dim, game.n_players
    e = game.e
    qeff = [game.c[i].T @ (game.q_weight[i] + profile.gains[i].T @ game.r_weight[i] @ profile.gains[i])
            @ game.c[i] for i in range(N)]
    dw = list(game.d_weight)
    dst = source.stages(q, dt, steps) if q else np.zeros((steps, 3, 0))

    def rate(x, d):
        dx = a_cl @ x + e @ d
        dj = np.array([x @ qeff[i] @ x - d @ dw[i] @ d for i in range(N)])
        return dx, dj

    xs = np.empty((steps + 1, n))
    js = np.zeros((steps + 1, N))
    xs[0] = game.x0
    blow = None
    for k in range(steps):
        x = xs[k]
        d1, d2, d3 = dst[k]
        k1, c1 = rate(x, d1)
        k2, c2 = rate(x + dt / 2 * k1, d2)
        k3, c3 = rate(x + dt / 2 * k2, d2)
        k4, c4 = rate(x + dt * k3, d3)
        xs[k + 1] = x + dt / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        js[k + 1] = js[k] + dt / 6 * (c1 + 2 * c2 + 2 * c3 + c4)
        if not np.all(np.isfinite(xs[k + 1])):
            blow = (k + 1) * dt
            xs, js = xs[: k + 2], js[: k + 2]
            break
    tg = dt * np.arange(xs.shape[0])
    dvals = np.vstack([dst[:, 0, :], dst[-1:, 2, :]])[: xs.shape[0]] if steps else np.zeros((1, q))
    outs = [xs @ c.T for c in game.c]
    ctrls = [y @ f.T for y, f in zip(outs, profile.gains)]
    errs = []
    if consensus is not None:
        errs = [y @ np.asarray(l).T for y, l in zip(outs, consensus)]
    return SimulationResult(tg, xs, dvals, ctrls, outs, js, errs, blow)


def rk4_piecewise_batch(a_cl, e, qeffs, dweights, x0, amplitudes, horizon, dt_max):
    """Batched RK4 costs under piecewise-constant disturbances.

    Parameters
    ----------
    amplitudes : (segments, q, B) array, one column per sample
    horizon : float, the disturbance is zero after `horizon`

    Returns
    -------
    x_end : (n, B) states at the horizon
    costs : (N, B) integrated running costs on [0, horizon]
    """
    segs, q, nb = amplitudes.shape
    seg_len = horizon / segs
    per = max(1, int(math.ceil(seg_len / dt_max - 1e-9)))
    dt = seg_len / per
    n = a_cl.shape[0]
    x = np.repeat(np.asarray(x0, dtype=float)[:, None], nb, axis=1)
    costs = np.zeros((len(qeffs), nb))

    def quad(xm, d):
        return np.array([np.einsum("ib,ij,jb->b", xm, qm, xm) - np.einsum("ib,ij,jb->b", d, dm, d)
                         for qm, dm in zip(qeffs, dweights)])

    for s in range(segs):
        d = amplitudes[s]
        ed = e @ d
        for _ in range(per):
            k1 = a_cl @ x + ed
            x2 = x + dt / 2 * k1
            k2 = a_cl @ x2 + ed
            x3 = x + dt / 2 * k2
            k3 = a_cl @ x3 + ed
            x4 = x + dt * k3
            k4 = a_cl @ x4 + ed
            costs += dt / 6 * (quad(x, d) + 2 * quad(x2, d) + 2 * quad(x3, d) + quad(x4, d))
            x = x + dt / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
    return x, costs
