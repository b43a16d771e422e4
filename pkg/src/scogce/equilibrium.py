"""Sequential guaranteed cost response, cooperative cost, PoS and delta sweeps."""
from __future__ import annotations

import csv
import itertools
import logging
import re
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace

import cvxpy as cp
import numpy as np
import scipy.linalg as sla

from .certify import (GAMMA_GRID, CertificateBundle, VerificationResult, check_bundle,
                      exact_worst_case_costs, verify_scogce, worst_case_costs_or_inf)
from .game import (CostProfile, GameDefinition, StrategyProfile, closed_loop_matrix,
                   disturbance_gram)
from .linalg import (NotStableError, RiccatiError, is_stable, solve_lyapunov,
                     solve_soft_riccati, spectral_abscissa, sym)
from .lmi import LmiProblem, solve_feasibility
from .synth_of import SYNTH_GAMMA_GRID, of_response
from .synth_sf import sf_response

__all__ = [
    "InitializationError",
    "RunOptions",
    "RoundRecord",
    "EquilibriumRun",
    "CooperativeResult",
    "SweepPoint",
    "SweepResult",
    "initialize_stabilizing",
    "run_sequential",
    "price_of_stability",
    "cooperative_cost",
    "team_game",
    "parse_grid",
    "delta_sweep",
    "sweep_monotonicity",
    "read_sweep_csv",
]

log = logging.getLogger(__name__)


class InitializationError(RuntimeError):
    pass


@dataclass
class RunOptions:
    mode: str = "output_feedback"          # or "state_feedback"
    eps: float = 1e-6
    max_rounds: int | None = None          # default 50 N
    tol_boundary: float = 1e-4
    max_iter: int = 200
    verify_gammas: tuple = GAMMA_GRID
    synth_gammas: tuple = SYNTH_GAMMA_GRID
    x0_free_alpha: float | None = None
    init_margin: float = 0.25
    init_gain_bound: float | None = 10.0
    random_order: bool = False
    seed: int | None = None
    retries: int = 1
    backend: str | None = None

    def to_dict(self) -> dict:
        d = asdict(self)
        d["verify_gammas"] = list(self.verify_gammas)
        d["synth_gammas"] = list(self.synth_gammas)
        return d


# ---------------------------------------------------------------------------
# initialization

def initialize_stabilizing(game: GameDefinition, margin: float = 0.25, gain_bound: float | None = 10.0,
                           eps: float = 1e-6, mode: str = "output_feedback",
                           backend: str | None = None) -> StrategyProfile:
    """Structured stabilizing profile from a Lyapunov inequality in all gains.

    Zero gains are returned when A already has abscissa below -margin.
    Otherwise, for P in the schedule {I, Lyapunov solution of the shifted A},
    the LMI  A°'P + P A° <= -2 margin P - eps I  is solved jointly in all F_i,
    with the spectral-norm bound ||F_i|| <= gain_bound (dropped if that fails).
    """
    zero = StrategyProfile.zeros(game, mode)
    if is_stable(game.a, margin)[0]:
        return zero
    n = game.state_dim
    shift = max(0.0, spectral_abscissa(game.a)) + 1.0
    schedule = [np.eye(n), solve_lyapunov(game.a - shift * np.eye(n), np.eye(n))]
    bounds = [gain_bound, None] if gain_bound is not None else [None]
    for bound in bounds:
        for P in schedule:
            pb = LmiProblem(label="initialization")
            fs = [pb.variable(f"F{i}", game.input_dim(i), game.output_dim(i), symmetric=False)
                  for i in range(game.n_players)]
            acl = game.a + sum(game.b[i] @ fs[i] @ game.c[i] for i in range(game.n_players))
            pb.add_neg(acl.T @ P + P @ acl + 2 * margin * P, eps, "lyapunov")
            if bound is not None:
                for i, f in enumerate(fs):
                    r, c = f.shape
                    pb.add_pos(cp.bmat([[bound * np.eye(r), f], [f.T, bound * np.eye(c)]]), 0.0,
                               f"norm{i}")
            res = solve_feasibility(pb, backend)
            if res.feasible:
                prof = StrategyProfile(tuple(res[f"F{i}"] for i in range(game.n_players)), mode)
                if is_stable(closed_loop_matrix(game, prof), 1e-7)[0]:
                    return prof
    raise InitializationError("no stabilizing structured profile found")


# ---------------------------------------------------------------------------
# Algorithm 2

@dataclass
class RoundRecord:
    round: int
    player: int
    success: bool
    info: str
    costs: list
    wall_time: float


@dataclass
class EquilibriumRun:
    status: str                       # scogce_found | stopped_all_players_failed | iteration_limit
    profile: StrategyProfile
    certificates: CertificateBundle | None
    history: list
    rounds: int
    deltas: CostProfile
    costs: np.ndarray
    traces: list = field(default_factory=list)
    verification: VerificationResult | None = None
    wall_time: float = 0.0

    @property
    def found(self) -> bool:
        return self.status == "scogce_found"

    def to_dict(self) -> dict:
        return {
            "status": self.status,
            "rounds": self.rounds,
            "deltas": list(self.deltas.deltas),
            "costs": [float(c) if np.isfinite(c) else None for c in self.costs],
            "gains": self.profile.to_list(),
            "mode": self.profile.mode,
            "certificates": None if self.certificates is None else self.certificates.to_dict(),
            "history": [asdict(h) | {"costs": [float(c) if np.isfinite(c) else None for c in h.costs]}
                        for h in self.history],
            "wall_time": self.wall_time,
        }


def _verify(game, profile, deltas, opts):
    costs = worst_case_costs_or_inf(game, profile, opts.x0_free_alpha)
    if not np.all(costs < deltas.as_array()):
        # a certificate would bound the exact cost, so none can exist
        return None, costs
    return verify_scogce(game, profile, deltas, opts.eps, opts.verify_gammas,
                         opts.x0_free_alpha, opts.backend), costs


def run_sequential(game: GameDefinition, cost_profile: CostProfile, options: RunOptions | None = None,
                   initial_profile: StrategyProfile | None = None, callback=None) -> EquilibriumRun:
    """Sequential guaranteed cost response loop.

    Each round first tries to verify the current profile; if that fails,
    the current player attempts a response.  A response counts only if the
    player's exact worst-case cost after the update is below its delta.
    The run stops when verification succeeds, after N consecutive failed
    responses, or after `max_rounds` rounds.
    """
    opts = options or RunOptions()
    if opts.mode == "state_feedback" and not game.is_state_feedback():
        raise ValueError("state-feedback mode needs C_i = I for every player")
    t0 = time.perf_counter()
    N = game.n_players
    max_rounds = opts.max_rounds or 50 * N
    deltas = cost_profile
    profile = initial_profile or initialize_stabilizing(
        game, opts.init_margin, opts.init_gain_bound, opts.eps, opts.mode, opts.backend)
    respond = sf_response if opts.mode == "state_feedback" else of_response
    rng = np.random.default_rng(opts.seed)
    order = list(range(N))
    i, j = 0, 0
    history, traces = [], []
    status = "iteration_limit"
    ver = None
    costs = worst_case_costs_or_inf(game, profile, opts.x0_free_alpha)
    r = 0
    for r in range(1, max_rounds + 1):
        ver, costs = _verify(game, profile, deltas, opts)
        if ver is not None and ver.success:
            status = "scogce_found"
            break
        ver = None
        if opts.random_order and i == 0:
            order = list(rng.permutation(N))
        player = order[i]
        resp = respond(game, player, profile, deltas[player], eps=opts.eps,
                       tol_boundary=opts.tol_boundary, max_iter=opts.max_iter,
                       gammas=opts.synth_gammas, x0_free_alpha=opts.x0_free_alpha,
                       retries=opts.retries, backend=opts.backend)
        traces.extend(resp.traces)
        ok = False
        if resp.success:
            cand = profile.replace(player, resp.gain)
            new = worst_case_costs_or_inf(game, cand, opts.x0_free_alpha)
            if new[player] < deltas[player]:
                profile, costs, ok = cand, new, True
        rec = RoundRecord(r, player, ok, resp.info, list(map(float, costs)), resp.wall_time)
        history.append(rec)
        if callback is not None:
            callback(rec)
        log.debug("round %d player %d %s %s", r, player, resp.info, np.round(costs, 4))
        j = 0 if ok else j + 1
        if j >= N:
            status = "stopped_all_players_failed"
            break
        i = (i + 1) % N
    else:
        # the last response may have completed the equilibrium
        ver, costs = _verify(game, profile, deltas, opts)
        if ver is not None and ver.success:
            status = "scogce_found"
    bundle = ver.bundle if (ver is not None and ver.success) else None
    return EquilibriumRun(status, profile, bundle, history, r, deltas, np.asarray(costs),
                          traces, ver, time.perf_counter() - t0)


# ---------------------------------------------------------------------------
# cooperative cost and PoS

@dataclass
class CooperativeResult:
    value: float
    mode: str
    p: np.ndarray | None = None
    gain: np.ndarray | None = None
    details: dict = field(default_factory=dict)


def team_game(game: GameDefinition) -> GameDefinition:
    """Single-player view: joint input, stacked output, summed disturbance weight."""
    return GameDefinition(
        a=game.a, b=(np.hstack(game.b),), c=(np.vstack(game.c),), e=game.e,
        q_weight=(sla.block_diag(*game.q_weight),), r_weight=(sla.block_diag(*game.r_weight),),
        d_weight=(sum(game.d_weight),), x0=game.x0)


def _block_structure(game: GameDefinition):
    out, r0, c0 = [], 0, 0
    for i in range(game.n_players):
        m, s = game.input_dim(i), game.output_dim(i)
        out.append((slice(r0, r0 + m), slice(c0, c0 + s)))
        r0, c0 = r0 + m, c0 + s
    return out


def _full_information(game: GameDefinition) -> CooperativeResult:
    tg = team_game(game)
    b, r = tg.b[0], tg.r_weight[0]
    s = b @ np.linalg.solve(r, b.T)
    q = sum(game.q_state(i) for i in range(game.n_players))
    g = disturbance_gram(tg, 0)
    sol = solve_soft_riccati(game.a, q, g - s, require_stable=False)
    k = -np.linalg.solve(r, b.T @ sol.p)
    a_u = game.a + b @ k
    ok_u = spectral_abscissa(a_u) < 0
    if not (sol.stabilizing and ok_u):
        raise RiccatiError("joint soft Riccati equation has no stabilizing solution")
    return CooperativeResult(float(game.x0 @ sol.p @ game.x0), "full_information", sol.p, k,
                             {"residual_norm": sol.residual_norm,
                              "loop_abscissa": spectral_abscissa(a_u),
                              "disturbed_loop_abscissa": sol.abscissa})


def _team_cost(game: GameDefinition, f_joint: np.ndarray) -> float:
    tg = team_game(game)
    prof = StrategyProfile((f_joint,))
    try:
        return float(exact_worst_case_costs(tg, prof).costs[0])
    except NotStableError:
        return np.inf


def _structured(game: GameDefinition, tol: float = 1e-3, max_steps: int = 40,
                opts: RunOptions | None = None) -> CooperativeResult:
    opts = opts or RunOptions()
    tg = team_game(game)
    structure = _block_structure(game)
    fi = lo = _full_information(game).value
    init = initialize_stabilizing(game, opts.init_margin, opts.init_gain_bound, opts.eps,
                                  backend=opts.backend)
    best_f = sla.block_diag(*init.gains)
    hi = _team_cost(game, best_f)
    zero = StrategyProfile.zeros(tg)
    steps = 0
    log_rows = []
    while steps < max_steps and np.isfinite(hi) and hi - lo > tol * abs(hi):
        steps += 1
        mid = 0.5 * (lo + hi)
        resp = of_response(tg, 0, zero, mid, eps=opts.eps, tol_boundary=opts.tol_boundary,
                           max_iter=opts.max_iter, gammas=opts.synth_gammas,
                           retries=opts.retries, structure=structure, backend=opts.backend)
        val = _team_cost(game, resp.gain) if resp.success else np.inf
        log_rows.append((mid, resp.info, val))
        if val < hi:
            hi, best_f = val, resp.gain
            # a failed level is not a true lower bound
            if hi < lo:
                lo = fi
        else:
            lo = mid
    if not np.isfinite(hi):
        raise RiccatiError("no structured profile with finite team worst-case cost")
    return CooperativeResult(hi, "structured_bisection", None, best_f,
                             {"lower_bound": fi, "last_failed_level": lo, "steps": steps, "log": log_rows})


def cooperative_cost(game: GameDefinition, mode: str = "full_information", **kw) -> CooperativeResult:
    """Minimal total worst-case cost under cooperation.

    ``full_information``: one decision maker with the joint input, the
    total weights and D_tot = sum D_i (soft Riccati equation of the joint
    min-max problem).  ``structured_bisection``: bisection on the team
    bound over block-diagonal output-feedback gains; returns the least
    certified (exactly evaluated) team cost found.
    """
    if mode == "full_information":
        return _full_information(game)
    if mode == "structured_bisection":
        return _structured(game, **kw)
    raise ValueError(f"unknown cooperative mode {mode!r}")


def price_of_stability(game: GameDefinition, profile: StrategyProfile,
                       cooperative: float | CooperativeResult | None = None) -> float:
    """Sum of exact worst-case costs over the cooperative cost."""
    if cooperative is None:
        cooperative = cooperative_cost(game)
    coop = cooperative.value if isinstance(cooperative, CooperativeResult) else float(cooperative)
    if not coop > 0:
        raise ValueError("cooperative cost must be positive")
    return float(np.sum(exact_worst_case_costs(game, profile).costs) / coop)


# ---------------------------------------------------------------------------
# sweeps

_RANGE = re.compile(r"^\s*([A-Za-z]\w*)\s*=\s*([-+0-9.eE]+)\s*:\s*([-+0-9.eE]+)\s*:\s*([-+0-9.eE]+)\s*$")
_VALUE = re.compile(r"^\s*([A-Za-z]\w*)\s*=\s*([-+0-9.eE]+)\s*$")
_TIE = re.compile(r"^\s*d(\d+)\s*=\s*d(\d+)\s*$")


def _axis(start, stop, step):
    if step <= 0:
        raise ValueError("grid step must be positive")
    k = int(np.floor((stop - start) / step + 1e-9))
    return np.round(start + step * np.arange(k + 1), 12)


def parse_grid(spec: str, n_players: int, ties: list[str] | str | None = None) -> tuple[list, list]:
    """Expand a grid spec into cost profiles.

    ``"delta=1.1:6:0.05"`` sets every player to the same value;
    ``"d1=0.07:1.25:0.01,d2=0.15:1.45:0.01"`` gives per-player axes
    (1-based), ``dK=v`` a constant.  `ties` such as ``"d3=d1"`` copy one
    player's value to another.  Returns (axis names, list of CostProfile).
    """
    axes: dict[str, np.ndarray] = {}
    for part in [p for p in re.split(r"[;,]", spec) if p.strip()]:
        m = _RANGE.match(part)
        if m:
            axes[m.group(1)] = _axis(float(m.group(2)), float(m.group(3)), float(m.group(4)))
            continue
        m = _VALUE.match(part)
        if m:
            axes[m.group(1)] = np.array([float(m.group(2))])
            continue
        raise ValueError(f"bad grid component {part!r}")
    tie_map = {}
    if isinstance(ties, str):
        ties = [ties]
    for t in ties or []:
        for part in re.split(r"[;,]", t):
            if not part.strip():
                continue
            m = _TIE.match(part)
            if not m:
                raise ValueError(f"bad tie {part!r}")
            a, b = int(m.group(1)) - 1, int(m.group(2)) - 1
            # "d1=d3": whichever side has an axis drives the other
            if f"d{a + 1}" in axes:
                tie_map[b] = a
            else:
                tie_map[a] = b
    names = list(axes)
    points = []
    for combo in itertools.product(*(axes[k] for k in names)):
        vals: list = [None] * n_players
        for name, v in zip(names, combo):
            if name == "delta":
                vals = [float(v)] * n_players
            elif re.fullmatch(r"d\d+", name):
                k = int(name[1:]) - 1
                if not 0 <= k < n_players:
                    raise ValueError(f"grid axis {name} out of range")
                vals[k] = float(v)
            else:
                raise ValueError(f"unknown grid axis {name!r}")
        for dst, src in tie_map.items():
            vals[dst] = vals[src]
        if any(v is None for v in vals):
            raise ValueError("grid spec leaves some player without a delta")
        points.append(CostProfile(tuple(vals)))
    return names, points


@dataclass
class SweepPoint:
    deltas: tuple
    status: str
    rounds: int
    costs: list
    pos: float | None
    gains: list | None
    bundle: dict | None
    wall_time: float


@dataclass
class SweepResult:
    grid: list
    outcomes: list
    resolution: float | None = None
    cooperative: float | None = None

    def found(self):
        return [o for o in self.outcomes if o.status == "scogce_found"]

    def to_csv(self, path) -> None:
        N = len(self.grid[0].deltas) if self.grid else 0
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow([f"delta{i + 1}" for i in range(N)] + ["status", "rounds"]
                       + [f"J{i + 1}" for i in range(N)] + ["pos", "wall_time"])
            for o in self.outcomes:
                w.writerow([repr(d) for d in o.deltas] + [o.status, o.rounds]
                           + ["" if c is None else repr(c) for c in o.costs]
                           + ["" if o.pos is None else repr(o.pos), f"{o.wall_time:.3f}"])


def read_sweep_csv(path) -> list[dict]:
    """Rows of a sweep CSV as dicts with deltas, status, rounds, costs, pos, wall_time."""
    out = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            d = sorted((k for k in row if re.fullmatch(r"delta\d+", k)), key=lambda k: int(k[5:]))
            j = sorted((k for k in row if re.fullmatch(r"J\d+", k)), key=lambda k: int(k[1:]))
            out.append({"deltas": tuple(float(row[k]) for k in d), "status": row["status"],
                        "rounds": int(row["rounds"]),
                        "costs": [float(row[k]) if row[k] else None for k in j],
                        "pos": float(row["pos"]) if row["pos"] else None,
                        "wall_time": float(row["wall_time"])})
    return out


def _sweep_one(args):
    game, deltas, opts, coop = args
    t0 = time.perf_counter()
    try:
        run = run_sequential(game, deltas, opts)
    except InitializationError as exc:
        return SweepPoint(deltas.deltas, "init_failed", 0, [None] * game.n_players, None, None, None,
                          time.perf_counter() - t0)
    costs = [float(c) if np.isfinite(c) else None for c in run.costs]
    pos = None
    if run.found and coop:
        pos = float(np.sum(run.costs) / coop)
    return SweepPoint(deltas.deltas, run.status, run.rounds, costs, pos,
                      run.profile.to_list() if run.found else None,
                      run.certificates.to_dict() if run.certificates else None,
                      time.perf_counter() - t0)


def delta_sweep(game: GameDefinition, grid, options: RunOptions | None = None, workers: int = 1,
                cooperative: float | None = None, progress=None) -> SweepResult:
    """Run the sequential algorithm at every grid point.

    `grid` is a list of CostProfile or a (spec, ties) pair for parse_grid.
    Points are independent and are distributed over `workers` processes.
    """
    opts = options or RunOptions()
    if isinstance(grid, tuple):
        grid = parse_grid(grid[0], game.n_players, grid[1])[1]
    if cooperative is None:
        try:
            cooperative = cooperative_cost(game).value
        except RiccatiError:
            cooperative = None
    jobs = [(game, d, opts, cooperative) for d in grid]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            outcomes = list(ex.map(_sweep_one, jobs))
    else:
        outcomes = []
        for job in jobs:
            outcomes.append(_sweep_one(job))
            if progress is not None:
                progress(outcomes[-1])
    res = None
    if len(grid) > 1:
        diffs = np.abs(np.diff([g.as_array() for g in grid], axis=0))
        nz = diffs[diffs > 1e-12]
        res = float(nz.min()) if nz.size else None
    return SweepResult(list(grid), outcomes, res, cooperative)


def sweep_monotonicity(game: GameDefinition, sweep: SweepResult) -> tuple[bool, int]:
    """Certificate reuse: every found bundle must verify at all larger grid points.

    Returns (all checks passed, number of checks).
    """
    n_checks = 0
    ok = True
    for o in sweep.found():
        prof = StrategyProfile(tuple(np.array(g) for g in o.gains))
        bundle = CertificateBundle.from_dict(o.bundle)
        base = np.array(o.deltas)
        for g in sweep.grid:
            if np.all(g.as_array() >= base - 1e-12):
                n_checks += 1
                if not check_bundle(game, prof, bundle, g):
                    ok = False
    return ok, n_checks
