"""Command line interface.

Every subcommand reads a game JSON file and writes JSON/CSV artifacts to
the output directory (``--out``, default ``scogce_out``).  Exit codes:
0 success (including "not found" outcomes, which are reported in the
artifacts), 1 usage error, 2 invalid game, 3 solver-level abort.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import FIXTURES, fixture_path
from .certify import (GAMMA_GRID, exact_worst_case_costs, verify_scogce)
from .equilibrium import (InitializationError, RunOptions, cooperative_cost, delta_sweep,
                          parse_grid, price_of_stability, run_sequential, sweep_monotonicity)
from .game import (CostProfile, StrategyProfile, load_game_file, structural_warnings,
                   validate_game)
from .linalg import NotStableError, RiccatiError, solve_scfne
from .simulate import consensus_matrices, parse_disturbance, simulate

log = logging.getLogger("scogce")

EXIT_OK, EXIT_USAGE, EXIT_INVALID, EXIT_SOLVER = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return _jsonable(x.tolist())
    if isinstance(x, (np.floating, float)):
        return float(x) if np.isfinite(x) else None
    if isinstance(x, np.integer):
        return int(x)
    if isinstance(x, np.bool_):
        return bool(x)
    return x


def _write(out: Path, name: str, obj) -> Path:
    out.mkdir(parents=True, exist_ok=True)
    path = out / name
    path.write_text(json.dumps(_jsonable(obj), indent=1))
    return path


def _resolve(path: str) -> Path:
    p = Path(path)
    if p.exists():
        return p
    # "fixtures/example3.json" also finds the bundled copy
    stem = p.name[:-5] if p.name.endswith(".json") else p.name
    if stem in FIXTURES:
        return Path(str(fixture_path(stem)))
    raise UsageError(f"no such game file: {path}")


def _floats(text: str) -> list[float]:
    try:
        return [float(v) for v in text.replace(";", ",").split(",") if v.strip()]
    except ValueError:
        raise UsageError(f"expected comma-separated numbers, got {text!r}") from None


def _deltas(args, game, file_deltas) -> CostProfile:
    if getattr(args, "deltas", None):
        vals = _floats(args.deltas)
        if len(vals) == 1:
            vals = vals * game.n_players
        if len(vals) != game.n_players:
            raise UsageError(f"--deltas needs {game.n_players} values")
        return CostProfile(tuple(vals))
    if file_deltas is None:
        raise UsageError("no cost profile: pass --deltas or put 'deltas' in the game file")
    return file_deltas


def _profile(spec: str, game, options) -> StrategyProfile:
    """zero | scfne | reference | path to a JSON file with "gains"."""
    if spec == "zero":
        return StrategyProfile.zeros(game)
    if spec == "scfne":
        if not game.is_state_feedback():
            raise UsageError("the scfne profile needs C_i = I for every player")
        res = solve_scfne(game)
        if not res.converged:
            raise RiccatiError(f"coupled Riccati iteration failed: {res.message}")
        return StrategyProfile(tuple(res.gains), "state_feedback")
    if spec == "reference":
        if "reference_gains" not in options:
            raise UsageError("game file has no reference_gains")
        return StrategyProfile(tuple(np.array(f, dtype=float) for f in options["reference_gains"]))
    path = Path(spec)
    if not path.exists():
        raise UsageError(f"unknown profile {spec!r}")
    data = json.loads(path.read_text())
    gains = data["gains"] if isinstance(data, dict) else data
    return StrategyProfile(tuple(np.atleast_2d(np.array(f, dtype=float)) for f in gains),
                           data.get("mode", "output_feedback") if isinstance(data, dict) else "output_feedback")


def _run_options(args) -> RunOptions:
    opts = RunOptions()
    if getattr(args, "state_feedback", False):
        opts.mode = "state_feedback"
    if getattr(args, "eps", None) is not None:
        opts.eps = args.eps
    if getattr(args, "gamma_grid", None):
        opts.synth_gammas = tuple(_floats(args.gamma_grid))
    if getattr(args, "max_rounds", None) is not None:
        opts.max_rounds = args.max_rounds
    if getattr(args, "seed", None) is not None:
        opts.seed, opts.random_order = args.seed, True
    if getattr(args, "x0_free", None) is not None:
        opts.x0_free_alpha = args.x0_free
    return opts


# ---------------------------------------------------------------------------
# subcommands

def cmd_validate(args, game, deltas, options, out):
    violations = validate_game(game)
    _write(out, "validate.json", {"violations": violations, "warnings": structural_warnings(game),
                                  "n_players": game.n_players, "state_dim": game.state_dim})
    for v in violations:
        print("violation:", v)
    if not violations:
        print("valid")
    return EXIT_OK if not violations else EXIT_INVALID


def cmd_verify(args, game, deltas, options, out):
    prof = _profile(args.profile, game, options)
    cost = _deltas(args, game, deltas)
    gammas = tuple(_floats(args.gamma_grid)) if args.gamma_grid else GAMMA_GRID
    res = verify_scogce(game, prof, cost, args.eps, gammas, args.x0_free)
    report = res.to_dict() | {"deltas": list(cost.deltas)}
    try:
        report["exact"] = exact_worst_case_costs(game, prof).to_dict()
    except NotStableError as exc:
        report["exact"] = {"error": str(exc)}
    _write(out, "verify.json", report)
    print("verified" if res.success else "not verified: " + "; ".join(res.failures))
    return EXIT_OK


def cmd_synthesize(args, game, deltas, options, out):
    cost = _deltas(args, game, deltas)
    opts = _run_options(args)
    run = run_sequential(game, cost, opts)
    _write(out, "synthesize.json", run.to_dict() | {"options": opts.to_dict()})
    for k, tr in enumerate(run.traces):
        tr.to_csv(out / f"nslpmm_trace_{k:03d}.csv")
    print(f"{run.status} after {run.rounds} rounds; costs {np.round(run.costs, 6).tolist()}")
    return EXIT_OK


def cmd_scfne(args, game, deltas, options, out):
    res = solve_scfne(game)
    rep = res.report
    _write(out, "scfne.json", {
        "converged": res.converged, "sweeps": res.sweeps, "costs": res.costs,
        "total": res.total_cost, "gains": res.gains, "P": res.p, "message": res.message,
        "stability_flags": rep.flags if rep else None,
        "abscissae": rep.abscissae if rep else None})
    print(f"{'converged' if res.converged else 'not converged'}: costs {np.round(res.costs, 6).tolist()}"
          f" total {res.total_cost:.6f}")
    return EXIT_OK


def cmd_cooperative(args, game, deltas, options, out):
    res = cooperative_cost(game, args.mode)
    _write(out, "cooperative_cost.json", {"mode": res.mode, "value": res.value, "gain": res.gain,
                                          "details": {k: v for k, v in res.details.items()}})
    print(f"J_co = {res.value:.6f} ({res.mode})")
    return EXIT_OK


def cmd_pos(args, game, deltas, options, out):
    prof = _profile(args.profile, game, options)
    coop = cooperative_cost(game, args.mode)
    pos = price_of_stability(game, prof, coop)
    costs = exact_worst_case_costs(game, prof).costs
    _write(out, "pos.json", {"pos": pos, "costs": costs, "total": float(np.sum(costs)),
                             "cooperative_cost": coop.value, "mode": coop.mode,
                             "profile": args.profile})
    print(f"PoS = {pos:.6f}")
    return EXIT_OK


def cmd_sweep(args, game, deltas, options, out):
    opts = _run_options(args)
    spec = args.grid or options.get("grid")
    if not spec:
        raise UsageError("--grid is required")
    ties = args.tie if args.tie is not None else options.get("tie")
    try:
        names, grid = parse_grid(spec, game.n_players, ties)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    res = delta_sweep(game, grid, opts, args.workers,
                      progress=(lambda o: print(o.deltas, o.status, flush=True)) if args.verbose else None)
    out.mkdir(parents=True, exist_ok=True)
    res.to_csv(out / "sweep.csv")
    mono_ok, n_checks = sweep_monotonicity(game, res)
    _write(out, "sweep.json", {"grid": spec, "ties": ties, "axes": names, "resolution": res.resolution,
                               "cooperative_cost": res.cooperative, "found": len(res.found()),
                               "points": len(grid), "monotonicity": {"ok": mono_ok, "checks": n_checks},
                               "options": opts.to_dict()})
    print(f"{len(res.found())}/{len(grid)} grid points with an equilibrium; certificate reuse "
          f"{'ok' if mono_ok else 'VIOLATED'} ({n_checks} checks)")
    return EXIT_OK


def cmd_simulate(args, game, deltas, options, out):
    prof = _profile(args.profile, game, options)
    report = None
    if args.disturbance.startswith("worst_case"):
        report = exact_worst_case_costs(game, prof)
    src = args.disturbance
    if src == "default":
        src = options.get("disturbance", "zero")
    try:
        dist = parse_disturbance(src, report)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    sim = simulate(game, prof, dist, args.t_final, args.dt, consensus_matrices(options))
    out.mkdir(parents=True, exist_ok=True)
    sim.to_csv(out / "trajectory.csv")
    summary = {"disturbance": src, "final_costs": sim.final_costs, "blowup_time": sim.blowup_time,
               "t_final": float(sim.time_grid[-1]), "steps": len(sim.time_grid) - 1}
    if sim.errors:
        en = sim.error_norms()
        summary["max_error_after"] = {str(t): float(en[sim.time_grid >= t].max())
                                      for t in (1.0, 4.0, 8.0) if t <= sim.time_grid[-1]}
    if report is not None:
        summary["exact_costs"] = report.costs
    _write(out, "simulate.json", summary)
    print(f"final costs {np.round(sim.final_costs, 6).tolist()}")
    if sim.blowup_time is not None:
        print(f"state became nonfinite at t = {sim.blowup_time:g}")
    return EXIT_OK


# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="scogce", description="Guaranteed cost equilibria of soft-constrained LQ games.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def cmd(name, func, help_):
        s = sub.add_parser(name, help=help_)
        s.add_argument("game", help="game JSON file")
        s.add_argument("--out", default="scogce_out", help="output directory")
        s.set_defaults(func=func)
        return s

    def synth_flags(s):
        s.add_argument("--state-feedback", action="store_true", help="use the state-feedback response")
        s.add_argument("--eps", type=float, default=None)
        s.add_argument("--gamma-grid", default=None, help="comma-separated gamma values")
        s.add_argument("--max-rounds", type=int, default=None)
        s.add_argument("--seed", type=int, default=None, help="randomize the player order")
        s.add_argument("--x0-free", type=float, default=None, metavar="ALPHA",
                       help="bound the cost over all x0 with x0'x0 <= ALPHA")

    cmd("validate", cmd_validate, "check dimensions and structural assumptions")
    s = cmd("verify", cmd_verify, "certify a profile against a cost profile")
    s.add_argument("--profile", default="zero", help="zero | scfne | reference | gains JSON")
    s.add_argument("--deltas", default=None)
    s.add_argument("--eps", type=float, default=1e-6)
    s.add_argument("--gamma-grid", default=None)
    s.add_argument("--x0-free", type=float, default=None, metavar="ALPHA")
    s = cmd("synthesize", cmd_synthesize, "sequential guaranteed cost response")
    s.add_argument("--deltas", default=None)
    synth_flags(s)
    cmd("scfne", cmd_scfne, "state-feedback Nash equilibrium (coupled Riccati)")
    s = cmd("cooperative-cost", cmd_cooperative, "minimal total worst-case cost")
    s.add_argument("--mode", choices=["full_information", "structured_bisection"],
                   default="full_information")
    s = cmd("pos", cmd_pos, "price of stability of a profile")
    s.add_argument("--profile", default="scfne")
    s.add_argument("--mode", choices=["full_information", "structured_bisection"],
                   default="full_information")
    s = cmd("sweep", cmd_sweep, "run the synthesis over a grid of cost profiles")
    s.add_argument("--grid", default=None, help='e.g. "delta=1.1:6:0.05" or "d1=a:b:s,d2=a:b:s"')
    s.add_argument("--tie", action="append", default=None, help='e.g. "d3=d1"')
    s.add_argument("--workers", type=int, default=1)
    synth_flags(s)
    s = cmd("simulate", cmd_simulate, "RK4 closed-loop simulation")
    s.add_argument("--profile", default="zero")
    s.add_argument("--disturbance", default="default",
                   help="zero | worst_case:I | file:PATH | expr:EXPR | default (from the game file)")
    s.add_argument("--t-final", type=float, default=None)
    s.add_argument("--dt", type=float, default=None)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:        # --help or a usage error
        return exc.code
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        path = _resolve(args.game)
        try:
            game, deltas, options = load_game_file(path)
        except (ValueError, json.JSONDecodeError) as exc:
            print(f"invalid game file: {exc}", file=sys.stderr)
            return EXIT_INVALID
        if args.command != "validate":
            violations = validate_game(game)
            if violations:
                for v in violations:
                    print("violation:", v, file=sys.stderr)
                return EXIT_INVALID
        return args.func(args, game, deltas, options, Path(args.out))
    except UsageError as exc:
        print(f"scogce: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (RiccatiError, NotStableError, InitializationError, np.linalg.LinAlgError) as exc:
        print(f"scogce: solver abort: {exc}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
