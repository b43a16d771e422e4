"""Guaranteed cost equilibria for soft-constrained LQ differential games.

Players use static output feedback u_i = F_i C_i x against a common
finite-energy disturbance.  The package verifies and synthesizes profiles
whose worst-case costs stay below given thresholds, computes Nash
(state-feedback) and cooperative benchmarks, and simulates closed loops.
"""
from importlib import resources

from .certify import (CertificateBundle, exact_worst_case_costs, sample_disturbance_suprematy,
                      verify_scogce, worst_case_costs_or_inf)
from .equilibrium import (EquilibriumRun, RunOptions, cooperative_cost, delta_sweep,
                          initialize_stabilizing, price_of_stability, run_sequential)
from .game import (CostProfile, GameDefinition, StrategyProfile, load_game, load_game_file,
                   save_game, validate_game)
from .linalg import solve_scfne, solve_soft_riccati
from .simulate import simulate
from .synth_of import of_response
from .synth_sf import sf_response

__version__ = "0.1.0"

FIXTURES = ("example1", "example2", "example3", "example4", "scalar")


def fixture_path(name: str):
    """Path of a bundled game file, e.g. ``fixture_path("example3")``."""
    stem = name[:-5] if name.endswith(".json") else name
    if stem not in FIXTURES:
        raise KeyError(f"no fixture named {name!r}")
    return resources.files(__name__).joinpath("fixtures", stem + ".json")


def load_fixture(name: str):
    """(game, deltas or None, options) for a bundled fixture."""
    return load_game_file(fixture_path(name))
