"""Layered graph traversal by mirror descent on an evolving tree.

The package has three layers:

* the evolving-tree game (``tree``, ``state``, ``dynamics``): the adversary
  mutates a weighted tree while the algorithm maintains a distribution over
  its leaves by mirror descent with an entropic regularizer;
* runtime certificates (``potential``): the competitive analysis turned
  into per-step numeric inequalities over a recorded game trace;
* the layered-graph front end (``layered``, ``harness``): instances,
  binary conversion, the reduction driver, rounding to random walks,
  generators, baselines, and the CLI.
"""

from .tree import EvolvingTree, DeleteOutcome, new_game_tree
from .state import (
    FractionalState,
    init_state,
    validate,
    apply_fork,
    project_after_delete,
    movement_cost,
    repair_conservation,
)
from .dynamics import (
    IntegratorConfig,
    Game,
    GameTrace,
    CostLedger,
    solve_multipliers,
    subtree_rates,
    integrate_growth,
    deadend_drain,
    run_script,
)

__all__ = [
    "EvolvingTree",
    "DeleteOutcome",
    "new_game_tree",
    "FractionalState",
    "init_state",
    "validate",
    "apply_fork",
    "project_after_delete",
    "movement_cost",
    "repair_conservation",
    "IntegratorConfig",
    "Game",
    "GameTrace",
    "CostLedger",
    "solve_multipliers",
    "subtree_rates",
    "integrate_growth",
    "deadend_drain",
    "run_script",
]

__version__ = "0.1.0"
