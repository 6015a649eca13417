"""Mirror-descent evolution of the fractional state.

The flow during a continuous step is

    x'_u = [ -2 x_u w~'_u + (x_u + delta_u) (lam_parent - lam_u) ] / w~_u

with lam = 0 at leaves and lam chosen (exactly, by affine elimination along
the tree) so conservation is preserved.  ``integrate_growth`` advances the
flow while one leaf edge grows at unit rate and meters service and movement
cost; ``deadend_drain`` runs the same flow with a virtual, exponentially
escalating revised weight on a doomed leaf until its mass is gone.

``Game`` owns one evolving-tree game end to end and records a replayable
trace; ``run_script`` drives it from an adversary script.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Iterable

import numpy as np

from . import _kernel
from .errors import DrainFailure, InputError, IntegrationFailure, InvalidParameter, RejectedStep
from .state import FractionalState, init_state, apply_fork, project_after_delete
from .tree import ROOT, DeleteOutcome, EvolvingTree, new_game_tree

MultiplierVector = dict[int, float]


@dataclass
class IntegratorConfig:
    """Tunables for the continuous-step integrator and the deadend drain."""

    max_relative_step: float = 1e-3
    min_dt: float = 1e-15
    drain_tolerance: float = 1e-10
    conservation_tol: float = 1e-9
    samples_per_step: int = 33
    stiff_step_fraction: float = 0.05
    spectator_floor: float = 1e-10
    max_steps_per_op: int = 2_000_000
    max_drain_doublings: float = 250.0

    def __post_init__(self):
        for name in (
            "max_relative_step",
            "min_dt",
            "drain_tolerance",
            "conservation_tol",
            "stiff_step_fraction",
            "spectator_floor",
            "max_drain_doublings",
        ):
            if getattr(self, name) <= 0.0:
                raise InvalidParameter(f"IntegratorConfig.{name} must be positive")
        if self.samples_per_step < 2 or self.max_steps_per_op < 1:
            raise InvalidParameter("sample and step budgets must be positive")

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}

    @classmethod
    def from_dict(cls, data: dict) -> "IntegratorConfig":
        return cls(**data)


# ----------------------------------------------------------------------
# multiplier solve (reference implementation over the tree structure)
# ----------------------------------------------------------------------


def solve_multipliers(
    tree: EvolvingTree,
    x: FractionalState,
    growing_leaf: int,
    w_tilde: dict[int, float] | None = None,
    delta: dict[int, float] | None = None,
    growth_rate: float | None = None,
) -> MultiplierVector:
    """Multipliers that keep the flow inside the polytope, for all nodes.

    Solved bottom-up: each internal lam_u is expressed as a_u + b_u *
    lam_parent, the root equation (x'_{c_r} = 0) pins lam_r, and one
    top-down pass back-substitutes.  O(|V|) per call; the system is never
    singular because w~ > 0 and x + delta > 0.
    """
    if not tree.is_leaf(growing_leaf):
        raise RejectedStep(f"growing node {growing_leaf} is not a leaf")
    wt = tree.revised_weights() if w_tilde is None else w_tilde
    dl = tree.shift_vector() if delta is None else delta
    if growth_rate is None:
        h = tree.depth(growing_leaf)
        growth_rate = (2 * tree.k - 1) / (2 * tree.k - h)

    order = _children_first_order(tree)
    c = {}
    g = {}
    for u in order:
        c[u] = (x[u] + dl[u]) / wt[u]
        g[u] = -2.0 * x[u] * growth_rate / wt[u] if u == growing_leaf else 0.0

    # cancellation-free elimination shapes (see the kernel for why): the
    # revised weights may differ by dozens of orders of magnitude
    s_alpha = {u: 0.0 for u in order}
    s_beta = {u: 0.0 for u in order}
    root_alpha = root_beta = 0.0
    for u in order:
        if tree.is_leaf(u):
            al, be = g[u], c[u]
        else:
            denom = s_beta[u] + c[u]
            al = (g[u] * s_beta[u] + c[u] * s_alpha[u]) / denom
            be = c[u] * s_beta[u] / denom
        p = tree.parent(u)
        if p == ROOT:
            root_alpha, root_beta = al, be
        else:
            s_alpha[p] += al
            s_beta[p] += be

    lam = {ROOT: -root_alpha / root_beta}
    for u in reversed(order):
        if tree.is_leaf(u):
            lam[u] = 0.0
        else:
            lam_p = lam[tree.parent(u)]
            diff = (s_beta[u] * lam_p - g[u] + s_alpha[u]) / (s_beta[u] + c[u])
            lam[u] = lam_p - diff
    return lam


def subtree_rates(
    tree: EvolvingTree,
    x: FractionalState,
    growing_leaf: int,
    lam: MultiplierVector,
    w_tilde: dict[int, float] | None = None,
    delta: dict[int, float] | None = None,
    growth_rate: float | None = None,
) -> dict[int, float]:
    """Evaluate x' from the flow equation for given multipliers."""
    wt = tree.revised_weights() if w_tilde is None else w_tilde
    dl = tree.shift_vector() if delta is None else delta
    if growth_rate is None:
        h = tree.depth(growing_leaf)
        growth_rate = (2 * tree.k - 1) / (2 * tree.k - h)
    out = {}
    for u in tree.non_root_ids():
        wtp = growth_rate if u == growing_leaf else 0.0
        out[u] = (-2.0 * x[u] * wtp + (x[u] + dl[u]) * (lam[tree.parent(u)] - lam[u])) / wt[u]
    return out


def _children_first_order(tree: EvolvingTree) -> list[int]:
    order = []
    stack = [tree.c_r]
    while stack:
        u = stack.pop()
        order.append(u)
        stack.extend(tree.children(u))
    order.reverse()
    return order


# ----------------------------------------------------------------------
# kernel bridge
# ----------------------------------------------------------------------


class _Compiled:
    """Flat-array view of the tree for the integrator kernel."""

    def __init__(self, tree: EvolvingTree):
        ids = _children_first_order(tree)
        ids.reverse()  # parents before children (BFS-like)
        self.ids = ids
        self.pos = {u: i for i, u in enumerate(ids)}
        n = len(ids)
        self.parent = np.empty(n, dtype=np.int64)
        self.n_children = np.empty(n, dtype=np.int64)
        self.delta = np.empty(n)
        self.w_true = np.empty(n)
        self.wt = np.empty(n)
        self.coef = np.empty(n)
        depths = tree.depths()
        delta = tree.shift_vector()
        for i, u in enumerate(ids):
            p = tree.parent(u)
            self.parent[i] = -1 if p == ROOT else self.pos[p]
            self.n_children[i] = len(tree.children(u))
            self.delta[i] = delta[u]
            self.w_true[i] = tree.weight(u)
            self.coef[i] = (2 * tree.k - 1) / (2 * tree.k - depths[u])
            self.wt[i] = self.coef[i] * (tree.weight(u) + tree.birth_term(u))
        # children-before-parents positions for the elimination
        self.topo = np.arange(n - 1, -1, -1, dtype=np.int64)

    def pack_state(self, x: FractionalState) -> np.ndarray:
        return np.array([x[u] for u in self.ids])

    def unpack_state(self, arr: np.ndarray) -> FractionalState:
        return {u: float(arr[i]) for i, u in enumerate(self.ids)}


@dataclass
class Sample:
    """One sampled instant of a continuous step: state and multipliers."""

    t: float
    x: FractionalState
    lam: MultiplierVector

    def to_dict(self) -> dict:
        return {
            "t": self.t,
            "x": {str(u): v for u, v in self.x.items()},
            "lam": {str(u): v for u, v in self.lam.items()},
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Sample":
        return cls(
            t=float(d["t"]),
            x={int(u): float(v) for u, v in d["x"].items()},
            lam={int(u): float(v) for u, v in d["lam"].items()},
        )


@dataclass
class LedgerDelta:
    service: float = 0.0
    movement: float = 0.0

    @property
    def total(self) -> float:
        return self.service + self.movement


@dataclass
class KernelStats:
    min_lambda: float
    max_conservation_residual: float
    steps: int


def integrate_growth(
    tree: EvolvingTree,
    x: FractionalState,
    leaf: int,
    duration: float,
    cfg: IntegratorConfig | None = None,
    collect_samples: bool = True,
) -> tuple[FractionalState, LedgerDelta, list[Sample], KernelStats]:
    """Grow ``leaf``'s edge at unit rate for ``duration``, evolving x.

    Charges service (integral of the leaf's mass against the true weight
    rate) and movement (integral of true-weight-valued motion); the tree's
    edge weight is advanced by ``duration``.  Returns the new state, the
    cost delta, the sampled trajectory, and kernel statistics.
    """
    cfg = cfg or IntegratorConfig()
    if duration < 0.0:
        raise RejectedStep("continuous steps need a nonnegative duration")
    if not tree.is_leaf(leaf):
        raise RejectedStep(f"growing node {leaf} is not a leaf")
    comp = _Compiled(tree)
    xv = comp.pack_state(x)
    m = cfg.samples_per_step if collect_samples else 2
    sample_ts = np.linspace(0.0, duration, m) if duration > 0 else np.zeros(1)
    n = len(comp.ids)
    x_s = np.empty((len(sample_ts), n))
    lam_s = np.empty((len(sample_ts), n))
    lam_root_s = np.empty(len(sample_ts))
    t_s = np.empty(len(sample_ts))
    status, _, service, movement, steps, min_lam, max_resid, ns = _kernel.evolve(
        comp.parent, comp.topo, comp.n_children, comp.delta, comp.w_true,
        comp.wt, comp.coef, xv,
        comp.pos[leaf], _kernel.GROW_MODE, float(duration),
        cfg.max_relative_step, cfg.min_dt, cfg.stiff_step_fraction,
        cfg.spectator_floor, cfg.drain_tolerance, cfg.max_steps_per_op,
        sample_ts, x_s, lam_s, lam_root_s, t_s,
    )
    if status != _kernel.STATUS_OK:
        raise IntegrationFailure(
            f"growth integration exceeded its step budget ({steps} steps, leaf {leaf})"
        )
    tree.add_weight(leaf, duration)
    samples = []
    for i in range(ns):
        lam = {ROOT: float(lam_root_s[i])}
        for j, u in enumerate(comp.ids):
            lam[u] = float(lam_s[i, j])
        samples.append(Sample(t=float(t_s[i]), x=comp.unpack_state(x_s[i]), lam=lam))
    stats = KernelStats(float(min_lam), float(max_resid), int(steps))
    return comp.unpack_state(xv), LedgerDelta(service, movement), samples, stats


def deadend_drain(
    tree: EvolvingTree,
    x: FractionalState,
    leaf: int,
    cfg: IntegratorConfig | None = None,
) -> tuple[FractionalState, float, KernelStats]:
    """Push all mass off ``leaf`` before it is deleted.

    The leaf's revised weight is escalated virtually (doubling per unit of
    virtual time) while the flow runs; no service is charged and the true
    weight is frozen, so only the movement of mass is metered.  Residual
    mass below the drain tolerance is reassigned to sibling subtrees
    proportionally to x + delta and pushed down to the leaves.
    """
    cfg = cfg or IntegratorConfig()
    if not tree.is_leaf(leaf):
        raise RejectedStep(f"drain target {leaf} is not a leaf")
    if leaf == tree.c_r:
        raise RejectedStep("cannot drain the root's child")
    comp = _Compiled(tree)
    xv = comp.pack_state(x)
    empty = np.zeros(0)
    empty2 = np.zeros((0, len(comp.ids)))
    status, _, _, movement, steps, min_lam, max_resid, _ = _kernel.evolve(
        comp.parent, comp.topo, comp.n_children, comp.delta, comp.w_true,
        comp.wt, comp.coef, xv,
        comp.pos[leaf], _kernel.DRAIN_MODE, cfg.max_drain_doublings,
        cfg.max_relative_step, cfg.min_dt, cfg.stiff_step_fraction,
        cfg.spectator_floor, cfg.drain_tolerance, cfg.max_steps_per_op,
        empty, empty2, empty2, empty, empty,
    )
    if status != _kernel.STATUS_OK:
        raise DrainFailure(
            f"drain of leaf {leaf} did not converge (status {status}, {steps} steps, "
            f"residual {xv[comp.pos[leaf]]:.3e})"
        )
    x_bar = comp.unpack_state(xv)
    movement += _retire_residual(tree, x_bar, leaf)
    stats = KernelStats(float(min_lam), float(max_resid), int(steps))
    return x_bar, movement, stats


def _retire_residual(tree: EvolvingTree, x: FractionalState, leaf: int) -> float:
    """Zero the drained leaf and hand its residual to the sibling subtrees."""
    residual = x[leaf]
    x[leaf] = 0.0
    if residual <= 0.0:
        return 0.0
    delta = tree.shift_vector()
    p = tree.parent(leaf)
    siblings = [v for v in tree.children(p) if v != leaf]
    weights = {v: x[v] + delta[v] for v in siblings}
    total = sum(weights.values())
    moved = residual * tree.weight(leaf)
    queue = [(v, residual * weights[v] / total) for v in siblings]
    while queue:
        u, add = queue.pop()
        x[u] += add
        moved += add * tree.weight(u)
        kids = tree.children(u)
        if kids:
            wts = {v: x[v] + delta[v] for v in kids}
            tot = sum(wts.values())
            queue.extend((v, add * wts[v] / tot) for v in kids)
    return moved


# ----------------------------------------------------------------------
# game engine, trace, script runner
# ----------------------------------------------------------------------


@dataclass
class StepRecord:
    """Everything one adversary step did, enough to re-derive any quantity."""

    kind: str  # "grow" | "fork" | "delete"
    step_no: int
    tree_before: dict
    tree_after: dict
    x_before: FractionalState
    x_after: FractionalState
    service: float = 0.0
    movement: float = 0.0
    leaf: int | None = None
    duration: float | None = None
    samples: list[Sample] = field(default_factory=list)
    q: int | None = None
    children: list[int] | None = None
    x_drained: FractionalState | None = None
    merged: tuple[int, int] | None = None

    def to_dict(self) -> dict:
        def pack_x(x):
            return None if x is None else {str(u): v for u, v in x.items()}

        return {
            "kind": self.kind,
            "step_no": self.step_no,
            "tree_before": self.tree_before,
            "tree_after": self.tree_after,
            "x_before": pack_x(self.x_before),
            "x_after": pack_x(self.x_after),
            "service": self.service,
            "movement": self.movement,
            "leaf": self.leaf,
            "duration": self.duration,
            "samples": [s.to_dict() for s in self.samples],
            "q": self.q,
            "children": self.children,
            "x_drained": pack_x(self.x_drained),
            "merged": list(self.merged) if self.merged else None,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "StepRecord":
        def unpack_x(x):
            return None if x is None else {int(u): float(v) for u, v in x.items()}

        return cls(
            kind=d["kind"],
            step_no=int(d["step_no"]),
            tree_before=d["tree_before"],
            tree_after=d["tree_after"],
            x_before=unpack_x(d["x_before"]),
            x_after=unpack_x(d["x_after"]),
            service=float(d["service"]),
            movement=float(d["movement"]),
            leaf=d["leaf"],
            duration=d["duration"],
            samples=[Sample.from_dict(s) for s in d["samples"]],
            q=d["q"],
            children=d["children"],
            x_drained=unpack_x(d["x_drained"]),
            merged=tuple(d["merged"]) if d["merged"] else None,
        )


@dataclass
class CostLedger:
    """Service and movement cost, total and per step."""

    service: float = 0.0
    movement: float = 0.0
    per_step: list[tuple[int, str, float, float]] = field(default_factory=list)

    @property
    def total(self) -> float:
        return self.service + self.movement

    def charge(self, step_no: int, kind: str, service: float, movement: float) -> None:
        self.service += service
        self.movement += movement
        self.per_step.append((step_no, kind, service, movement))

    def to_dict(self) -> dict:
        return {
            "service": self.service,
            "movement": self.movement,
            "per_step": [list(row) for row in self.per_step],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CostLedger":
        return cls(
            service=float(d["service"]),
            movement=float(d["movement"]),
            per_step=[(int(a), b, float(c), float(e)) for a, b, c, e in d["per_step"]],
        )


@dataclass
class GameTrace:
    """Full replayable record of one evolving-tree game."""

    k: int
    epsilon: float
    config: IntegratorConfig
    records: list[StepRecord]
    ledger: CostLedger
    final_tree: dict
    d_max_seen: int
    min_lambda: float
    max_conservation_residual: float
    script: list[dict] = field(default_factory=list)

    @property
    def total_cost(self) -> float:
        return self.ledger.total

    def to_dict(self) -> dict:
        return {
            "k": self.k,
            "epsilon": self.epsilon,
            "config": self.config.to_dict(),
            "records": [r.to_dict() for r in self.records],
            "ledger": self.ledger.to_dict(),
            "final_tree": self.final_tree,
            "d_max_seen": self.d_max_seen,
            "min_lambda": self.min_lambda,
            "max_conservation_residual": self.max_conservation_residual,
            "script": self.script,
        }

    def to_json(self, indent: int | None = None) -> str:
        return json.dumps(self.to_dict(), indent=indent)

    @classmethod
    def from_dict(cls, d: dict) -> "GameTrace":
        return cls(
            k=int(d["k"]),
            epsilon=float(d["epsilon"]),
            config=IntegratorConfig.from_dict(d["config"]),
            records=[StepRecord.from_dict(r) for r in d["records"]],
            ledger=CostLedger.from_dict(d["ledger"]),
            final_tree=d["final_tree"],
            d_max_seen=int(d["d_max_seen"]),
            min_lambda=float(d["min_lambda"]),
            max_conservation_residual=float(d["max_conservation_residual"]),
            script=d.get("script", []),
        )

    @classmethod
    def from_json(cls, text: str) -> "GameTrace":
        return cls.from_dict(json.loads(text))


class Game:
    """One evolving-tree game: owns the tree, the state, and the trace."""

    def __init__(self, k: int, epsilon: float, cfg: IntegratorConfig | None = None):
        self.cfg = cfg or IntegratorConfig()
        self.tree = new_game_tree(k, epsilon)
        self.x = init_state(self.tree)
        self.ledger = CostLedger()
        self.records: list[StepRecord] = []
        self.script_steps: list[dict] = []
        self.min_lambda = math.inf
        self.max_resid = 0.0

    def grow(self, leaf: int, duration: float) -> StepRecord:
        step_no = self.tree.current_step
        before = self.tree.to_dict()
        x_before = dict(self.x)
        x_new, delta, samples, stats = integrate_growth(
            self.tree, self.x, leaf, duration, self.cfg
        )
        self.tree.advance_step()
        self._absorb(stats)
        self.x = x_new
        self.ledger.charge(step_no, "grow", delta.service, delta.movement)
        rec = StepRecord(
            kind="grow", step_no=step_no, tree_before=before, tree_after=self.tree.to_dict(),
            x_before=x_before, x_after=dict(self.x),
            service=delta.service, movement=delta.movement,
            leaf=leaf, duration=duration, samples=samples,
        )
        self.records.append(rec)
        self.script_steps.append({"op": "grow", "leaf": leaf, "duration": duration})
        return rec

    def fork(self, leaf: int, q: int) -> StepRecord:
        step_no = self.tree.current_step
        before = self.tree.to_dict()
        x_before = dict(self.x)
        children = self.tree.fork(leaf, q)
        self.x = apply_fork(self.x, leaf, children)
        self.ledger.charge(step_no, "fork", 0.0, 0.0)
        rec = StepRecord(
            kind="fork", step_no=step_no, tree_before=before, tree_after=self.tree.to_dict(),
            x_before=x_before, x_after=dict(self.x),
            leaf=leaf, q=q, children=children,
        )
        self.records.append(rec)
        self.script_steps.append({"op": "fork", "leaf": leaf, "q": q})
        return rec

    def delete(self, leaf: int) -> StepRecord:
        step_no = self.tree.current_step
        before = self.tree.to_dict()
        x_before = dict(self.x)
        x_bar, movement, stats = deadend_drain(self.tree, self.x, leaf, self.cfg)
        self._absorb(stats)
        outcome = self.tree.delete_leaf(leaf)
        self.x = project_after_delete(x_bar, outcome)
        self.ledger.charge(step_no, "delete", 0.0, movement)
        rec = StepRecord(
            kind="delete", step_no=step_no, tree_before=before, tree_after=self.tree.to_dict(),
            x_before=x_before, x_after=dict(self.x),
            movement=movement, leaf=leaf, x_drained=x_bar, merged=outcome.merged,
        )
        self.records.append(rec)
        self.script_steps.append({"op": "delete", "leaf": leaf})
        return rec

    def _absorb(self, stats: KernelStats) -> None:
        self.min_lambda = min(self.min_lambda, stats.min_lambda)
        self.max_resid = max(self.max_resid, stats.max_conservation_residual)
        if stats.max_conservation_residual > self.cfg.conservation_tol:
            raise IntegrationFailure(
                f"conservation residual {stats.max_conservation_residual:.3e} exceeds "
                f"tolerance {self.cfg.conservation_tol:.3e}"
            )

    def trace(self) -> GameTrace:
        return GameTrace(
            k=self.tree.k,
            epsilon=self.tree.epsilon,
            config=self.cfg,
            records=self.records,
            ledger=self.ledger,
            final_tree=self.tree.to_dict(),
            d_max_seen=self.tree.d_max_seen,
            min_lambda=self.min_lambda if self.records else 0.0,
            max_conservation_residual=self.max_resid,
            script=self.script_steps,
        )


def run_script(script, cfg: IntegratorConfig | None = None) -> GameTrace:
    """Execute an adversary script and return the full game trace.

    ``script`` provides ``k``, ``epsilon`` and an iterable of steps with an
    ``op`` in {"grow", "fork", "delete"}; deterministic given (script, cfg).
    """
    game = Game(script.k, script.epsilon, cfg)
    for step in script.steps:
        op = step.op
        if op == "grow":
            game.grow(step.leaf, step.duration)
        elif op == "fork":
            game.fork(step.leaf, step.q)
        elif op == "delete":
            game.delete(step.leaf)
        else:
            raise InputError(f"unknown script op {op!r}")
    return game.trace()
