"""Instance and script generators, baseline searcher, experiment runner.

Adversary scripts reference leaves by node id; ids are assigned in creation
order by the game tree, so a script is a replayable text artifact.  All
generators are deterministic in their seed.
"""

from __future__ import annotations

import io
import json
import math
import csv
from dataclasses import dataclass, field

import numpy as np

from .dynamics import GameTrace, IntegratorConfig, run_script
from .errors import InputError, InvalidNode, InvalidParameter, RejectedStep
from .layered import LayeredTree, LayerNode, binary_convert, opt_path, sample_walk, traverse
from .potential import certificate_report, certified_bound, lineage_y
from .tree import new_game_tree


# ----------------------------------------------------------------------
# adversary scripts
# ----------------------------------------------------------------------


@dataclass(frozen=True)
class Grow:
    leaf: int
    duration: float
    op: str = field(default="grow", init=False)


@dataclass(frozen=True)
class Fork:
    leaf: int
    q: int
    op: str = field(default="fork", init=False)


@dataclass(frozen=True)
class Delete:
    leaf: int
    op: str = field(default="delete", init=False)


Step = Grow | Fork | Delete


@dataclass
class AdversaryScript:
    """An ordered list of adversary steps for one game."""

    k: int
    epsilon: float
    steps: list[Step] = field(default_factory=list)

    def validate(self) -> None:
        """Replay topologically; raise if any step is illegal at its point."""
        tree = new_game_tree(self.k, self.epsilon)
        for i, step in enumerate(self.steps):
            try:
                if step.op == "grow":
                    if step.duration <= 0.0:
                        raise RejectedStep("grow duration must be positive")
                    if not tree.is_leaf(step.leaf):
                        raise RejectedStep(f"{step.leaf} is not a leaf")
                    tree.add_weight(step.leaf, step.duration)
                    tree.advance_step()
                elif step.op == "fork":
                    tree.fork(step.leaf, step.q)
                elif step.op == "delete":
                    tree.delete_leaf(step.leaf)
                else:
                    raise RejectedStep(f"unknown op {step.op!r}")
            except (RejectedStep, InvalidNode) as exc:
                raise RejectedStep(f"step {i} ({step.op}): {exc}") from None
        if not tree.leaves():
            raise RejectedStep("no leaf survives the script")

    def to_dict(self) -> dict:
        steps = []
        for s in self.steps:
            d = {"op": s.op, "leaf": s.leaf}
            if s.op == "grow":
                d["duration"] = s.duration
            elif s.op == "fork":
                d["q"] = s.q
            steps.append(d)
        return {"k": self.k, "epsilon": self.epsilon, "steps": steps}

    def to_json(self, indent: int | None = 2) -> str:
        return json.dumps(self.to_dict(), indent=indent)

    @classmethod
    def from_dict(cls, data: dict) -> "AdversaryScript":
        steps: list[Step] = []
        for s in data["steps"]:
            if s["op"] == "grow":
                steps.append(Grow(int(s["leaf"]), float(s["duration"])))
            elif s["op"] == "fork":
                steps.append(Fork(int(s["leaf"]), int(s["q"])))
            elif s["op"] == "delete":
                steps.append(Delete(int(s["leaf"])))
            else:
                raise InputError(f"unknown op {s['op']!r}")
        return cls(k=int(data["k"]), epsilon=float(data["epsilon"]), steps=steps)

    @classmethod
    def from_json(cls, text: str) -> "AdversaryScript":
        return cls.from_dict(json.loads(text))


def script_from_trace(trace: GameTrace) -> AdversaryScript:
    """Recover the script a trace was produced from (ids match on replay)."""
    return AdversaryScript.from_dict(
        {"k": trace.k, "epsilon": trace.epsilon, "steps": trace.script}
    )


# ----------------------------------------------------------------------
# generators
# ----------------------------------------------------------------------


def gen_lost_cow(k: int, lengths: list[int]) -> LayeredTree:
    """k disjoint unit-weight paths from the source, target on the shortest.

    Path i carries ``lengths[i]`` unit edges and is padded with zero-weight
    edges so all paths span the same layers; the target hangs off the
    minimum-length path (ties to the lowest index) by a zero-weight edge,
    so the offline optimum is min(lengths).
    """
    if len(lengths) != k or any(l < 1 or int(l) != l for l in lengths):
        raise InvalidParameter("lengths must be k positive integers")
    m = max(lengths)
    layers = [[LayerNode(None, 0)]]
    for depth in range(1, m + 1):
        layers.append(
            [
                LayerNode(parent=0 if depth == 1 else p, weight=1 if depth <= lengths[p] else 0)
                for p in range(k)
            ]
        )
    best = min(range(k), key=lambda p: (lengths[p], p))
    layers.append([LayerNode(parent=best, weight=0)])
    return LayeredTree(k, layers)


def gen_random_script(
    k: int,
    n_steps: int,
    seed: int,
    epsilon: float = 1.0,
    p_grow: float = 0.5,
    p_fork: float = 0.3,
    p_delete: float = 0.2,
    max_duration: float = 0.75,
) -> AdversaryScript:
    """Seed-deterministic mixed script; always valid by shadow replay."""
    rng = np.random.default_rng(seed)
    tree = new_game_tree(k, epsilon)
    steps: list[Step] = []
    for _ in range(n_steps):
        leaves = sorted(tree.leaves())
        depths = tree.depths()
        forkable = [u for u in leaves if depths[u] < k]
        deletable = [u for u in leaves if u != tree.c_r]
        kinds = ["grow"]
        weights = [p_grow]
        if forkable:
            kinds.append("fork")
            weights.append(p_fork)
        if deletable:
            kinds.append("delete")
            weights.append(p_delete)
        w = np.array(weights) / sum(weights)
        kind = kinds[int(rng.choice(len(kinds), p=w))]
        if kind == "grow":
            leaf = leaves[int(rng.integers(len(leaves)))]
            duration = float(round(rng.uniform(0.05, max_duration), 6))
            tree.add_weight(leaf, duration)
            tree.advance_step()
            steps.append(Grow(leaf, duration))
        elif kind == "fork":
            leaf = forkable[int(rng.integers(len(forkable)))]
            q = int(rng.choice([2, 2, 2, 3]))
            tree.fork(leaf, q)
            steps.append(Fork(leaf, q))
        else:
            leaf = deletable[int(rng.integers(len(deletable)))]
            tree.delete_leaf(leaf)
            steps.append(Delete(leaf))
    return AdversaryScript(k=k, epsilon=epsilon, steps=steps)


def gen_random_layered_tree(
    k: int, n_layers: int, unit_edge_prob: float, seed: int
) -> LayeredTree:
    """Seed-deterministic complete layered tree, width <= k, weights {0,1}."""
    if n_layers < 2:
        raise InvalidParameter("need at least a source layer and a target layer")
    rng = np.random.default_rng(seed)
    layers = [[LayerNode(None, 0)]]
    for i in range(1, n_layers - 1):
        prev = len(layers[i - 1])
        width = int(rng.integers(1, k + 1))
        nodes = []
        for j in range(width):
            # keep every previous node coverable but pick parents at random
            parent = int(rng.integers(prev))
            weight = int(rng.random() < unit_edge_prob)
            nodes.append(LayerNode(parent=parent, weight=weight))
        layers.append(nodes)
    prev = len(layers[-1])
    layers.append(
        [LayerNode(parent=int(rng.integers(prev)), weight=int(rng.random() < unit_edge_prob))]
    )
    return LayeredTree(k, layers)


# ----------------------------------------------------------------------
# baseline searcher
# ----------------------------------------------------------------------


def baseline_greedy(instance: LayeredTree) -> tuple[list[int], float]:
    """Pure strategy: always move to the endpoint of the currently shortest
    revealed source-to-layer path (ties to the smallest node id)."""
    opt_path(instance)  # validates completeness and reachability
    rdist = instance.root_distances()
    pos = instance.node_id(0, 0)
    path = [pos]
    cost = 0.0
    for i in range(1, instance.n_layers):
        choice = min(instance.layer_ids(i), key=lambda v: (rdist[v], v))
        cost += instance.distance(pos, choice)
        pos = choice
        path.append(pos)
    return path, cost


# ----------------------------------------------------------------------
# experiments
# ----------------------------------------------------------------------

RESULT_COLUMNS = [
    "instance_id",
    "k",
    "d_max",
    "opt",
    "frac_cost",
    "bound",
    "max_cert_violation",
    "greedy_cost",
    "samples_mean",
    "samples_stderr",
]


@dataclass
class ExperimentConfig:
    """One experiment family plus everything needed to reproduce it."""

    family: str  # "lost_cow" | "script" | "layered"
    k: int = 3
    count: int = 5
    seed: int = 0
    epsilon: float = 1.0
    n_steps: int = 60
    n_layers: int = 12
    unit_edge_prob: float = 0.5
    samples: int = 0  # Monte-Carlo walks per layered instance (0 = skip)
    integrator: IntegratorConfig = field(default_factory=IntegratorConfig)
    output_format: str = "csv"

    def __post_init__(self):
        if self.family not in ("lost_cow", "script", "layered"):
            raise InvalidParameter(f"unknown experiment family {self.family!r}")
        if self.count < 0 or self.samples < 0 or self.k < 2:
            raise InvalidParameter("count and samples must be nonnegative, k >= 2")
        if self.output_format not in ("csv", "json"):
            raise InvalidParameter("output format must be csv or json")


def run_experiment(cfg: ExperimentConfig) -> list[dict]:
    """Run one family and return result rows in the fixed column order.

    Fractional quantities are bit-reproducible for a fixed (cfg, seed);
    Monte-Carlo columns are reproducible given the sampler seeds derived
    from cfg.seed.
    """
    rows = []
    for i in range(cfg.count):
        seed = cfg.seed + i
        if cfg.family == "script":
            script = gen_random_script(cfg.k, cfg.n_steps, seed, cfg.epsilon)
            rows.append(_script_row(f"script-k{cfg.k}-{seed}", script, cfg))
        else:
            if cfg.family == "lost_cow":
                rng = np.random.default_rng(seed)
                lengths = [int(rng.integers(1, 2 ** cfg.k)) for _ in range(cfg.k)]
                instance = gen_lost_cow(cfg.k, lengths)
                name = f"lost_cow-k{cfg.k}-{seed}"
            else:
                instance = gen_random_layered_tree(cfg.k, cfg.n_layers, cfg.unit_edge_prob, seed)
                name = f"layered-k{cfg.k}-{seed}"
            rows.append(_layered_row(name, instance, cfg, seed))
    return rows


def _script_row(name: str, script: AdversaryScript, cfg: ExperimentConfig) -> dict:
    trace = run_script(script, cfg.integrator)
    play = lineage_y(script)
    report = certificate_report(trace, play)
    return {
        "instance_id": name,
        "k": script.k,
        "d_max": trace.d_max_seen,
        "opt": play.opt,
        "frac_cost": trace.total_cost,
        "bound": certified_bound(trace, play.opt),
        "max_cert_violation": report.max_violation,
        "greedy_cost": None,
        "samples_mean": None,
        "samples_stderr": None,
    }


def _layered_row(name: str, instance: LayeredTree, cfg: ExperimentConfig, seed: int) -> dict:
    converted = binary_convert(instance)
    result = traverse(converted, cfg.integrator, cfg.epsilon)
    trace = result.game_trace
    play = lineage_y(script_from_trace(trace))
    report = certificate_report(trace, play)
    _, greedy_cost = baseline_greedy(instance)
    mean = stderr = None
    if cfg.samples > 0:
        costs = np.array(
            [sample_walk(result, seed * 1_000_003 + s)[1] for s in range(cfg.samples)]
        )
        mean = float(costs.mean())
        stderr = float(costs.std(ddof=1) / math.sqrt(len(costs))) if len(costs) > 1 else 0.0
    return {
        "instance_id": name,
        "k": instance.k,
        "d_max": trace.d_max_seen,
        "opt": result.opt,
        "frac_cost": result.frac_cost,
        "bound": certified_bound(trace, result.opt),
        "max_cert_violation": report.max_violation,
        "greedy_cost": greedy_cost,
        "samples_mean": mean,
        "samples_stderr": stderr,
    }


def results_to_csv(rows: list[dict]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf)
    writer.writerow(RESULT_COLUMNS)
    for row in rows:
        writer.writerow(["" if row[c] is None else row[c] for c in RESULT_COLUMNS])
    return buf.getvalue()


def results_to_json(rows: list[dict]) -> str:
    return json.dumps([{c: row[c] for c in RESULT_COLUMNS} for row in rows], indent=2)
