"""Layered-tree traversal: instances, binary conversion, and the reduction.

A layered tree reveals itself layer by layer: layer 0 is the source ``a``,
every later node names one parent in the previous layer and the weight of
the connecting edge, and the final layer is the single target ``b``.

``binary_convert`` rewrites any width-<=k instance with {0,1} weights into
an equivalent one that is binary and carries at most one weight-1 edge per
layer gap, preserving all distances exactly.  ``traverse`` then drives the
evolving-tree game so that the game tree stays homeomorphic to the revealed
subtree (deletes for childless nodes, forks for two-child nodes, relabels
for single children, then one unit continuous step if the gap has a unit
edge) and reads the per-layer leaf distributions back off the game.
Optimal transport between consecutive distributions gives the fractional
traversal cost and the coupling used to round to a random walk.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linprog

from .dynamics import Game, GameTrace, IntegratorConfig
from .errors import InputError, InvalidInstance
from .tree import ROOT


@dataclass(frozen=True)
class LayerNode:
    parent: int | None  # index within the previous layer
    weight: int


class LayeredTree:
    """Width-bounded layered tree with integer edge weights.

    Node ids are assigned sequentially in (layer, position) order, so they
    are stable, deterministic, and usable as tie-breakers.
    """

    def __init__(self, k: int, layers: list[list[LayerNode]]):
        self.k = k
        self.layers = layers
        self._offsets = []
        total = 0
        for layer in layers:
            self._offsets.append(total)
            total += len(layer)
        self.n_nodes = total
        self.validate()

    # -- structure ------------------------------------------------------

    @property
    def n_layers(self) -> int:
        return len(self.layers)

    @property
    def width(self) -> int:
        return max(len(layer) for layer in self.layers)

    @property
    def is_complete(self) -> bool:
        return len(self.layers[-1]) == 1 and self.n_layers >= 2

    def node_id(self, layer: int, idx: int) -> int:
        return self._offsets[layer] + idx

    def locate(self, node: int) -> tuple[int, int]:
        for i in range(len(self.layers) - 1, -1, -1):
            if node >= self._offsets[i]:
                return i, node - self._offsets[i]
        raise InputError(f"node id {node} out of range")

    def layer_ids(self, layer: int) -> list[int]:
        base = self._offsets[layer]
        return [base + i for i in range(len(self.layers[layer]))]

    def parent_id(self, node: int) -> int | None:
        layer, idx = self.locate(node)
        if layer == 0:
            return None
        return self.node_id(layer - 1, self.layers[layer][idx].parent)

    def weight_of(self, node: int) -> int:
        layer, idx = self.locate(node)
        return self.layers[layer][idx].weight

    def children_of(self, node: int) -> list[int]:
        layer, idx = self.locate(node)
        if layer + 1 >= self.n_layers:
            return []
        return [
            self.node_id(layer + 1, i)
            for i, ln in enumerate(self.layers[layer + 1])
            if ln.parent == idx
        ]

    def validate(self) -> None:
        if not self.layers or len(self.layers[0]) != 1:
            raise InvalidInstance("layer 0 must hold exactly the source node")
        if self.layers[0][0].parent is not None or self.layers[0][0].weight != 0:
            raise InvalidInstance("the source node has no parent edge")
        if self.k < 1:
            raise InvalidInstance("width bound must be positive")
        for i, layer in enumerate(self.layers):
            if len(layer) > self.k:
                raise InvalidInstance(f"layer {i} has {len(layer)} > k={self.k} nodes")
            if i == 0:
                continue
            if not layer:
                raise InvalidInstance(f"layer {i} is empty")
            for ln in layer:
                if ln.parent is None or not (0 <= ln.parent < len(self.layers[i - 1])):
                    raise InvalidInstance(f"bad parent index in layer {i}")
                if ln.weight < 0 or int(ln.weight) != ln.weight:
                    raise InvalidInstance("weights must be nonnegative integers")

    # -- distances ------------------------------------------------------

    def root_distances(self) -> dict[int, int]:
        dist = {0: 0}
        for i in range(1, self.n_layers):
            for idx, ln in enumerate(self.layers[i]):
                dist[self.node_id(i, idx)] = dist[self.node_id(i - 1, ln.parent)] + ln.weight
        return dist

    def distance(self, u: int, v: int) -> int:
        """Tree distance between any two revealed nodes."""
        rdist = getattr(self, "_rdist_cache", None)
        if rdist is None:
            rdist = self.root_distances()
            self._rdist_cache = rdist
        lu, _ = self.locate(u)
        lv, _ = self.locate(v)
        a, b = u, v
        la, lb = lu, lv
        while la > lb:
            a = self.parent_id(a)
            la -= 1
        while lb > la:
            b = self.parent_id(b)
            lb -= 1
        while a != b:
            a = self.parent_id(a)
            b = self.parent_id(b)
        return rdist[u] + rdist[v] - 2 * rdist[a]

    # -- serialization --------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "k": self.k,
            "layers": [
                [{"parent": ln.parent, "weight": ln.weight} for ln in layer]
                for layer in self.layers
            ],
        }

    def to_json(self, indent: int | None = None) -> str:
        return json.dumps(self.to_dict(), indent=indent)

    @classmethod
    def from_dict(cls, data: dict) -> "LayeredTree":
        layers = [
            [LayerNode(parent=ln["parent"], weight=int(ln["weight"])) for ln in layer]
            for layer in data["layers"]
        ]
        return cls(int(data["k"]), layers)

    @classmethod
    def from_json(cls, text: str) -> "LayeredTree":
        return cls.from_dict(json.loads(text))


# ----------------------------------------------------------------------
# offline shortest path
# ----------------------------------------------------------------------


def opt_path(instance: LayeredTree) -> tuple[int, list[int]]:
    """Minimum-weight source-to-target path by layer DP, ties to smaller ids."""
    if not instance.is_complete:
        raise InvalidInstance("opt_path needs a complete instance (single target layer)")
    dist = {0: 0}
    pred: dict[int, int | None] = {0: None}
    for i in range(1, instance.n_layers):
        any_reachable = False
        for idx, ln in enumerate(instance.layers[i]):
            v = instance.node_id(i, idx)
            p = instance.node_id(i - 1, ln.parent)
            if p not in dist:
                continue
            any_reachable = True
            dist[v] = dist[p] + ln.weight
            pred[v] = p
        if not any_reachable:
            raise InvalidInstance(f"no node in layer {i} is reachable")
    target = instance.node_id(instance.n_layers - 1, 0)
    if target not in dist:
        raise InvalidInstance("target unreachable")
    path = [target]
    while pred[path[-1]] is not None:
        path.append(pred[path[-1]])
    path.reverse()
    return dist[target], path


# ----------------------------------------------------------------------
# binary conversion with staggered unit edges
# ----------------------------------------------------------------------


def binary_convert(instance: LayeredTree, k: int | None = None) -> LayeredTree:
    """Equivalent instance that is binary with <=1 unit edge per layer gap.

    Every layer gap is first bridged by a zero-weight balanced binary
    gadget (ceil(log2 k) - 1 simulated layers; original edge weights move
    to the last hop), then every edge of the resulting binary tree is
    subdivided into a k-edge path whose single possible unit weight sits at
    the edge's index within its gap, so unit edges never share a gap.
    Distances between surviving nodes are preserved exactly; the converted
    instance records where each original node went in ``source_map``.
    """
    k = instance.k if k is None else k
    for layer in instance.layers[1:]:
        for ln in layer:
            if ln.weight not in (0, 1):
                raise InvalidInstance("binary conversion expects weights in {0, 1}")
    if instance.width > k:
        raise InvalidInstance(f"instance width {instance.width} exceeds k={k}")

    mid, mid_map = _binarize(instance, k)
    out, stretch_map = _stagger_units(mid, k)
    out.source_map = {u: stretch_map[v] for u, v in mid_map.items()}
    return out


def _binarize(instance: LayeredTree, k: int) -> tuple[LayeredTree, dict[int, int]]:
    depth = max(1, math.ceil(math.log2(k)))
    n_sim = depth - 1
    layers = [[LayerNode(None, 0)]]
    node_map = {0: 0}  # original id -> new id
    prev_new_idx = {0: 0}  # original node id in layer i-1 -> index in new prev layer

    for i in range(1, instance.n_layers):
        groups = []  # (parent index in previous new layer, [original child ids])
        for u in instance.layer_ids(i - 1):
            kids = instance.children_of(u)
            if kids:
                groups.append((prev_new_idx[u], kids))
        for _ in range(n_sim):
            layer: list[LayerNode] = []
            next_groups = []
            for pidx, members in groups:
                if len(members) == 1:
                    layer.append(LayerNode(parent=pidx, weight=0))
                    next_groups.append((len(layer) - 1, members))
                else:
                    half = (len(members) + 1) // 2
                    for part in (members[:half], members[half:]):
                        layer.append(LayerNode(parent=pidx, weight=0))
                        next_groups.append((len(layer) - 1, part))
            layers.append(layer)
            groups = next_groups
        layer = []
        new_idx = {}
        base = sum(len(l) for l in layers)
        for pidx, members in groups:
            for orig in members:
                layer.append(LayerNode(parent=pidx, weight=instance.weight_of(orig)))
                new_idx[orig] = len(layer) - 1
                node_map[orig] = base + len(layer) - 1
        layers.append(layer)
        prev_new_idx = new_idx
    return LayeredTree(k, layers), node_map


def _stagger_units(instance: LayeredTree, k: int) -> tuple[LayeredTree, dict[int, int]]:
    # edge j of a gap becomes a k-edge path with its unit weight (if any) at
    # position j; paths keep their gap order, so within simulated layers the
    # parent of path j's node is simply index j of the layer above
    layers = [[LayerNode(None, 0)]]
    node_map = {0: 0}
    for i in range(1, instance.n_layers):
        src = instance.layers[i]
        m = len(src)
        for pos in range(1, k + 1):
            layer = []
            base = sum(len(l) for l in layers)
            for jj in range(m):
                parent = src[jj].parent if pos == 1 else jj
                w = 1 if (src[jj].weight == 1 and pos == jj + 1) else 0
                layer.append(LayerNode(parent=parent, weight=w))
                if pos == k:
                    node_map[instance.node_id(i, jj)] = base + jj
            layers.append(layer)
    return LayeredTree(k, layers), node_map


# ----------------------------------------------------------------------
# transport plans and rounding
# ----------------------------------------------------------------------


@dataclass
class TransportPlan:
    """Optimal coupling between consecutive layer distributions."""

    matrix: np.ndarray  # rows: previous layer, cols: current layer
    cost: float

    def to_dict(self) -> dict:
        return {"matrix": self.matrix.tolist(), "cost": self.cost}


def transport_plan(prev, cur, dist) -> TransportPlan:
    """Minimum-cost coupling of two small distributions under ``dist``.

    Solved exactly as a linear program (sizes are at most k); deterministic
    for fixed inputs.
    """
    p = np.asarray(prev, dtype=float)
    q = np.asarray(cur, dtype=float)
    d = np.asarray(dist, dtype=float)
    if d.shape != (p.size, q.size):
        raise InputError(f"distance matrix {d.shape} does not match {p.size}x{q.size}")
    if (p < -1e-12).any() or (q < -1e-12).any() or (d < 0).any():
        raise InputError("marginals and distances must be nonnegative")
    sp, sq = p.sum(), q.sum()
    if abs(sp - sq) > 1e-9 or sp <= 0.0:
        raise InputError(f"marginals must agree: {sp} vs {sq}")
    p = np.maximum(p, 0.0) / sp
    q = np.maximum(q, 0.0) / sq
    m, n = p.size, q.size
    a_eq = np.zeros((m + n, m * n))
    for i in range(m):
        a_eq[i, i * n:(i + 1) * n] = 1.0
    for j in range(n):
        a_eq[m + j, j::n] = 1.0
    b_eq = np.concatenate([p, q])
    res = linprog(d.ravel(), A_eq=a_eq, b_eq=b_eq, bounds=(0, None), method="highs")
    if not res.success:
        raise InputError(f"transport solve failed: {res.message}")
    tau = res.x.reshape(m, n)
    return TransportPlan(matrix=tau, cost=float(res.fun))


@dataclass
class TraversalResult:
    """Everything the traversal produced, enough to round and to certify."""

    instance: LayeredTree
    game_trace: GameTrace
    layer_node_ids: list[list[int]]
    distributions: list[np.ndarray]  # per layer, aligned with layer_node_ids
    plans: list[TransportPlan]  # plans[i] couples layer i and i+1
    dist_matrices: list[np.ndarray]
    opt: int

    @property
    def frac_cost(self) -> float:
        """Fractional traversal cost: sum of optimal coupling costs."""
        return sum(plan.cost for plan in self.plans)

    @property
    def tree_cost(self) -> float:
        """Service plus movement paid by the evolving-tree strategy."""
        return self.game_trace.total_cost

    def to_dict(self) -> dict:
        return {
            "instance": self.instance.to_dict(),
            "game_trace": self.game_trace.to_dict(),
            "layer_node_ids": self.layer_node_ids,
            "distributions": [d.tolist() for d in self.distributions],
            "plans": [p.to_dict() for p in self.plans],
            "dist_matrices": [d.tolist() for d in self.dist_matrices],
            "opt": self.opt,
            "frac_cost": self.frac_cost,
            "tree_cost": self.tree_cost,
        }


def traverse(
    instance: LayeredTree,
    cfg: IntegratorConfig | None = None,
    epsilon: float = 1.0,
) -> TraversalResult:
    """Traverse a binary, unit-staggered instance via the evolving tree.

    Maintains the homeomorphism between the game tree and the revealed
    subtree (asserted each layer): per gap, deletes for childless nodes,
    then forks, then relabels, then one continuous step of duration 1 if
    the gap carries a unit edge.  Per-layer leaf distributions are copied
    out and coupled by optimal transport.
    """
    _require_traversable(instance)
    opt_value = opt_path(instance)[0]  # also proves the target is reachable
    k = instance.k
    game = Game(k, epsilon, cfg)
    rdist = instance.root_distances()

    leaf_of = {0: game.tree.c_r}
    layer_node_ids = [instance.layer_ids(0)]
    distributions = [np.array([1.0])]
    plans: list[TransportPlan] = []
    dist_matrices: list[np.ndarray] = []

    for i in range(1, instance.n_layers):
        prev_ids = instance.layer_ids(i - 1)
        cur_ids = instance.layer_ids(i)
        kids_of = {u: instance.children_of(u) for u in prev_ids}

        for u in prev_ids:
            if not kids_of[u]:
                game.delete(leaf_of[u])
        new_leaf_of: dict[int, int] = {}
        for u in prev_ids:
            kids = kids_of[u]
            if len(kids) == 2:
                spawned = game.fork(leaf_of[u], 2).children
                for v, leaf in zip(kids, spawned):
                    new_leaf_of[v] = leaf
        for u in prev_ids:
            kids = kids_of[u]
            if len(kids) == 1:
                new_leaf_of[kids[0]] = leaf_of[u]
        unit_nodes = [v for v in cur_ids if instance.weight_of(v) == 1]
        if unit_nodes:
            game.grow(new_leaf_of[unit_nodes[0]], 1.0)

        leaves = set(game.tree.leaves())
        if leaves != set(new_leaf_of[v] for v in cur_ids):
            raise AssertionError(f"homeomorphism broken at layer {i}: leaf sets differ")
        for v in cur_ids:
            if abs(game.tree.root_distance(new_leaf_of[v]) - rdist[v]) > 1e-9:
                raise AssertionError(f"homeomorphism broken at layer {i}: weights differ")

        p_cur = np.array([game.x[new_leaf_of[v]] for v in cur_ids])
        d = np.array(
            [[instance.distance(u, v) for v in cur_ids] for u in prev_ids], dtype=float
        )
        plans.append(transport_plan(distributions[-1], p_cur, d))
        dist_matrices.append(d)
        distributions.append(p_cur)
        layer_node_ids.append(cur_ids)
        leaf_of = new_leaf_of

    return TraversalResult(
        instance=instance,
        game_trace=game.trace(),
        layer_node_ids=layer_node_ids,
        distributions=distributions,
        plans=plans,
        dist_matrices=dist_matrices,
        opt=opt_value,
    )


def _require_traversable(instance: LayeredTree) -> None:
    if not instance.is_complete:
        raise InvalidInstance("traverse needs a complete instance (single target)")
    for i in range(1, instance.n_layers):
        units = 0
        for ln in instance.layers[i]:
            if ln.weight not in (0, 1):
                raise InvalidInstance("traverse expects weights in {0, 1}")
            units += ln.weight
        if units > 1:
            raise InvalidInstance(f"gap into layer {i} holds {units} unit edges; stagger first")
        parents = [ln.parent for ln in instance.layers[i]]
        if any(parents.count(p) > 2 for p in set(parents)):
            raise InvalidInstance("traverse expects a binary instance; convert first")


def sample_walks(
    result: TraversalResult, n: int, seed: int
) -> tuple[np.ndarray, list[np.ndarray]]:
    """Draw ``n`` independent rounding walks at once.

    Returns the per-walk costs and, per layer, the visit counts (so layer
    marginals can be tested against the fractional distributions).
    Equivalent in law to ``n`` calls of ``sample_walk`` with independent
    seeds, but vectorized per layer.
    """
    rng = np.random.default_rng(seed)
    cur = np.zeros(n, dtype=np.int64)
    costs = np.zeros(n)
    counts = [np.bincount(cur, minlength=len(result.distributions[0]))]
    for i, plan in enumerate(result.plans):
        n_next = plan.matrix.shape[1]
        nxt = np.empty(n, dtype=np.int64)
        for idx in np.unique(cur):
            sel = np.nonzero(cur == idx)[0]
            row = np.maximum(plan.matrix[idx], 0.0)
            total = row.sum()
            if total <= 0.0:
                raise AssertionError("coupling row is empty at a visited node")
            nxt[sel] = rng.choice(n_next, size=sel.size, p=row / total)
        costs += result.dist_matrices[i][cur, nxt]
        cur = nxt
        counts.append(np.bincount(cur, minlength=n_next))
    return costs, counts


def sample_walk(result: TraversalResult, seed: int) -> tuple[list[int], float]:
    """Round the fractional traversal to one random source-target walk.

    At each layer the next node is drawn from the optimal coupling
    conditioned on the current node, so layer marginals match the
    fractional distributions and the expected cost equals the fractional
    cost.  Zero-probability nodes are never visited.
    """
    rng = np.random.default_rng(seed)
    pos_idx = 0
    path = [result.layer_node_ids[0][0]]
    cost = 0.0
    for i, plan in enumerate(result.plans):
        p_prev = result.distributions[i][pos_idx]
        if p_prev <= 1e-15:
            raise AssertionError("walk reached a zero-probability node")
        row = np.maximum(plan.matrix[pos_idx], 0.0)
        total = row.sum()
        if total <= 0.0:
            raise AssertionError("coupling row is empty at a visited node")
        nxt = int(rng.choice(len(row), p=row / total))
        cost += float(result.dist_matrices[i][pos_idx, nxt])
        pos_idx = nxt
        path.append(result.layer_node_ids[i + 1][nxt])
    return path, cost
