"""The adversary's evolving rooted tree.

The game state is a rooted, edge-weighted tree whose root ``r`` always has
exactly one child ``c_r`` and no weight of its own.  The adversary mutates
it with fork steps (spawn q >= 2 zero-weight children under a leaf), delete
steps (remove a leaf; if the parent is left with a single child the two
edges are merged so the tree stays free of degree-2 nodes), and continuous
steps that grow one leaf edge.  Node ids are assigned in creation order and
never reused, so replayed games are unambiguous.

Besides the true edge weights ``w_u`` the algorithm works with

* revised weights  ``w~_u = (2k-1)/(2k-h_u) * (w_u + eps*2^(-j_u))``, where
  ``h_u`` is the combinatorial depth and ``j_u`` the step at which ``u``
  was created, and
* shift parameters ``delta_u`` (``delta_{c_r} = 1``, children split their
  parent's value evenly), a fixed interior point of the flow polytope.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

from .errors import InvalidNode, InvalidParameter, RejectedStep

ROOT = 0

# epsilon*2^(-j) underflows for absurdly long games; keep w~ strictly positive.
_MIN_BIRTH_TERM = 1e-300


def birth_term_value(epsilon: float, creation_step: int) -> float:
    """The additive slack eps*2^(-j) in a node's revised weight."""
    return max(math.ldexp(epsilon, -creation_step), _MIN_BIRTH_TERM)


@dataclass
class _Node:
    parent: int | None
    children: list[int] = field(default_factory=list)
    weight: float = 0.0
    creation_step: int = 0


@dataclass(frozen=True)
class DeleteOutcome:
    """What a delete step did: the removed leaf, and the merge if one fired.

    ``merged`` is ``(removed_parent, surviving_child)`` or ``None``.
    """

    leaf: int
    merged: tuple[int, int] | None = None


class EvolvingTree:
    """Mutable game tree with depth bound ``k`` and slack parameter ``eps``."""

    def __init__(self, k: int, epsilon: float):
        if not isinstance(k, int) or k < 2:
            raise InvalidParameter(f"depth bound k must be an integer >= 2, got {k!r}")
        if not (epsilon > 0.0) or not math.isfinite(epsilon):
            raise InvalidParameter(f"epsilon must be a positive real, got {epsilon!r}")
        self.k = k
        self.epsilon = float(epsilon)
        self.current_step = 1
        self.d_max_seen = 1  # both initial nodes have degree 1
        self._nodes: dict[int, _Node] = {
            ROOT: _Node(parent=None),
            1: _Node(parent=ROOT, weight=0.0, creation_step=0),
        }
        self._nodes[ROOT].children.append(1)
        self._next_id = 2

    # ------------------------------------------------------------------
    # basic queries
    # ------------------------------------------------------------------

    @property
    def root(self) -> int:
        return ROOT

    @property
    def c_r(self) -> int:
        """The root's single child (identity changes when merges reach it)."""
        return self._nodes[ROOT].children[0]

    def __contains__(self, u: int) -> bool:
        return u in self._nodes

    def __len__(self) -> int:
        return len(self._nodes)

    def node_ids(self) -> list[int]:
        return list(self._nodes)

    def non_root_ids(self) -> list[int]:
        return [u for u in self._nodes if u != ROOT]

    def parent(self, u: int) -> int | None:
        return self._node(u).parent

    def children(self, u: int) -> list[int]:
        return list(self._node(u).children)

    def weight(self, u: int) -> float:
        if u == ROOT:
            raise InvalidNode("the root carries no edge weight")
        return self._node(u).weight

    def creation_step(self, u: int) -> int:
        return self._node(u).creation_step

    def is_leaf(self, u: int) -> bool:
        node = self._node(u)
        return u != ROOT and not node.children

    def leaves(self) -> list[int]:
        return [u for u, n in self._nodes.items() if u != ROOT and not n.children]

    def degree(self, u: int) -> int:
        node = self._node(u)
        return len(node.children) + (0 if node.parent is None else 1)

    def depth(self, u: int) -> int:
        """Number of edges from the root to ``u``."""
        h = 0
        node = self._node(u)
        while node.parent is not None:
            h += 1
            node = self._nodes[node.parent]
        return h

    def depths(self) -> dict[int, int]:
        out = {ROOT: 0}
        stack = [ROOT]
        while stack:
            u = stack.pop()
            for v in self._nodes[u].children:
                out[v] = out[u] + 1
                stack.append(v)
        return out

    def is_fresh(self) -> bool:
        """True for the two-node start-of-game tree."""
        return len(self._nodes) == 2 and self.weight(self.c_r) == 0.0

    def _node(self, u: int) -> _Node:
        try:
            return self._nodes[u]
        except KeyError:
            raise InvalidNode(f"no node with id {u}") from None

    # ------------------------------------------------------------------
    # mutations
    # ------------------------------------------------------------------

    def fork(self, leaf: int, q: int) -> list[int]:
        """Spawn ``q >= 2`` zero-weight children under ``leaf``.

        The children are born with creation step equal to the current step
        counter; the counter then advances.  Returns the new ids in order.
        """
        if q < 2:
            raise RejectedStep(f"fork needs q >= 2 children, got {q}")
        if not self.is_leaf(leaf):
            raise RejectedStep(f"fork target {leaf} is not a leaf")
        if self.depth(leaf) >= self.k:
            raise RejectedStep(f"fork at node {leaf} would exceed depth bound {self.k}")
        new_ids = []
        for _ in range(q):
            nid = self._next_id
            self._next_id += 1
            self._nodes[nid] = _Node(parent=leaf, weight=0.0, creation_step=self.current_step)
            self._nodes[leaf].children.append(nid)
            new_ids.append(nid)
        self.d_max_seen = max(self.d_max_seen, q + 1)
        self.current_step += 1
        return new_ids

    def delete_leaf(self, leaf: int) -> DeleteOutcome:
        """Remove ``leaf``; smooth the parent if it is left with one child.

        Smoothing merges the two incident edges: the surviving child ``c``
        takes over the parent's edge weight (``w_c += w_p``) while keeping
        its own creation step, and the parent node disappears.
        """
        if not self.is_leaf(leaf):
            raise RejectedStep(f"delete target {leaf} is not a leaf")
        if leaf == self.c_r:
            raise RejectedStep("cannot delete the root's child")
        p = self._nodes[leaf].parent
        assert p is not None and p != ROOT
        self._nodes[p].children.remove(leaf)
        del self._nodes[leaf]
        merged = None
        if len(self._nodes[p].children) == 1:
            c = self._nodes[p].children[0]
            gp = self._nodes[p].parent
            slot = self._nodes[gp].children.index(p)
            self._nodes[gp].children[slot] = c
            self._nodes[c].parent = gp
            self._nodes[c].weight += self._nodes[p].weight
            del self._nodes[p]
            merged = (p, c)
        self.current_step += 1
        return DeleteOutcome(leaf=leaf, merged=merged)

    def add_weight(self, leaf: int, amount: float) -> None:
        """Grow a leaf edge by ``amount`` (the integrator's weight update)."""
        if not self.is_leaf(leaf):
            raise RejectedStep(f"can only grow leaf edges, {leaf} is not a leaf")
        if amount < 0.0:
            raise RejectedStep("edge weights never decrease")
        self._nodes[leaf].weight += amount

    def advance_step(self) -> None:
        """Consume one step number (used for continuous steps)."""
        self.current_step += 1

    # ------------------------------------------------------------------
    # derived quantities
    # ------------------------------------------------------------------

    def birth_term(self, u: int) -> float:
        """The additive slack eps*2^(-j_u) of node ``u``'s revised weight."""
        return birth_term_value(self.epsilon, self._node(u).creation_step)

    def revised_weight(self, u: int) -> float:
        """w~_u = (2k-1)/(2k-h_u) * (w_u + eps*2^(-j_u)); strictly positive."""
        if u == ROOT:
            raise InvalidNode("the root has no revised weight")
        h = self.depth(u)
        return (2 * self.k - 1) / (2 * self.k - h) * (self._node(u).weight + self.birth_term(u))

    def revised_weights(self) -> dict[int, float]:
        depths = self.depths()
        out = {}
        for u in self._nodes:
            if u == ROOT:
                continue
            coef = (2 * self.k - 1) / (2 * self.k - depths[u])
            out[u] = coef * (self._nodes[u].weight + self.birth_term(u))
        return out

    def shift_vector(self) -> dict[int, float]:
        """delta_{c_r} = 1; every other node gets an even share of its parent."""
        out: dict[int, float] = {}
        stack = [(self.c_r, 1.0)]
        while stack:
            u, d = stack.pop()
            out[u] = d
            kids = self._nodes[u].children
            if kids:
                share = d / len(kids)
                for v in kids:
                    stack.append((v, share))
        return out

    def root_distance(self, u: int) -> float:
        """Sum of true weights on the path from the root to ``u``."""
        total = 0.0
        node = self._node(u)
        while node.parent is not None:
            total += node.weight
            node = self._nodes[node.parent]
        return total

    def opt_distance(self) -> float:
        """Weight of the lightest root-to-leaf path."""
        best = math.inf
        dist = {ROOT: 0.0}
        stack = [ROOT]
        while stack:
            u = stack.pop()
            kids = self._nodes[u].children
            if not kids and u != ROOT:
                best = min(best, dist[u])
            for v in kids:
                dist[v] = dist[u] + self._nodes[v].weight
                stack.append(v)
        return best

    # ------------------------------------------------------------------
    # serialization
    # ------------------------------------------------------------------

    def to_dict(self) -> dict:
        """Nested-object form: id, weight, creation_step, children."""

        def pack(u: int) -> dict:
            n = self._nodes[u]
            return {
                "id": u,
                "weight": None if u == ROOT else n.weight,
                "creation_step": n.creation_step,
                "children": [pack(v) for v in n.children],
            }

        return {
            "k": self.k,
            "epsilon": self.epsilon,
            "current_step": self.current_step,
            "d_max_seen": self.d_max_seen,
            "next_id": self._next_id,
            "root": pack(ROOT),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "EvolvingTree":
        tree = cls.__new__(cls)
        tree.k = int(data["k"])
        tree.epsilon = float(data["epsilon"])
        tree.current_step = int(data["current_step"])
        tree.d_max_seen = int(data["d_max_seen"])
        tree._nodes = {}

        def unpack(obj: dict, parent: int | None) -> None:
            u = int(obj["id"])
            w = obj["weight"]
            tree._nodes[u] = _Node(
                parent=parent,
                weight=0.0 if w is None else float(w),
                creation_step=int(obj["creation_step"]),
                children=[],
            )
            for child in obj["children"]:
                tree._nodes[u].children.append(int(child["id"]))
                unpack(child, u)

        unpack(data["root"], None)
        tree._next_id = int(data.get("next_id", max(tree._nodes) + 1))
        return tree

    def copy(self) -> "EvolvingTree":
        return EvolvingTree.from_dict(self.to_dict())

    # ------------------------------------------------------------------
    # structural checks (used heavily by tests)
    # ------------------------------------------------------------------

    def check_invariants(self) -> None:
        root = self._nodes[ROOT]
        assert root.parent is None and len(root.children) == 1, "root degree must be 1"
        depths = self.depths()
        for u, n in self._nodes.items():
            if u == ROOT:
                continue
            assert depths[u] <= self.k, f"node {u} at depth {depths[u]} > k={self.k}"
            assert n.weight >= 0.0, f"negative weight at {u}"
            if n.children:
                assert len(n.children) >= 2, f"degree-2 node {u} survived"
            for v in n.children:
                assert self._nodes[v].parent == u


def new_game_tree(k: int, epsilon: float) -> EvolvingTree:
    """Start-of-game tree: root plus one zero-weight leaf, step counter at 1."""
    return EvolvingTree(k, epsilon)
