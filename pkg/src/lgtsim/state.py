"""Fractional algorithm state: a point in the flow polytope of the tree.

A state maps every non-root node ``u`` to the probability mass ``x_u`` of
the leaves in its subtree.  Conservation (``sum of children == parent``,
with the root's value pinned to 1) and nonnegativity are the two polytope
constraints; ``validate`` reports violations, ``repair_conservation``
removes integration drift by rescaling children proportionally, top-down.

States are plain ``{node_id: float}`` dicts with value semantics: every
operation returns a fresh dict and never mutates its input.
"""

from __future__ import annotations

from typing import NamedTuple

from .errors import InputError, InvalidParameter, ProtocolViolation
from .tree import ROOT, DeleteOutcome, EvolvingTree

FractionalState = dict[int, float]

NEG_CLAMP = 1e-12  # values in (-NEG_CLAMP, 0) are treated as exact zeros


class Violation(NamedTuple):
    kind: str  # "nonnegative" | "conservation" | "root_mass"
    node: int
    magnitude: float


def init_state(tree: EvolvingTree) -> FractionalState:
    """All mass on the root's child; only valid on the start-of-game tree."""
    if not tree.is_fresh():
        raise InvalidParameter("init_state requires the fresh two-node tree")
    return {tree.c_r: 1.0}


def validate(tree: EvolvingTree, x: FractionalState, tol: float = 1e-9) -> list[Violation]:
    """Return all polytope violations of ``x`` at tolerance ``tol``."""
    out = []
    for u in tree.non_root_ids():
        if u not in x:
            out.append(Violation("conservation", u, float("inf")))
            continue
        if x[u] < -NEG_CLAMP:
            out.append(Violation("nonnegative", u, -x[u]))
    cr = tree.c_r
    if cr in x and x[cr] != 1.0:
        out.append(Violation("root_mass", cr, abs(x[cr] - 1.0)))
    for u in tree.node_ids():
        kids = tree.children(u)
        if not kids or u == ROOT:
            continue
        if u not in x or any(v not in x for v in kids):
            continue
        resid = abs(sum(x[v] for v in kids) - x[u])
        if resid > tol:
            out.append(Violation("conservation", u, resid))
    return out


def apply_fork(x: FractionalState, leaf: int, children: list[int]) -> FractionalState:
    """Split the forked leaf's mass evenly over its freshly created children."""
    out = dict(x)
    share = x[leaf] / len(children)
    for v in children:
        out[v] = share
    return out


def project_after_delete(
    x: FractionalState, outcome: DeleteOutcome, tol: float = 1e-8
) -> FractionalState:
    """Drop the deleted (and merged, if any) coordinates from the state.

    The deadend drain must have run first, so the deleted leaf carries no
    mass; the merged node's coordinate equals its surviving child's by
    conservation and simply disappears.
    """
    residual = abs(x.get(outcome.leaf, 0.0))
    if residual > tol:
        raise ProtocolViolation(
            f"leaf {outcome.leaf} still carries mass {residual:.3e}; drain it first"
        )
    out = {u: v for u, v in x.items() if u != outcome.leaf}
    if outcome.merged is not None:
        out.pop(outcome.merged[0], None)
    return out


def movement_cost(tree: EvolvingTree, x_old: FractionalState, x_new: FractionalState) -> float:
    """Weighted L1 distance sum_u w_u * |x_old_u - x_new_u| over non-root nodes."""
    ids = tree.non_root_ids()
    if set(x_old) != set(ids) or set(x_new) != set(ids):
        raise InputError("movement_cost requires both states on the tree's topology")
    return sum(tree.weight(u) * abs(x_old[u] - x_new[u]) for u in ids)


def repair_conservation(tree: EvolvingTree, x: FractionalState) -> FractionalState:
    """Clamp tiny negatives and rescale children so sums match parents exactly.

    Processes parents before children so every subtree is consistent with
    its (already repaired) root.  A zero-mass sibling group falls back to
    the shift-vector split, which keeps the state strictly interior-safe.
    """
    out = {}
    for u, v in x.items():
        if v < 0.0:
            if v < -NEG_CLAMP:
                raise ProtocolViolation(f"state has mass {v:.3e} < -{NEG_CLAMP} at node {u}")
            v = 0.0
        out[u] = v
    delta = tree.shift_vector()
    order = [tree.c_r]
    i = 0
    while i < len(order):
        u = order[i]
        i += 1
        kids = tree.children(u)
        if not kids:
            continue
        if u == tree.c_r:
            out[u] = 1.0
        total = sum(out[v] for v in kids)
        if total > 0.0:
            factor = out[u] / total
            for v in kids:
                out[v] *= factor
        else:
            for v in kids:
                out[v] = out[u] * delta[v] / delta[u]
        order.extend(kids)
    if tree.c_r in out:
        out[tree.c_r] = 1.0
    return out
