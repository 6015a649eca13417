"""Shared helpers: random game trees, random polytope states, dense oracle."""

from __future__ import annotations

import numpy as np
import pytest

from lgtsim.tree import ROOT, EvolvingTree, new_game_tree


def random_game_tree(rng: np.random.Generator, k: int, n_ops: int,
                     weighted: bool = True) -> EvolvingTree:
    """Random topology via fork/delete ops, with optional random weights."""
    tree = new_game_tree(k, 1.0)
    for _ in range(n_ops):
        leaves = sorted(tree.leaves())
        depths = tree.depths()
        forkable = [u for u in leaves if depths[u] < k]
        deletable = [u for u in leaves if u != tree.c_r]
        if forkable and (not deletable or rng.random() < 0.65):
            leaf = forkable[int(rng.integers(len(forkable)))]
            tree.fork(leaf, int(rng.choice([2, 2, 3])))
        elif deletable:
            leaf = deletable[int(rng.integers(len(deletable)))]
            tree.delete_leaf(leaf)
    if weighted:
        for u in tree.non_root_ids():
            # reach into the node store: tests need weights on internal edges too
            tree._nodes[u].weight = float(np.round(rng.uniform(0.0, 3.0), 6))
    return tree


def random_state(tree: EvolvingTree, rng: np.random.Generator) -> dict[int, float]:
    """Random interior point of the polytope: leaf masses aggregated upward."""
    leaves = sorted(tree.leaves())
    vals = rng.random(len(leaves)) + 0.05
    vals /= vals.sum()
    x = {u: 0.0 for u in tree.non_root_ids()}
    for leaf, v in zip(leaves, vals):
        u = leaf
        while u != ROOT:
            x[u] += float(v)
            u = tree.parent(u)
    x[tree.c_r] = 1.0
    return x


def dense_multipliers(tree, x, growing_leaf, w_tilde=None, delta=None, growth_rate=None):
    """Independent oracle: assemble and solve the conservation system densely."""
    wt = tree.revised_weights() if w_tilde is None else w_tilde
    dl = tree.shift_vector() if delta is None else delta
    if growth_rate is None:
        h = tree.depth(growing_leaf)
        growth_rate = (2 * tree.k - 1) / (2 * tree.k - h)
    c = {}
    g = {}
    for u in tree.non_root_ids():
        c[u] = (x[u] + dl[u]) / wt[u]
        g[u] = -2.0 * x[u] * growth_rate / wt[u] if u == growing_leaf else 0.0

    internals = [u for u in tree.node_ids() if u == ROOT or tree.children(u)]
    idx = {u: i for i, u in enumerate(internals)}
    n = len(internals)
    a_mat = np.zeros((n, n))
    b_vec = np.zeros(n)

    def add_xdot(row: int, v: int, sign: float) -> None:
        # sign * x'_v with x'_v = g_v + c_v (lam_parent - lam_v), lam = 0 at leaves
        b_vec[row] -= sign * g[v]
        p = tree.parent(v)
        if p in idx:
            a_mat[row, idx[p]] += sign * c[v]
        if v in idx:
            a_mat[row, idx[v]] -= sign * c[v]

    for u in internals:
        row = idx[u]
        if u == ROOT:
            add_xdot(row, tree.c_r, 1.0)
        else:
            for v in tree.children(u):
                add_xdot(row, v, 1.0)
            add_xdot(row, u, -1.0)
    lam_vec = np.linalg.solve(a_mat, b_vec)
    lam = {u: 0.0 for u in tree.node_ids()}
    for u, i in idx.items():
        lam[u] = float(lam_vec[i])
    return lam


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
