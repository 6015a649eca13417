"""Evolving-tree structure, mutations, and derived quantities."""

import math

import numpy as np
import pytest

from conftest import random_game_tree
from lgtsim.errors import InvalidNode, InvalidParameter, RejectedStep
from lgtsim.tree import ROOT, EvolvingTree, birth_term_value, new_game_tree

TOL = 1e-12


def test_fresh_tree_shape():
    t = new_game_tree(3, 1.0)
    assert len(t) == 2
    assert t.c_r == 1
    assert t.is_leaf(t.c_r)
    assert t.weight(t.c_r) == 0.0
    assert t.creation_step(t.c_r) == 0
    assert t.current_step == 1
    assert t.d_max_seen == 1
    t.check_invariants()


def test_fresh_revised_weight_k3():
    t = new_game_tree(3, 1.0)
    # (2k-1)/(2k-1) * (0 + 1*2^0) = 1
    assert t.revised_weight(t.c_r) == pytest.approx(1.0, abs=TOL)


def test_fresh_revised_weight_k2_small_eps():
    t = new_game_tree(2, 0.5)
    assert t.revised_weight(t.c_r) == pytest.approx(0.5, abs=TOL)


@pytest.mark.parametrize("k,eps", [(1, 1.0), (0, 1.0), (2, 0.0), (2, -1.0), (3, float("nan"))])
def test_bad_parameters_rejected(k, eps):
    with pytest.raises(InvalidParameter):
        new_game_tree(k, eps)


def test_root_has_no_revised_weight():
    t = new_game_tree(2, 1.0)
    with pytest.raises(InvalidNode):
        t.revised_weight(ROOT)
    with pytest.raises(InvalidNode):
        t.weight(ROOT)


class TestFork:
    def test_fresh_fork_shape_and_shift(self):
        t = new_game_tree(3, 1.0)
        kids = t.fork(t.c_r, 2)
        assert len(kids) == 2 and all(t.is_leaf(v) for v in kids)
        assert all(t.depth(v) == 2 for v in kids)
        delta = t.shift_vector()
        # delta_child = delta_{c_r} / (d_{c_r} - 1) = 1/2
        assert delta[kids[0]] == pytest.approx(0.5, abs=TOL)
        assert delta[kids[1]] == pytest.approx(0.5, abs=TOL)
        assert all(t.creation_step(v) == 1 for v in kids)
        assert t.current_step == 2
        t.check_invariants()

    def test_fork_at_depth_bound_rejected(self):
        t = new_game_tree(2, 1.0)
        kids = t.fork(t.c_r, 2)
        with pytest.raises(RejectedStep):
            t.fork(kids[0], 2)  # would be depth 3 > k = 2

    def test_fork_q3_updates_degree_watermark(self):
        t = new_game_tree(3, 1.0)
        t.fork(t.c_r, 3)
        assert t.degree(t.c_r) == 4
        assert t.d_max_seen >= 4

    def test_fork_rejects_small_q_and_non_leaf(self):
        t = new_game_tree(3, 1.0)
        with pytest.raises(RejectedStep):
            t.fork(t.c_r, 1)
        t.fork(t.c_r, 2)
        with pytest.raises(RejectedStep):
            t.fork(t.c_r, 2)  # no longer a leaf


class TestDelete:
    def test_delete_triggers_merge_and_weight_sum(self):
        t = new_game_tree(3, 1.0)
        cr = t.c_r
        a, b = t.fork(cr, 2)
        t._nodes[cr].weight = 1.0
        t._nodes[b].weight = 2.0
        out = t.delete_leaf(a)
        assert out.leaf == a
        assert out.merged == (cr, b)
        # surviving node took over the parent edge: 2 + 1 = 3
        assert t.c_r == b
        assert t.weight(b) == pytest.approx(3.0, abs=TOL)
        assert t.creation_step(b) == 1  # keeps its own creation step
        t.check_invariants()

    def test_delete_root_child_rejected(self):
        t = new_game_tree(3, 1.0)
        with pytest.raises(RejectedStep):
            t.delete_leaf(t.c_r)

    def test_delete_non_leaf_rejected(self):
        t = new_game_tree(3, 1.0)
        t.fork(t.c_r, 2)
        with pytest.raises(RejectedStep):
            t.delete_leaf(t.c_r)

    def test_delete_without_merge(self):
        t = new_game_tree(3, 1.0)
        a, b, c = t.fork(t.c_r, 3)
        out = t.delete_leaf(b)
        assert out.merged is None
        assert set(t.children(t.c_r)) == {a, c}
        t.check_invariants()

    def test_merge_preserves_root_leaf_distances(self, rng):
        for trial in range(25):
            t = random_game_tree(np.random.default_rng(trial), 4, 12)
            deletable = [u for u in t.leaves() if u != t.c_r]
            if not deletable:
                continue
            victim = deletable[int(rng.integers(len(deletable)))]
            before = {u: t.root_distance(u) for u in t.leaves() if u != victim}
            t.delete_leaf(victim)
            t.check_invariants()
            for u, d in before.items():
                assert t.root_distance(u) == pytest.approx(d, abs=1e-9)


class TestRevisedWeights:
    def test_point_example(self):
        # k=2, h=2, w=1, j=3, eps=1: (3/2)*(1 + 1/8) = 1.6875
        t = new_game_tree(2, 1.0)
        a, b = t.fork(t.c_r, 2)
        t._nodes[a].weight = 1.0
        t._nodes[a].creation_step = 3
        assert t.revised_weight(a) == pytest.approx(1.6875, abs=TOL)

    def test_unit_factor_at_depth_one(self):
        t = new_game_tree(3, 1.0)
        assert t.revised_weight(t.c_r) == pytest.approx(1.0, abs=TOL)

    def test_factor_range_random(self):
        for seed in range(10):
            t = random_game_tree(np.random.default_rng(seed), 5, 15)
            for u in t.non_root_ids():
                base = t.weight(u) + t.birth_term(u)
                wt = t.revised_weight(u)
                assert base - TOL <= wt < 2.0 * base
                assert wt > 0.0

    def test_positive_at_zero_weight(self):
        t = new_game_tree(2, 1e-6)
        assert t.revised_weight(t.c_r) > 0.0

    def test_monotone_in_weight(self):
        t = new_game_tree(3, 1.0)
        w1 = t.revised_weight(t.c_r)
        t.add_weight(t.c_r, 0.5)
        assert t.revised_weight(t.c_r) > w1


class TestShiftVector:
    def test_fresh(self):
        t = new_game_tree(3, 1.0)
        assert t.shift_vector() == {t.c_r: 1.0}

    def test_full_binary_powers_of_two(self):
        t = new_game_tree(4, 1.0)
        frontier = t.fork(t.c_r, 2)
        for _ in range(2):
            nxt = []
            for leaf in frontier:
                nxt.extend(t.fork(leaf, 2))
            frontier = nxt
        delta = t.shift_vector()
        depths = t.depths()
        for u, d in delta.items():
            assert d == pytest.approx(2.0 ** (1 - depths[u]), abs=TOL)

    def test_delete_changes_divisor(self):
        t = new_game_tree(3, 1.0)
        a, b, c = t.fork(t.c_r, 3)
        assert t.shift_vector()[a] == pytest.approx(1.0 / 3.0, abs=TOL)
        t.delete_leaf(c)
        # parent's child count fell from 3 to 2
        assert t.shift_vector()[a] == pytest.approx(0.5, abs=TOL)

    def test_polytope_membership_and_floor(self):
        for seed in range(10):
            t = random_game_tree(np.random.default_rng(seed), 4, 14)
            delta = t.shift_vector()
            depths = t.depths()
            for u in t.node_ids():
                kids = t.children(u)
                if kids and u != ROOT:
                    assert abs(sum(delta[v] for v in kids) - delta[u]) <= 1e-12
            for u in t.non_root_ids():
                assert delta[u] >= t.d_max_seen ** (1 - depths[u]) - 1e-12


class TestOptDistance:
    def test_fresh_zero(self):
        assert new_game_tree(2, 1.0).opt_distance() == 0.0

    def test_two_branch_minimum(self):
        t = new_game_tree(3, 1.0)
        a, b = t.fork(t.c_r, 2)
        t._nodes[t.c_r].weight = 1.0
        t._nodes[a].weight = 2.0
        t._nodes[b].weight = 5.0
        assert t.opt_distance() == pytest.approx(3.0, abs=TOL)

    def test_merge_keeps_opt_additive(self):
        t = new_game_tree(3, 1.0)
        a, b = t.fork(t.c_r, 2)
        t._nodes[t.c_r].weight = 1.0
        t._nodes[a].weight = 2.0
        t._nodes[b].weight = 5.0
        t.delete_leaf(b)
        assert t.opt_distance() == pytest.approx(3.0, abs=TOL)


def test_step_counter_increments_on_every_mutation():
    t = new_game_tree(3, 1.0)
    assert t.current_step == 1
    kids = t.fork(t.c_r, 2)
    assert t.current_step == 2
    t.add_weight(kids[0], 0.5)
    t.advance_step()
    assert t.current_step == 3
    t.delete_leaf(kids[0])
    assert t.current_step == 4


def test_ids_never_reused():
    t = new_game_tree(3, 1.0)
    a, b = t.fork(t.c_r, 2)
    t.delete_leaf(b)
    c, d = t.fork(t.c_r, 2)  # c_r is a leaf again after the merge
    assert {c, d}.isdisjoint({a, b})


def test_invariants_random_fuzz():
    for seed in range(30):
        t = random_game_tree(np.random.default_rng(seed), 5, 25)
        t.check_invariants()


def test_serialization_roundtrip():
    t = random_game_tree(np.random.default_rng(3), 4, 12)
    d = t.to_dict()
    t2 = EvolvingTree.from_dict(d)
    assert t2.to_dict() == d
    assert sorted(t2.node_ids()) == sorted(t.node_ids())
    assert t2.c_r == t.c_r
    for u in t.non_root_ids():
        assert t2.weight(u) == t.weight(u)
        assert t2.creation_step(u) == t.creation_step(u)


def test_birth_term_underflow_guard():
    assert birth_term_value(1.0, 5000) > 0.0
    assert birth_term_value(1.0, 3) == pytest.approx(0.125)
