"""Multiplier solver: hand-solved cases, sign/conservation, dense oracle."""

import numpy as np
import pytest

from conftest import dense_multipliers, random_game_tree, random_state
from lgtsim.dynamics import solve_multipliers, subtree_rates
from lgtsim.state import apply_fork, init_state
from lgtsim.tree import ROOT, new_game_tree


def test_single_leaf_multiplier_equals_growth_rate():
    # only leaf is c_r: lam_r = 2 x w~' / (x + delta) = w~' and x stays fixed
    t = new_game_tree(3, 1.0)
    x = init_state(t)
    lam = solve_multipliers(t, x, t.c_r)
    assert lam[ROOT] == pytest.approx(1.0, abs=1e-12)  # w~' = (2k-1)/(2k-1)
    rates = subtree_rates(t, x, t.c_r, lam)
    assert rates[t.c_r] == pytest.approx(0.0, abs=1e-12)


def test_two_leaf_star_hand_solved():
    # x_a = x_b = 1/2, delta_a = delta_b = 1/2, w~_a = w~_b = 1, w~'_a = 1:
    # the 2x2 conservation solve gives lam_{c_r} = lam_r = 1/2 and
    # x'_a = -1/2, x'_b = +1/2
    t = new_game_tree(2, 1.0)
    x = init_state(t)
    a, b = t.fork(t.c_r, 2)
    x = apply_fork(x, t.c_r, [a, b])
    wt = {t.c_r: 1.0, a: 1.0, b: 1.0}
    dl = {t.c_r: 1.0, a: 0.5, b: 0.5}
    lam = solve_multipliers(t, x, a, w_tilde=wt, delta=dl, growth_rate=1.0)
    assert lam[t.c_r] == pytest.approx(0.5, abs=1e-12)
    assert lam[ROOT] == pytest.approx(0.5, abs=1e-12)
    assert lam[a] == 0.0 and lam[b] == 0.0
    rates = subtree_rates(t, x, a, lam, w_tilde=wt, delta=dl, growth_rate=1.0)
    assert rates[a] == pytest.approx(-0.5, abs=1e-12)
    assert rates[b] == pytest.approx(0.5, abs=1e-12)
    assert rates[t.c_r] == pytest.approx(0.0, abs=1e-12)


def test_zero_mass_leaf_is_stationary():
    t = new_game_tree(3, 1.0)
    x = init_state(t)
    a, b = t.fork(t.c_r, 2)
    x = apply_fork(x, t.c_r, [a, b])
    x[a], x[b] = 0.0, 1.0
    lam = solve_multipliers(t, x, a)
    assert all(v == 0.0 for v in lam.values())
    rates = subtree_rates(t, x, a, lam)
    assert all(v == 0.0 for v in rates.values())


def test_leaves_zero_and_sign_everywhere():
    for seed in range(20):
        gen = np.random.default_rng(seed)
        t = random_game_tree(gen, 5, 14)
        x = random_state(t, gen)
        leaves = t.leaves()
        leaf = leaves[int(gen.integers(len(leaves)))]
        lam = solve_multipliers(t, x, leaf)
        for u in leaves:
            assert lam[u] == 0.0
        assert all(v >= -1e-9 for v in lam.values())


def test_rates_conserve_and_pin_root():
    for seed in range(20):
        gen = np.random.default_rng(100 + seed)
        t = random_game_tree(gen, 4, 16)
        x = random_state(t, gen)
        leaves = t.leaves()
        leaf = leaves[int(gen.integers(len(leaves)))]
        lam = solve_multipliers(t, x, leaf)
        rates = subtree_rates(t, x, leaf, lam)
        assert rates[t.c_r] == pytest.approx(0.0, abs=1e-10)
        for u in t.node_ids():
            kids = t.children(u)
            if kids and u != ROOT:
                assert sum(rates[v] for v in kids) == pytest.approx(rates[u], abs=1e-10)


def test_matches_dense_solve_smoke():
    # the full 200-tree sweep lives in the acceptance suite
    for seed in range(25):
        gen = np.random.default_rng(1000 + seed)
        t = random_game_tree(gen, 5, 16)
        x = random_state(t, gen)
        leaves = t.leaves()
        leaf = leaves[int(gen.integers(len(leaves)))]
        lam = solve_multipliers(t, x, leaf)
        oracle = dense_multipliers(t, x, leaf)
        scale = 1.0 + max(abs(v) for v in oracle.values())
        for u in t.node_ids():
            assert abs(lam[u] - oracle[u]) <= 1e-10 * scale
