"""Integrator and game engine: costs, drains, scripts, determinism."""

import math

import numpy as np
import pytest

from lgtsim.dynamics import (
    Game,
    IntegratorConfig,
    deadend_drain,
    integrate_growth,
    run_script,
)
from lgtsim.errors import InvalidParameter, RejectedStep
from lgtsim.harness import AdversaryScript, Delete, Fork, Grow, gen_random_script
from lgtsim.state import apply_fork, init_state, validate, project_after_delete
from lgtsim.tree import new_game_tree


def star(k=2, eps=1.0, w_a=1.0, w_b=1.0):
    t = new_game_tree(k, eps)
    x = init_state(t)
    a, b = t.fork(t.c_r, 2)
    x = apply_fork(x, t.c_r, [a, b])
    t._nodes[a].weight = w_a
    t._nodes[b].weight = w_b
    return t, x, a, b


def test_config_validation():
    with pytest.raises(InvalidParameter):
        IntegratorConfig(max_relative_step=0.0)
    with pytest.raises(InvalidParameter):
        IntegratorConfig(drain_tolerance=-1.0)
    with pytest.raises(InvalidParameter):
        IntegratorConfig(samples_per_step=1)


class TestIntegrateGrowth:
    def test_zero_duration_is_a_no_op(self):
        t, x, a, _ = star()
        x2, delta, samples, _ = integrate_growth(t, x, a, 0.0)
        assert x2 == x
        assert delta.service == 0.0 and delta.movement == 0.0

    def test_zero_mass_leaf_stays_frozen(self):
        t, x, a, b = star()
        x[a], x[b] = 0.0, 1.0
        x2, delta, _, _ = integrate_growth(t, x, a, 1.0)
        assert delta.service == 0.0
        assert delta.movement == 0.0
        assert x2[a] == 0.0 and x2[b] == 1.0
        assert t.weight(a) == pytest.approx(2.0)  # true weight still grew

    def test_single_leaf_pays_full_service_and_never_moves(self):
        t = new_game_tree(3, 1.0)
        x = init_state(t)
        x2, delta, _, stats = integrate_growth(t, x, t.c_r, 2.0)
        assert x2 == {t.c_r: 1.0}
        assert delta.service == pytest.approx(2.0, rel=1e-12)
        assert delta.movement == 0.0
        assert stats.min_lambda >= -1e-9

    def test_star_initial_rates_show_in_short_run(self):
        # at t=0 the flow moves mass at the hand-solved rate; for a tiny
        # duration the ledger is first-order in tau
        t, x, a, b = star(w_a=0.0, w_b=0.0)
        tau = 1e-4
        _, delta, _, _ = integrate_growth(t, x, a, tau)
        assert delta.service == pytest.approx(0.5 * tau, rel=2e-3)

    def test_conservation_and_lambda_sign_tracked(self):
        t, x, a, b = star()
        _, _, _, stats = integrate_growth(t, x, a, 1.5)
        assert stats.max_conservation_residual <= 1e-9
        assert stats.min_lambda >= -1e-9

    def test_samples_cover_endpoints(self):
        t, x, a, _ = star()
        _, _, samples, _ = integrate_growth(t, x, a, 0.75)
        assert samples[0].t == 0.0
        assert samples[-1].t == pytest.approx(0.75, abs=1e-9)
        assert len(samples) == IntegratorConfig().samples_per_step
        for s in samples:
            assert set(s.x) == set(t.non_root_ids())

    def test_stiff_fresh_edge_completes_quickly(self):
        # a leaf born very late has a ~1e-29 revised weight; the integrator
        # must ride the stiffness out in a bounded number of steps
        t = new_game_tree(4, 1.0)
        x = init_state(t)
        kids = t.fork(t.c_r, 2)
        x = apply_fork(x, t.c_r, kids)
        for v in kids:
            t._nodes[v].creation_step = 95
        x2, delta, _, stats = integrate_growth(t, x, kids[0], 1.0)
        assert stats.steps < 50_000
        assert stats.max_conservation_residual <= 1e-9
        assert 0.0 <= x2[kids[0]] < 0.01  # mass fled the growing edge
        assert delta.service < 0.15

    def test_rejects_non_leaf_and_negative_duration(self):
        t, x, a, _ = star()
        with pytest.raises(RejectedStep):
            integrate_growth(t, x, t.c_r, 1.0)
        with pytest.raises(RejectedStep):
            integrate_growth(t, x, a, -0.5)


class TestDeadendDrain:
    def test_already_empty_leaf_costs_nothing(self):
        t, x, a, b = star()
        x[a], x[b] = 0.0, 1.0
        x_bar, movement, _ = deadend_drain(t, x, a)
        assert movement == 0.0
        assert x_bar[a] == 0.0

    def test_star_drain_transports_half_across_both_edges(self):
        t, x, a, b = star(w_a=1.0, w_b=2.0)
        x_bar, movement, stats = deadend_drain(t, x, a)
        assert x_bar[a] == 0.0
        assert x_bar[b] == pytest.approx(1.0, abs=1e-9)
        # mass 1/2 crossed the a-edge and the b-edge: w_a/2 + w_b/2
        assert movement >= 1.5 - 1e-9
        assert movement == pytest.approx(1.5, rel=1e-3)
        assert stats.min_lambda >= -1e-9

    def test_post_drain_state_projects_cleanly(self):
        t, x, a, b = star()
        x_bar, _, _ = deadend_drain(t, x, a)
        out = t.delete_leaf(a)
        x2 = project_after_delete(x_bar, out)
        assert validate(t, x2) == []

    def test_drain_rejects_root_child(self):
        t = new_game_tree(2, 1.0)
        x = init_state(t)
        with pytest.raises(RejectedStep):
            deadend_drain(t, x, t.c_r)

    def test_deep_drain_from_unbalanced_state(self):
        t = new_game_tree(4, 1.0)
        x = init_state(t)
        a, b = t.fork(t.c_r, 2)
        x = apply_fork(x, t.c_r, [a, b])
        c, d = t.fork(a, 2)
        x = apply_fork(x, a, [c, d])
        x[c], x[d] = 0.999, 0.001
        x[a] = 1.0
        x[b] = 0.0
        t._nodes[c].weight = 0.7
        x_bar, movement, _ = deadend_drain(t, x, c)
        assert x_bar[c] == 0.0
        assert abs(x_bar[a] - (x_bar[c] + x_bar[d])) < 1e-9
        assert movement > 0.0


class TestRunScript:
    def test_empty_script_zero_cost(self):
        trace = run_script(AdversaryScript(k=3, epsilon=1.0, steps=[]))
        assert trace.records == []
        assert trace.total_cost == 0.0

    def test_three_step_example_merges_back_to_single_edge(self):
        # fork, grow one child, delete the other: the survivor merges into
        # the root edge and the final tree is a single root-leaf edge
        script = AdversaryScript(
            k=2, epsilon=1.0,
            steps=[Fork(leaf=1, q=2), Grow(leaf=2, duration=1.0), Delete(leaf=3)],
        )
        script.validate()
        trace = run_script(script)
        assert len(trace.records) == 3
        assert trace.records[2].merged is not None
        final_nodes = trace.final_tree["root"]["children"]
        assert len(final_nodes) == 1 and final_nodes[0]["children"] == []
        assert trace.total_cost > 0.0

    def test_costs_are_nonnegative_and_ledger_consistent(self):
        script = gen_random_script(3, 30, seed=5)
        trace = run_script(script)
        assert trace.ledger.service >= 0.0 and trace.ledger.movement >= 0.0
        service = sum(r.service for r in trace.records)
        movement = sum(r.movement for r in trace.records)
        assert trace.ledger.service == pytest.approx(service, abs=1e-9)
        assert trace.ledger.movement == pytest.approx(movement, abs=1e-9)
        per_step = sum(s + m for _, _, s, m in trace.ledger.per_step)
        assert trace.total_cost == pytest.approx(per_step, abs=1e-9)

    def test_replay_is_bitwise_deterministic(self):
        script = gen_random_script(4, 25, seed=9)
        t1 = run_script(script).to_json()
        t2 = run_script(script).to_json()
        assert t1 == t2

    def test_trace_roundtrips_through_json(self):
        from lgtsim.dynamics import GameTrace

        script = gen_random_script(3, 12, seed=2)
        trace = run_script(script)
        again = GameTrace.from_json(trace.to_json())
        assert again.to_json() == trace.to_json()


def test_halving_step_changes_cost_little():
    script = gen_random_script(3, 20, seed=31)
    coarse = run_script(script, IntegratorConfig(max_relative_step=1e-3))
    fine = run_script(script, IntegratorConfig(max_relative_step=5e-4))
    assert fine.total_cost == pytest.approx(coarse.total_cost, rel=0.01)
