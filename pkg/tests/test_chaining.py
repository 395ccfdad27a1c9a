from __future__ import annotations

import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from chainbench import _kernels_py
from chainbench.chaining import (
    CoverTooCoarse,
    FunctionDictionary,
    HierExp4,
    HierHedge,
    build_covering_tree,
    depth_for,
    hierexp4_gamma,
    hierhedge_epsilon,
    leaf_recommend,
)
from chainbench.core import ActionGrid, FeedbackModel, GuardedFeedback, LossFunction, RandomSource, Regularity
from chainbench.environments import EnvironmentSpec, generate_environment
from chainbench.experts import AdaptiveRate, HedgeState, exp4_range_estimates


def _constants(values, resolution=5) -> FunctionDictionary:
    return FunctionDictionary.from_callables([lambda x, c=c: c for c in values], 1, resolution)


def _count_lipschitz_sequences(bins: int) -> int:
    # oracle: brute-force enumeration of knot values with adjacent steps of at most one
    return sum(
        1
        for seq in itertools.product(range(bins + 1), repeat=bins)
        if all(abs(a - b) <= 1 for a, b in zip(seq, seq[1:]))
    )


class TestDictionary:
    @pytest.mark.parametrize("bins", [1, 2, 3, 4])
    def test_canonical_size_matches_enumeration(self, bins):
        assert len(FunctionDictionary.canonical(bins)) == _count_lipschitz_sequences(bins)

    def test_known_sizes(self):
        assert len(FunctionDictionary.canonical(2)) == 7
        assert len(FunctionDictionary.canonical(4)) == 95

    def test_members_are_distinct(self):
        table = FunctionDictionary.canonical(4).table
        assert len(np.unique(table, axis=0)) == len(table)

    @settings(max_examples=30)
    @given(st.floats(0, 1), st.floats(0, 1))
    def test_canonical_members_are_lipschitz(self, a, b):
        dictionary = FunctionDictionary.canonical(4)
        fa, fb = dictionary.evaluate([a]), dictionary.evaluate([b])
        assert np.all(np.abs(fa - fb) <= abs(a - b) + 1e-12)
        assert np.all((fa >= 0) & (fa <= 1))

    def test_canonical_in_two_dimensions_uses_mean(self):
        dictionary = FunctionDictionary.canonical(2, d=2)
        np.testing.assert_allclose(dictionary.evaluate([0.2, 0.6]), FunctionDictionary.canonical(2).evaluate([0.4]))

    def test_from_callables_deduplicates(self):
        assert len(_constants([0.0, 0.5, 0.5, 1.0])) == 3


class TestCoveringTree:
    def test_singleton_dictionary_is_a_chain(self):
        tree = build_covering_tree(_constants([0.5]), 3, use_cache=False)
        assert tree.n_nodes == 4
        assert [len(tree.nodes_at(m)) for m in range(4)] == [1, 1, 1, 1]

    def test_three_constants(self):
        dictionary = _constants([0.0, 0.5, 1.0])
        tree = build_covering_tree(dictionary, 1, use_cache=False)
        assert len(tree.nodes_at(0)) == 1
        # greedy from member 0: radius 1 at one centre, 1/2 once the far end is added
        assert len(tree.nodes_at(1)) == 2
        covered = dictionary.table[tree.label[tree.nodes_at(1)]]
        assert np.max(np.min(np.abs(dictionary.table[:, None, :] - covered[None]).max(axis=2), axis=1)) <= 0.5

    def test_cover_too_coarse_raises(self):
        dictionary = FunctionDictionary(np.array([[0.0], [2.5]]), lambda x: np.zeros(2), 1, "wide")
        with pytest.raises(CoverTooCoarse):
            build_covering_tree(dictionary, 1, use_cache=False)

    @pytest.mark.parametrize("depth", [0, 1, 2, 3, 4])
    def test_leaf_spread_by_pairwise_brute_force(self, depth):
        dictionary = FunctionDictionary.canonical(4)
        tree = build_covering_tree(dictionary, depth)
        table = dictionary.table
        for v in range(tree.n_nodes):
            leaves = _leaves_below(tree, v)
            vals = table[tree.label[leaves]]
            spread = np.max(np.abs(vals[:, None] - vals[None]))
            assert spread <= 2.0 ** (2 - tree.level[v]) + 1e-12

    @pytest.mark.parametrize("depth", [1, 2, 3])
    def test_levels_are_covers_and_parents_closest(self, depth):
        dictionary = FunctionDictionary.canonical(4)
        tree = build_covering_tree(dictionary, depth)
        table = dictionary.table
        for m in range(depth + 1):
            net = table[tree.label[tree.nodes_at(m)]]
            dist = np.max(np.abs(table[:, None] - net[None]), axis=2).min(axis=1)
            assert dist.max() <= 2.0**-m + 1e-12
        for v in range(1, tree.n_nodes):
            up = tree.nodes_at(tree.level[v] - 1)
            d_up = np.max(np.abs(table[tree.label[up]] - table[tree.label[v]]), axis=1)
            assert tree.parent[v] == up[int(np.argmin(d_up))]

    def test_children_contiguous(self):
        tree = build_covering_tree(FunctionDictionary.canonical(4), 3)
        for v in range(tree.n_nodes):
            kids = tree.children(v)
            assert np.all(tree.parent[kids] == v)
        assert tree.level[0] == 0 and len(tree.nodes_at(0)) == 1

    def test_dump_format(self):
        tree = build_covering_tree(_constants([0.0, 0.5, 1.0]), 1, use_cache=False)
        lines = tree.dump().splitlines()
        assert lines[0] == "node\tlevel\tparent\tlabel"
        assert len(lines) == tree.n_nodes + 1
        assert all(len(line.split("\t")) == 4 for line in lines)


def _leaves_below(tree, v) -> np.ndarray:
    out, stack = [], [v]
    while stack:
        u = stack.pop()
        if tree.child_count[u] == 0:
            out.append(u)
        else:
            stack.extend(int(w) for w in tree.children(u))
    return np.array(out)


class TestTuning:
    def test_leaf_recommend(self):
        grid = ActionGrid.dyadic(2)
        assert leaf_recommend(0.3, grid) == 1
        assert leaf_recommend(0.375, grid) == 1
        assert leaf_recommend(0.0, grid) == 0

    def test_gamma_formulas(self):
        T = 4096
        assert hierexp4_gamma(T, 1) == pytest.approx(T ** (-1 / 3))
        assert hierexp4_gamma(T, 2) == pytest.approx(T ** (-1 / 3) * math.log(T) ** (2 / 3))
        assert hierexp4_gamma(T, 4) == pytest.approx(T ** (-1 / 5))

    def test_hedge_epsilon(self):
        assert hierhedge_epsilon(1000, 3) == pytest.approx(0.1)
        assert hierhedge_epsilon(4096, 1) == pytest.approx(1 / 64)

    def test_depth_is_floor(self):
        assert depth_for(1 / 16) == 4
        assert depth_for(0.1) == 3
        assert depth_for(1.0) == 0


def _guard(losses_fn, model=FeedbackModel.ONE_SIDED):
    return GuardedFeedback(model, LossFunction(losses_fn, Regularity.LIPSCHITZ))


class TestHierExp4:
    def test_gamma_one_is_unit_mass(self):
        learner = HierExp4(FunctionDictionary.canonical(2), 100, gamma=1.0)
        play = learner.round([0.3], RandomSource(0), _guard(lambda y: np.abs(np.asarray(y) - 0.5)))
        np.testing.assert_array_equal(play.probs, [1.0])

    def test_exploration_floor_and_discipline(self):
        trace = generate_environment(EnvironmentSpec("lipschitz-synthetic", 1, 200, 1))
        learner = HierExp4(FunctionDictionary.canonical(4), 200)
        rng = RandomSource(1)
        for t in range(200):
            guard = GuardedFeedback(FeedbackModel.ONE_SIDED, trace.loss(t))
            play = learner.round(trace.contexts[t], rng, guard)
            assert play.probs[0] >= learner.gamma - 1e-15
            assert abs(play.probs.sum() - 1) < 1e-9
            assert guard.violations == 0

    def test_expert_losses_match_direct_estimates(self):
        trace = generate_environment(EnvironmentSpec("lipschitz-synthetic", 1, 60, 2))
        learner = HierExp4(FunctionDictionary.canonical(4), 4096)
        rng = RandomSource(3)
        tree = learner.tree
        for t in range(60):
            guard = GuardedFeedback(FeedbackModel.ONE_SIDED, trace.loss(t))
            play = learner.round(trace.contexts[t], rng, guard)
            plan = learner.last_plan
            losses = np.full(learner.grid.count, np.nan)
            losses[play.index:] = trace.loss(t)(learner.grid.values[play.index:])
            cdf = np.cumsum(plan["pstar"])
            for v in range(tree.n_nodes):
                if tree.child_count[v] == 0:
                    continue
                support = np.unique(plan["actions"][_leaves_below(tree, v)])
                est = exp4_range_estimates(losses, support, cdf, play.index)
                for w in tree.children(v):
                    p_w = learner.node_distribution(int(w), plan["q"], plan["actions"])
                    assert plan["tilde"][w] == pytest.approx(p_w @ est, abs=1e-12)

    def test_unbiased_node_losses_by_enumeration(self):
        trace = generate_environment(EnvironmentSpec("lipschitz-synthetic", 1, 30, 5))
        learner = HierExp4(FunctionDictionary.canonical(4), 4096)
        rng = RandomSource(4)
        for t in range(29):
            learner.round(trace.contexts[t], rng, GuardedFeedback(FeedbackModel.ONE_SIDED, trace.loss(t)))
        x = trace.contexts[29]
        ell = trace.loss(29)(learner.grid.values)
        actions = learner.leaf_actions(x)
        q, _, p_root = learner.forward(actions)
        pstar = learner.root_mixture(p_root)
        tree = learner.tree
        mean = np.zeros(tree.n_nodes)
        for i in range(learner.grid.count):
            obs = np.where(np.arange(len(ell)) >= i, ell, np.nan)
            tilde, _ = learner.expert_losses(q, actions, pstar, i, obs)
            mean += pstar[i] * tilde
        anchor = np.zeros(tree.n_nodes, dtype=np.int64)
        for v in range(tree.n_nodes):
            anchor[v] = actions[_leaves_below(tree, v)].max()
        for w in range(1, tree.n_nodes):
            p_w = learner.node_distribution(w, q, actions)
            target = p_w @ ell - ell[anchor[tree.parent[w]]]
            assert mean[w] == pytest.approx(target, abs=1e-10)

    def test_same_leaf_everywhere_collapses_mixture(self):
        learner = HierExp4(_constants([0.5]), 64, gamma=0.25)
        actions = learner.leaf_actions([0.1])
        _, _, p_root = learner.forward(actions)
        pstar = learner.root_mixture(p_root)
        k = learner.grid.nearest(0.5)
        assert pstar[k] == pytest.approx(0.75)
        assert pstar[0] == pytest.approx(0.25)


class TestHierHedge:
    def test_constant_losses_keep_weights_uniform(self):
        learner = HierHedge(FunctionDictionary.canonical(2), 64, depth=2)
        rng = RandomSource(0)
        for x in np.linspace(0, 1, 20):
            learner.round([x], rng, _guard(lambda y: np.full(np.shape(y), 0.3), FeedbackModel.FULL))
        q, _, _ = learner.forward(learner.leaf_actions([0.5]))
        for v in range(learner.tree.n_nodes):
            kids = learner.tree.children(v)
            if len(kids):
                np.testing.assert_allclose(q[kids], 1.0 / len(kids))

    def test_single_function_plays_its_action(self):
        learner = HierHedge(_constants([0.3]), 64, depth=0)
        for x in (0.1, 0.9):
            play = learner.round([x], RandomSource(1), _guard(lambda y: np.asarray(y), FeedbackModel.FULL))
            assert play.value == learner.grid.value(learner.grid.nearest(0.3))

    def test_two_function_tree_reduces_to_hedge(self):
        # constants 0 and 1: the root has both as children and no deeper mixing
        learner = HierHedge(_constants([0.0, 1.0]), 64, depth=1)
        assert learner.tree.n_nodes == 3
        hedge = HedgeState(2, rate=AdaptiveRate(2, learner.cap[0]))
        gen = np.random.default_rng(7)
        rng = RandomSource(2)
        kids = learner.tree.children(0)
        order = learner.tree.label[kids]
        for _ in range(100):
            a, b = gen.random(2)
            fn = lambda y, a=a, b=b: a + (b - a) * np.asarray(y)  # 1-Lipschitz in y
            actions = learner.leaf_actions([0.5])
            q, _, _ = learner.forward(actions)
            np.testing.assert_allclose(q[kids], hedge.distribution()[order], rtol=0, atol=1e-15)
            learner.round([0.5], rng, _guard(fn, FeedbackModel.FULL))
            values = learner.grid.values[actions[kids]]
            expert_losses = np.empty(2)
            expert_losses[order] = fn(values)
            hedge.update(expert_losses)


class TestKernelParity:
    def test_compiled_and_python_forward_update_agree(self):
        from chainbench import kernels

        learner = HierExp4(FunctionDictionary.canonical(4), 4096)
        trace = generate_environment(EnvironmentSpec("lipschitz-synthetic", 1, 40, 8))
        rng = RandomSource(5)
        for t in range(40):
            learner.round(trace.contexts[t], rng, GuardedFeedback(FeedbackModel.ONE_SIDED, trace.loss(t)))
        arrays = learner._arrays
        actions = learner.leaf_actions([0.37])
        a = kernels.tree_forward(*arrays, learner.cum, learner.eta, actions, learner.grid.count)
        b = _kernels_py.tree_forward(*arrays, learner.cum, learner.eta, actions, learner.grid.count)
        for x, y in zip(a, b):
            np.testing.assert_allclose(x, y, rtol=1e-12, atol=1e-15)
        losses = np.random.default_rng(0).random(learner.tree.n_nodes)
        states = []
        for mod in (kernels, _kernels_py):
            cum, eta, var = learner.cum.copy(), learner.eta.copy(), learner.variance.copy()
            mod.tree_update(*arrays, a[0], losses, cum, eta, var, learner.cap)
            vals = mod.tree_propagate(*arrays, a[0], losses.copy())
            top = mod.tree_propagate_max(*arrays, actions.copy())
            states.append((cum, eta, var, vals, top))
        for x, y in zip(*states):
            np.testing.assert_allclose(x, y, rtol=1e-12, atol=1e-15)

    @settings(max_examples=25)
    @given(st.integers(1, 12), st.integers(1, 30), st.integers(0, 4), st.integers(0, 2**31 - 1))
    def test_dp_matches_exhaustive_and_fallback(self, n, B, window, seed):
        from chainbench import kernels

        cost = np.random.default_rng(seed).random((B, n))
        total, path = kernels.lipschitz_dp(cost, window)
        total_py, path_py = _kernels_py.lipschitz_dp(cost, window)
        assert total == pytest.approx(total_py, abs=1e-12)
        np.testing.assert_array_equal(path, path_py)
        assert np.all(np.abs(np.diff(path)) <= window)
        assert cost[np.arange(B), path].sum() == pytest.approx(total, abs=1e-12)
        if n**B <= 5000:
            best = min(
                cost[np.arange(B), list(p)].sum()
                for p in itertools.product(range(n), repeat=B)
                if all(abs(a - b) <= window for a, b in zip(p, p[1:]))
            )
            assert total == pytest.approx(best, abs=1e-12)

    def test_farthest_point_agrees(self):
        from chainbench import kernels

        table = FunctionDictionary.canonical(3).table
        o1, r1 = kernels.farthest_point(np.ascontiguousarray(table))
        o2, r2 = _kernels_py.farthest_point(table)
        np.testing.assert_array_equal(o1, o2)
        np.testing.assert_allclose(r1, r2)
        assert np.all(np.diff(r1) <= 0)
