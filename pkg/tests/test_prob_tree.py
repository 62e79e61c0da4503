import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from socworkbench.prob_tree import (
    EnumerationTooLarge,
    ScenarioTree,
    TreeControlPolicy,
    TreeModel,
    TreeRandomVariable,
    build_binomial_tree,
    conditional_expectation,
    essential_infimum,
    min_closure,
    pairwise_min_control,
    rollout_cost,
    tree_dpp_value,
    verify_essinf_interchange,
)


def lq_tree_model(tree, u_grid=(-1.0, 0.0, 1.0), x0=0.0):
    return TreeModel(
        tree=tree,
        x0=np.array([x0]),
        drift=lambda l, n, x, u: np.array([u]),
        diffusion=lambda l, n, x, u: np.array([1.0]),
        stage_cost=lambda l, n, x, u: float(x[0] ** 2 + u**2),
        terminal_cost=lambda n, x: float(x[0] ** 2),
        u_grid=np.asarray(u_grid),
    )


class TestBuildBinomialTree:
    def test_depth_one(self):
        tree = build_binomial_tree(1, 1.0, 1.0)
        assert tree.nodes_at(1) == 2
        np.testing.assert_allclose(tree.shocks[0][0], [1.0, -1.0])
        np.testing.assert_allclose(tree.probs[0][0], [0.5, 0.5])

    def test_leaf_probabilities_product(self):
        tree = build_binomial_tree(3, 0.25, 1.0)
        assert tree.nodes_at(3) == 8
        np.testing.assert_allclose(tree.atom_probs(3), np.full(8, 0.125))

    def test_shock_scaling(self):
        tree = build_binomial_tree(2, 0.5, 2.0)
        assert tree.shocks[0][0, 0] == pytest.approx(2.0 * np.sqrt(0.5))

    @pytest.mark.parametrize("depth,dt", [(0, 1.0), (-1, 1.0), (2, 0.0), (2, -0.5)])
    def test_rejects_bad_arguments(self, depth, dt):
        with pytest.raises(ValueError):
            build_binomial_tree(depth, dt, 1.0)

    def test_rejects_non_normalized_probabilities(self):
        tree = build_binomial_tree(2, 1.0, 1.0)
        bad = tuple(np.array(p) for p in tree.probs)
        bad[0][0, 0] = 0.6
        with pytest.raises(ValueError, match="sum to 1"):
            ScenarioTree(depth=2, branching=2, probs=bad, shocks=tree.shocks, dt=1.0)

    def test_filtration_refinement(self):
        tree = build_binomial_tree(3, 1.0, 1.0)
        for level in range(1, 4):
            for node in range(tree.nodes_at(level)):
                assert node in tree.children(tree.parent(node))


class TestEssentialInfimum:
    def test_pointwise_min(self):
        fam = [TreeRandomVariable(1, [1.0, 3.0]), TreeRandomVariable(1, [2.0, 2.0])]
        np.testing.assert_array_equal(essential_infimum(fam).values, [1.0, 2.0])

    def test_singleton_identity(self):
        fam = [TreeRandomVariable(1, [5.0, 7.0])]
        np.testing.assert_array_equal(essential_infimum(fam).values, [5.0, 7.0])

    def test_three_members_matches_bruteforce(self):
        values = [[1.0, 3.0], [2.0, 2.0], [0.0, 9.0]]
        fam = [TreeRandomVariable(1, v) for v in values]
        # oracle: minimum over all members, one atom at a time
        expected = [min(v[i] for v in values) for i in range(2)]
        np.testing.assert_array_equal(essential_infimum(fam).values, expected)
        np.testing.assert_array_equal(expected, [0.0, 2.0])

    def test_rejects_mixed_levels(self):
        fam = [TreeRandomVariable(1, [1.0, 2.0]), TreeRandomVariable(2, [1.0, 2.0, 3.0, 4.0])]
        with pytest.raises(ValueError, match="same level"):
            essential_infimum(fam)

    def test_rejects_empty_family(self):
        with pytest.raises(ValueError):
            essential_infimum([])

    def test_dominated_member_is_absorbed(self):
        base = [TreeRandomVariable(1, [1.0, 3.0]), TreeRandomVariable(1, [2.0, 2.0])]
        dominated = TreeRandomVariable(1, [2.5, 3.5])  # >= first member pointwise
        with_dom = essential_infimum(base + [dominated])
        np.testing.assert_array_equal(with_dom.values, essential_infimum(base).values)

    def test_idempotent(self):
        fam = [TreeRandomVariable(1, [1.0, 3.0]), TreeRandomVariable(1, [2.0, 2.0])]
        once = essential_infimum(fam)
        twice = essential_infimum([once])
        np.testing.assert_array_equal(once.values, twice.values)


class TestConditionalExpectation:
    def test_equal_weight_average(self):
        tree = build_binomial_tree(1, 1.0, 1.0)
        rv = TreeRandomVariable(1, [1.0, 3.0])
        assert conditional_expectation(tree, rv, 0).values[0] == pytest.approx(2.0)

    def test_constant_is_preserved(self):
        tree = build_binomial_tree(3, 1.0, 1.0)
        rv = TreeRandomVariable(3, np.full(8, 4.25))
        for target in (0, 1, 2, 3):
            np.testing.assert_allclose(conditional_expectation(tree, rv, target).values, 4.25)

    def test_depth_two_enumerated_weights(self):
        tree = build_binomial_tree(2, 1.0, 1.0)
        rv = TreeRandomVariable(2, [1.0, 2.0, 3.0, 4.0])
        # oracle: enumerate children atoms and their conditional weights
        expected = [0.5 * 1 + 0.5 * 2, 0.5 * 3 + 0.5 * 4]
        np.testing.assert_allclose(conditional_expectation(tree, rv, 1).values, expected)

    def test_rejects_target_above_level(self):
        tree = build_binomial_tree(2, 1.0, 1.0)
        rv = TreeRandomVariable(1, [1.0, 2.0])
        with pytest.raises(ValueError):
            conditional_expectation(tree, rv, 2)

    @given(st.integers(0, 3), st.integers(0, 3), st.lists(st.floats(-50, 50), min_size=8, max_size=8))
    @settings(max_examples=40, deadline=None)
    def test_tower_property_exact(self, l_low, l_high, values):
        l1, l2 = sorted((l_low, l_high))
        tree = build_binomial_tree(3, 1.0, 1.0)
        rv = TreeRandomVariable(3, values)
        via_l2 = conditional_expectation(tree, conditional_expectation(tree, rv, l2), l1)
        direct = conditional_expectation(tree, rv, l1)
        np.testing.assert_array_equal(via_l2.values, direct.values)


class TestEssinfInterchange:
    def test_min_closed_family_example(self):
        tree = build_binomial_tree(1, 1.0, 1.0)
        fam = [
            TreeRandomVariable(1, [1.0, 3.0]),
            TreeRandomVariable(1, [2.0, 2.0]),
            TreeRandomVariable(1, [1.0, 2.0]),
        ]
        rep = verify_essinf_interchange(tree, fam, 0)
        assert rep.max_abs_gap == 0.0
        # both sides equal 1.5: E(essinf) on the single level-0 atom
        essinf = essential_infimum(fam)
        assert conditional_expectation(tree, essinf, 0).values[0] == pytest.approx(1.5)

    def test_singleton(self):
        tree = build_binomial_tree(2, 1.0, 1.0)
        rep = verify_essinf_interchange(tree, [TreeRandomVariable(2, [1.0, 4.0, 2.0, 8.0])], 1)
        assert rep.max_abs_gap == 0.0

    def test_internal_closure_of_open_family(self):
        tree = build_binomial_tree(1, 1.0, 1.0)
        fam = [TreeRandomVariable(1, [1.0, 3.0]), TreeRandomVariable(1, [2.0, 2.0])]
        rep = verify_essinf_interchange(tree, fam, 0)
        assert rep.closed_size == 3  # the pointwise min joined the family
        assert rep.max_abs_gap <= 1e-15

    def test_rejects_empty(self):
        tree = build_binomial_tree(1, 1.0, 1.0)
        with pytest.raises(ValueError):
            verify_essinf_interchange(tree, [], 0)

    @given(st.integers(0, 60))
    @settings(max_examples=25, deadline=None)
    def test_randomized_families_zero_gap(self, seed):
        rng = np.random.default_rng(seed)
        depth = int(rng.integers(2, 5))
        tree = build_binomial_tree(depth, 0.5, 1.0)
        level = int(rng.integers(1, depth + 1))
        fam = [
            TreeRandomVariable(level, rng.normal(size=tree.nodes_at(level)))
            for _ in range(int(rng.integers(2, 6)))
        ]
        rep = verify_essinf_interchange(tree, fam, int(rng.integers(0, level)))
        assert rep.max_abs_gap <= 1e-12

    def test_min_closure_terminates_and_contains_total_min(self):
        rng = np.random.default_rng(3)
        fam = [TreeRandomVariable(2, rng.normal(size=4)) for _ in range(4)]
        closed = min_closure(fam)
        total = essential_infimum(fam).values
        assert any(np.array_equal(rv.values, total) for rv in closed)


def enumerate_value_oracle(model, level=0, node=0, x=None):
    """Independent oracle: enumerate every adapted policy on the whole tree
    and take the minimum rollout cost from (level, node, x)."""
    tree = model.tree
    nodes = [(lv, nd) for lv in range(tree.depth) for nd in range(tree.nodes_at(lv))]
    best = np.inf
    for combo in itertools.product(model.u_grid, repeat=len(nodes)):
        policy = TreeControlPolicy.constant(tree, 0.0)
        for (lv, nd), u in zip(nodes, combo):
            policy.controls[lv][nd] = u
        best = min(best, rollout_cost(model, policy, level, node, x))
    return best


class TestTreeDpp:
    def test_depth_one_example(self):
        tree = build_binomial_tree(1, 1.0, 1.0)
        model = TreeModel(
            tree=tree,
            x0=np.array([0.0]),
            drift=lambda l, n, x, u: np.array([u]),
            diffusion=lambda l, n, x, u: np.array([1.0]),
            stage_cost=lambda l, n, x, u: float(u**2),
            terminal_cost=lambda n, x: float(x[0] ** 2),
            u_grid=np.array([-1.0, 0.0, 1.0]),
        )
        rep = tree_dpp_value(model, 1)
        assert rep.root_value == pytest.approx(1.0)
        assert rep.dpp_gap == 0.0
        assert rep.optimal_policy.at(0, 0) == 0.0

    def test_zero_costs(self):
        tree = build_binomial_tree(3, 0.5, 1.0)
        model = TreeModel(
            tree=tree, x0=np.array([0.3]),
            drift=lambda l, n, x, u: np.array([u]),
            diffusion=lambda l, n, x, u: np.array([1.0]),
            stage_cost=lambda l, n, x, u: 0.0,
            terminal_cost=lambda n, x: 0.0,
            u_grid=np.array([-1.0, 1.0]),
        )
        rep = tree_dpp_value(model, 2)
        assert rep.root_value == 0.0
        assert rep.dpp_gap == 0.0

    def test_control_independent_running_cost(self):
        depth, dt = 4, 0.25
        tree = build_binomial_tree(depth, dt, 1.0)
        model = TreeModel(
            tree=tree, x0=np.array([0.0]),
            drift=lambda l, n, x, u: np.array([u]),
            diffusion=lambda l, n, x, u: np.array([1.0]),
            stage_cost=lambda l, n, x, u: 1.0,
            terminal_cost=lambda n, x: 0.0,
            u_grid=np.array([-1.0, 1.0]),
        )
        rep = tree_dpp_value(model, 3)
        assert rep.root_value == pytest.approx(depth * dt)
        assert rep.dpp_gap <= 1e-15

    def test_matches_full_enumeration_oracle(self):
        tree = build_binomial_tree(2, 0.5, 1.0)
        model = lq_tree_model(tree, u_grid=(-1.0, 0.0, 1.0), x0=0.5)
        rep = tree_dpp_value(model, 2)
        oracle = enumerate_value_oracle(model)
        assert rep.root_value == pytest.approx(oracle, abs=1e-13)
        assert rep.dpp_gap <= 1e-13

    def test_value_monotone_in_control_grid(self):
        tree = build_binomial_tree(3, 1.0 / 3.0, 1.0)
        small = lq_tree_model(tree, u_grid=(-1.0, 1.0), x0=0.4)
        large = lq_tree_model(tree, u_grid=(-1.0, -0.5, 0.0, 0.5, 1.0), x0=0.4)
        v_small = tree_dpp_value(small, 2).root_value
        v_large = tree_dpp_value(large, 2).root_value
        assert v_large <= v_small + 1e-14

    def test_non_markovian_coefficients(self):
        tree = build_binomial_tree(3, 0.5, 1.0)

        def drift(level, node, x, u):
            hist = tree.path_shocks(level, node)
            return np.array([u + 0.25 * sum(hist)])

        model = TreeModel(
            tree=tree, x0=np.array([0.2]),
            drift=drift,
            diffusion=lambda l, n, x, u: np.array([1.0]),
            stage_cost=lambda l, n, x, u: float(x[0] ** 2 + u**2),
            terminal_cost=lambda n, x: float(x[0] ** 2),
            u_grid=np.array([-1.0, 1.0]),
        )
        rep = tree_dpp_value(model, 3)
        assert rep.dpp_gap <= 1e-13

    def test_enumeration_cap(self):
        tree = build_binomial_tree(6, 1.0 / 6.0, 1.0)
        model = lq_tree_model(tree, u_grid=(-1.0, 0.0, 1.0))
        with pytest.raises(EnumerationTooLarge, match="instance too large"):
            tree_dpp_value(model, 6)

    def test_rejects_bad_split(self):
        tree = build_binomial_tree(2, 1.0, 1.0)
        model = lq_tree_model(tree)
        with pytest.raises(ValueError):
            tree_dpp_value(model, 5)


class TestPairwiseMinControl:
    @staticmethod
    def _table_model(cost_table):
        """Depth-2 tree whose level-1 stage cost is looked up per (node, u)."""
        tree = build_binomial_tree(2, 1.0, 1.0)

        def stage(level, node, x, u):
            if level == 1:
                return cost_table[(node, float(u))]
            return 0.0

        return TreeModel(
            tree=tree, x0=np.array([0.0]),
            drift=lambda l, n, x, u: np.array([0.0]),
            diffusion=lambda l, n, x, u: np.array([0.0]),
            stage_cost=stage,
            terminal_cost=lambda n, x: 0.0,
            u_grid=np.array([0.0, 1.0]),
        )

    def test_switching_realizes_pointwise_min(self):
        table = {(0, 0.0): 1.0, (1, 0.0): 3.0, (0, 1.0): 2.0, (1, 1.0): 2.0}
        model = self._table_model(table)
        u1 = TreeControlPolicy.constant(model.tree, 0.0)
        u2 = TreeControlPolicy.constant(model.tree, 1.0)
        switched, costs = pairwise_min_control(model, u1, u2, level=1)
        np.testing.assert_allclose(costs, [1.0, 2.0])
        # oracle: per-atom rollouts of both policies, switched atom by atom
        for node in range(2):
            j_sw = rollout_cost(model, switched, 1, node, model.x0)
            j1 = rollout_cost(model, u1, 1, node, model.x0)
            j2 = rollout_cost(model, u2, 1, node, model.x0)
            assert j_sw == min(j1, j2)

    def test_identical_policies(self):
        model = self._table_model({(n, u): 1.0 for n in range(2) for u in (0.0, 1.0)})
        u1 = TreeControlPolicy.constant(model.tree, 1.0)
        switched, costs = pairwise_min_control(model, u1, u1, level=1)
        for level in range(model.tree.depth):
            np.testing.assert_array_equal(switched.controls[level], u1.controls[level])

    def test_dominating_policy_wins_everywhere(self):
        table = {(0, 0.0): 5.0, (1, 0.0): 5.0, (0, 1.0): 1.0, (1, 1.0): 1.0}
        model = self._table_model(table)
        u1 = TreeControlPolicy.constant(model.tree, 0.0)
        u2 = TreeControlPolicy.constant(model.tree, 1.0)
        switched, costs = pairwise_min_control(model, u1, u2, level=1)
        assert all(switched.at(1, node) == 1.0 for node in range(2))
        np.testing.assert_allclose(costs, [1.0, 1.0])
