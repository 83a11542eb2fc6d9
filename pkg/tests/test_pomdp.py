import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from meanfield import (
    Belief,
    BudgetError,
    ConfigError,
    CostSpec,
    Horizon,
    MeanField,
    ModelSpec,
    ObservationChannel,
    ObservationInconsistencyError,
    belief_prediction,
    belief_update,
    build_lifted_mdp,
    initial_mean_field_distribution,
    lift_belief_cost,
    lift_cost,
    solve_finite_horizon,
    solve_pomdp_finite,
)
from meanfield.model import enumerate_maps, enumerate_mean_fields
from meanfield.verify import random_exchangeable_cost, random_model

Q = np.array([[0.25, 0.75], [0.375, 0.625]])


def _free_model(n, T=2):
    return ModelSpec(
        n=n, k=2, num_actions=1, transition=Q[None],
        cost=CostSpec(kind="exchangeable", fn=lambda z, g: 0.0),
        horizon=Horizon.finite(T), init_dist=np.array([0.5, 0.5]),
    )


# ---------------------------------------------------------------------------
# channels
# ---------------------------------------------------------------------------


def test_channel_columns_must_sum_to_one():
    with pytest.raises(ConfigError, match="z_rank=1"):
        ObservationChannel(np.array([[1.0, 0.5], [0.0, 0.4]]))


def test_channel_from_function_marginalizes_noise():
    zs = enumerate_mean_fields(2, 2)

    def h(z, nu):
        # report whether state 0 holds the majority, with noise flipping it
        majority = 1 if z.counts[0] > z.counts[1] else 0
        return majority ^ nu

    channel = ObservationChannel.from_function(h, [0.9, 0.1], 2, zs)
    assert channel.num_obs == 2
    np.testing.assert_allclose(channel.likelihood.sum(axis=0), 1.0, atol=1e-15)
    np.testing.assert_allclose(channel.likelihood[:, 2], [0.1, 0.9])  # counts (2,0)


def test_noisy_identity_channel_shape():
    chan = ObservationChannel.noisy_identity(4, 0.85)
    np.testing.assert_allclose(np.diag(chan.likelihood), 0.85)
    np.testing.assert_allclose(chan.likelihood.sum(axis=0), 1.0, atol=1e-15)


# ---------------------------------------------------------------------------
# belief updates
# ---------------------------------------------------------------------------


def test_noiseless_update_gives_dirac_posterior():
    model = _free_model(2)
    lifted = build_lifted_mdp(model)
    chan = ObservationChannel.noiseless(3)
    prior = Belief(np.array([0.2, 0.5, 0.3]))
    for y in range(3):
        post = belief_update(prior, 0, y, lifted.kernel_at(1), chan)
        expect = np.zeros(3)
        expect[y] = 1.0
        np.testing.assert_allclose(post.probs, expect, atol=1e-15)


def test_uninformative_update_equals_prediction():
    model = _free_model(2)
    lifted = build_lifted_mdp(model)
    chan = ObservationChannel(np.full((4, 3), 0.25))
    prior = Belief(np.array([0.2, 0.5, 0.3]))
    pred = belief_prediction(prior, 0, lifted.kernel_at(1))
    for y in range(4):
        post = belief_update(prior, 0, y, lifted.kernel_at(1), chan)
        np.testing.assert_allclose(post.probs, pred, atol=1e-15)


def test_single_subsystem_bayes_arithmetic():
    # free dynamics, uniform prior over the two mean-fields, 80%-accurate
    # channel, observe the symbol of "subsystem in state 0"
    model = _free_model(1)
    lifted = build_lifted_mdp(model)
    chan = ObservationChannel.noisy_identity(2, 0.8)
    prior = Belief(np.array([0.5, 0.5]))
    pred = belief_prediction(prior, 0, lifted.kernel_at(1))
    # rank 0 = counts (0,1) = state 1; rank 1 = counts (1,0) = state 0
    np.testing.assert_allclose(pred, [0.6875, 0.3125], atol=1e-15)
    post = belief_update(prior, 0, 1, lifted.kernel_at(1), chan)
    np.testing.assert_allclose(
        post.probs, [0.1375 / 0.3875, 0.25 / 0.3875], atol=1e-12
    )


def test_impossible_observation_raises():
    # observation 0 is emitted only at mean-field rank 0, which deterministic
    # stay-at-state-0 dynamics make unreachable
    like = np.array([[1.0, 0.0], [0.0, 1.0]])
    stay = np.array([[[1.0, 0.0], [1.0, 0.0]]])
    model2 = ModelSpec(
        n=1, k=2, num_actions=1, transition=stay,
        cost=CostSpec(kind="exchangeable", fn=lambda z, g: 0.0),
        horizon=Horizon.finite(2), init_dist=np.array([1.0, 0.0]),
    )
    lifted2 = build_lifted_mdp(model2)
    prior = Belief(np.array([0.0, 1.0]))  # surely in state 0
    with pytest.raises(ObservationInconsistencyError):
        belief_update(prior, 0, 0, lifted2.kernel_at(1), ObservationChannel(like))


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10**6), st.integers(1, 6))
def test_belief_stays_on_simplex_after_update_chains(seed, steps):
    rng = np.random.default_rng(seed)
    model = random_model(rng, int(rng.integers(1, 4)), 2, 2)
    lifted = build_lifted_mdp(model)
    S = lifted.num_states
    raw = rng.random(S) + 1e-6
    belief = Belief(raw / raw.sum())
    like = rng.random((3, S)) + 0.05
    chan = ObservationChannel(like / like.sum(axis=0, keepdims=True))
    for _ in range(steps):
        g = int(rng.integers(lifted.num_maps))
        y = int(rng.integers(3))
        belief = belief_update(belief, g, y, lifted.kernel_at(1), chan)
        assert np.all(belief.probs >= 0)
        assert abs(belief.probs.sum() - 1.0) <= 1e-10


# ---------------------------------------------------------------------------
# belief-lifted cost
# ---------------------------------------------------------------------------


def test_belief_cost_dirac_reduces_to_lifted_cost(rng):
    cost = random_exchangeable_cost(rng, 2, 2, 2)
    model = random_model(rng, 2, 2, 2, cost=cost)
    lifted = build_lifted_mdp(model)
    zs = enumerate_mean_fields(2, 2)
    for zi, z in enumerate(zs):
        probs = np.zeros(3)
        probs[zi] = 1.0
        for gi, gamma in enumerate(enumerate_maps(2, 2)):
            assert lift_belief_cost(Belief(probs), gi, lifted) == pytest.approx(
                lift_cost(model, z, gamma), abs=1e-15
            )


def test_belief_cost_convex_combination():
    cost_table = np.array([[1.0], [7.0], [3.0]])
    assert lift_belief_cost(Belief(np.array([0.5, 0.0, 0.5])), 0, cost_table) == 2.0


def test_belief_cost_uniform_constant():
    cost_table = np.full((4, 2), 2.5)
    assert lift_belief_cost(Belief(np.full(4, 0.25)), 1, cost_table) == pytest.approx(2.5)


# ---------------------------------------------------------------------------
# exact solver on the reachable belief tree
# ---------------------------------------------------------------------------


def test_horizon_one_minimizes_belief_cost(rng):
    cost = random_exchangeable_cost(rng, 2, 2, 2)
    model = random_model(rng, 2, 2, 2, horizon=Horizon.finite(1), cost=cost)
    lifted = build_lifted_mdp(model)
    chan = ObservationChannel.noisy_identity(3, 0.7)
    solution = solve_pomdp_finite(model, lifted, chan)
    prior = initial_mean_field_distribution(model)
    p_obs = chan.likelihood @ prior
    expect = 0.0
    for y in range(3):
        pi = chan.likelihood[y] * prior / p_obs[y]
        expect += p_obs[y] * min(
            float(pi @ lifted.cost_at(1)[:, g]) for g in range(lifted.num_maps)
        )
    assert solution.root_value == pytest.approx(expect, abs=1e-12)


def test_noiseless_channel_recovers_mdp_value(rng):
    for n, T in [(1, 1), (2, 2), (4, 3), (6, 4)]:
        cost = random_exchangeable_cost(rng, n, 2, 2)
        model = random_model(rng, n, 2, 2, horizon=Horizon.finite(T), cost=cost)
        lifted = build_lifted_mdp(model)
        chan = ObservationChannel.noiseless(model.num_states())
        solution = solve_pomdp_finite(model, lifted, chan)
        result = solve_finite_horizon(model, lifted)
        p1 = initial_mean_field_distribution(model)
        assert solution.root_value == pytest.approx(
            float(p1 @ result.value.values[0]), abs=1e-10
        )


def test_uninformative_channel_equals_open_loop_search(rng):
    # with no information, the belief evolves deterministically, so the best
    # closed-loop strategy is the best open-loop map sequence
    T = 3
    cost = random_exchangeable_cost(rng, 1, 2, 2)
    model = random_model(rng, 1, 2, 2, horizon=Horizon.finite(T), cost=cost)
    lifted = build_lifted_mdp(model)
    chan = ObservationChannel(np.full((2, 2), 0.5))
    solution = solve_pomdp_finite(model, lifted, chan)

    best = np.inf
    prior = initial_mean_field_distribution(model)
    for seq in itertools.product(range(lifted.num_maps), repeat=T):
        pi = prior.copy()
        total = 0.0
        for t, g in enumerate(seq, start=1):
            total += float(pi @ lifted.cost_at(t)[:, g])
            pi = pi @ lifted.kernel_at(t).matrix(g)
        best = min(best, total)
    assert solution.root_value == pytest.approx(best, abs=1e-12)


def test_marginalizing_children_recovers_prediction(rng):
    model = random_model(rng, 3, 2, 2)
    lifted = build_lifted_mdp(model)
    S = lifted.num_states
    raw = rng.random(S) + 0.01
    pi = Belief(raw / raw.sum())
    like = rng.random((4, S)) + 0.01
    chan = ObservationChannel(like / like.sum(axis=0, keepdims=True))
    g = 2
    pred = belief_prediction(pi, g, lifted.kernel_at(1))
    p_obs = chan.likelihood @ pred
    mixed = sum(
        p_obs[y] * belief_update(pi, g, y, lifted.kernel_at(1), chan).probs
        for y in range(4)
        if p_obs[y] > 0
    )
    np.testing.assert_allclose(mixed, pred, atol=1e-12)


def test_node_budget_guard(rng):
    cost = random_exchangeable_cost(rng, 2, 2, 2)
    model = random_model(rng, 2, 2, 2, horizon=Horizon.finite(3), cost=cost)
    lifted = build_lifted_mdp(model)
    chan = ObservationChannel.noisy_identity(3, 0.8)
    with pytest.raises(BudgetError):
        solve_pomdp_finite(model, lifted, chan, node_budget=5)


def test_tree_structure_and_export_fields(rng):
    cost = random_exchangeable_cost(rng, 2, 2, 2)
    model = random_model(rng, 2, 2, 2, horizon=Horizon.finite(2), cost=cost)
    lifted = build_lifted_mdp(model)
    chan = ObservationChannel.noisy_identity(3, 0.8)
    solution = solve_pomdp_finite(model, lifted, chan)
    root = solution.root
    assert root.parent_id == -1 and root.depth == 0 and root.map_index == -1
    for node in solution.nodes[1:]:
        parent = solution.nodes[node.parent_id]
        assert node.depth == parent.depth + 1
        assert parent.children[node.observation] == node.node_id
        assert 0 <= node.map_index < lifted.num_maps
        assert abs(node.belief.sum() - 1.0) < 1e-10
    # children are materialized in ascending observation order
    for node in solution.nodes:
        ys = list(node.children)
        assert ys == sorted(ys)
