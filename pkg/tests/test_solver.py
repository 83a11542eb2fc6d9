import numpy as np
import pytest

from meanfield import (
    ConfigError,
    CostSpec,
    Horizon,
    ModelSpec,
    bellman_residual,
    build_lifted_mdp,
    evaluate_policy,
    initial_mean_field_distribution,
    solve_discounted,
    solve_finite_horizon,
)
from meanfield.model import enumerate_maps
from meanfield.solver import Policy, policy_from_controller_strategy, to_controller_strategy
from meanfield.verify import counterexample_model, random_exchangeable_cost, random_model

Q = np.array([[0.25, 0.75], [0.375, 0.625]])


def _model(n, k, num_actions, transition, cost=None, horizon=None, init=None):
    return ModelSpec(
        n=n,
        k=k,
        num_actions=num_actions,
        transition=transition,
        cost=cost or CostSpec(kind="exchangeable", fn=lambda z, g: 0.0),
        horizon=horizon or Horizon.finite(1),
        init_dist=init if init is not None else np.full(k, 1.0 / k),
    )


# ---------------------------------------------------------------------------
# finite horizon
# ---------------------------------------------------------------------------


def test_single_stage_minimizes_stage_cost():
    def cost(z, gamma):
        return float(gamma.index) + 0.5 * z.counts[0]

    model = _model(2, 2, 2, np.stack([Q, Q]), cost=CostSpec(kind="exchangeable", fn=cost))
    lifted = build_lifted_mdp(model)
    result = solve_finite_horizon(model, lifted)
    # terminal value is zero, so stage values are the pointwise map minima
    np.testing.assert_allclose(result.value.values[0], lifted.cost_at(1).min(axis=1))
    np.testing.assert_array_equal(result.policy.at_stage(1), lifted.cost_at(1).argmin(axis=1))
    assert np.all(result.value.values[1] == 0.0)


def test_zero_cost_gives_zero_values_and_lowest_map():
    model = _model(3, 2, 2, np.stack([Q, Q]), horizon=Horizon.finite(3))
    lifted = build_lifted_mdp(model)
    result = solve_finite_horizon(model, lifted)
    assert np.all(result.value.values == 0.0)
    assert np.all(result.policy.table == 0)


def test_even_split_example_symmetric_optimum():
    model = counterexample_model(1.0)
    lifted = build_lifted_mdp(model)
    result = solve_finite_horizon(model, lifted)
    p1 = initial_mean_field_distribution(model)
    assert float(p1 @ result.value.values[0]) == pytest.approx(0.5, abs=1e-12)


def test_even_split_identity_map_policy_value():
    model = counterexample_model(1.0)
    lifted = build_lifted_mdp(model)
    identity_idx = [m.index for m in enumerate_maps(2, 2) if m.assignment == (0, 1)][0]
    policy = Policy(np.full((2, 3), identity_idx, dtype=np.int64), stationary=False)
    _, j = evaluate_policy(model, lifted, policy)
    assert j == pytest.approx(0.5, abs=1e-12)


def test_cost_scaling_preserves_argmin():
    base = counterexample_model(1.0)
    scaled = counterexample_model(10.0)
    r1 = solve_finite_horizon(base, build_lifted_mdp(base))
    r10 = solve_finite_horizon(scaled, build_lifted_mdp(scaled))
    np.testing.assert_array_equal(r1.policy.table, r10.policy.table)
    np.testing.assert_allclose(r10.value.values, 10.0 * r1.value.values, atol=1e-12)


def test_finite_horizon_residual_is_zero(rng):
    cost = random_exchangeable_cost(rng, 3, 2, 2)
    model = random_model(rng, 3, 2, 2, horizon=Horizon.finite(3), cost=cost)
    lifted = build_lifted_mdp(model)
    result = solve_finite_horizon(model, lifted)
    assert bellman_residual(model, lifted, result) <= 1e-12


def test_dominated_policy_never_beats_optimum(rng):
    cost = random_exchangeable_cost(rng, 3, 2, 2)
    model = random_model(rng, 3, 2, 2, horizon=Horizon.finite(2), cost=cost)
    lifted = build_lifted_mdp(model)
    result = solve_finite_horizon(model, lifted)
    for g in range(model.num_maps()):
        fixed = Policy(np.full((2, model.num_states()), g, dtype=np.int64), stationary=False)
        vf, _ = evaluate_policy(model, lifted, fixed)
        assert np.all(vf.values[0] >= result.value.values[0] - 1e-12)


def test_evaluate_optimal_policy_reproduces_value(rng):
    cost = random_exchangeable_cost(rng, 4, 2, 2)
    model = random_model(rng, 4, 2, 2, horizon=Horizon.finite(3), cost=cost)
    lifted = build_lifted_mdp(model)
    result = solve_finite_horizon(model, lifted)
    vf, _ = evaluate_policy(model, lifted, result.policy)
    np.testing.assert_allclose(vf.values, result.value.values, atol=1e-12)


# ---------------------------------------------------------------------------
# discounted horizon
# ---------------------------------------------------------------------------


def test_zero_cost_converges_immediately():
    model = _model(2, 2, 1, Q[None], horizon=Horizon.discounted(0.9))
    lifted = build_lifted_mdp(model)
    result = solve_discounted(model, lifted, tol=1e-10)
    assert result.iterations == 1
    assert np.all(result.value.values == 0.0)


def test_degenerate_single_state_geometric_series():
    # one subsystem, one state: V = c / (1 - beta)
    model = ModelSpec(
        n=1, k=1, num_actions=1, transition=np.ones((1, 1, 1)),
        cost=CostSpec(kind="exchangeable", fn=lambda z, g: 2.5),
        horizon=Horizon.discounted(0.5), init_dist=np.array([1.0]),
    )
    lifted = build_lifted_mdp(model)
    result = solve_discounted(model, lifted, tol=1e-10)
    assert result.value.values[0, 0] == pytest.approx(2.5 / 0.5, abs=1e-9)


def test_discounted_value_error_bound(smartgrid):
    loaded, lifted, result = smartgrid
    assert bellman_residual(loaded.model, lifted, result) <= 1e-8


def test_value_iteration_contracts_at_rate_beta(smartgrid):
    loaded, _, result = smartgrid
    beta = loaded.model.horizon.beta
    deltas = result.sup_norm_deltas
    assert len(deltas) > 20
    for a, b in zip(deltas, deltas[1:]):
        if a < 1e-10:
            break
        assert b <= beta * a + 1e-12


def test_discounted_requires_homogeneous_model():
    drift = np.array([[[0.9, 0.1], [0.9, 0.1]]])
    staged = _model(2, 2, 1, [drift, drift], horizon=Horizon.finite(2))
    lifted = build_lifted_mdp(staged)
    with pytest.raises(ConfigError):
        solve_discounted(staged, lifted)
    with pytest.raises(ConfigError, match="tol"):
        model = _model(2, 2, 1, drift, horizon=Horizon.discounted(0.9))
        solve_discounted(model, build_lifted_mdp(model), tol=0.0)


def test_evaluate_stationary_policy_matches_fixed_point(smartgrid):
    loaded, lifted, result = smartgrid
    vf, j = evaluate_policy(loaded.model, lifted, result.policy, tol=1e-10)
    np.testing.assert_allclose(vf.values, result.value.values, atol=1e-7)
    p1 = initial_mean_field_distribution(loaded.model)
    assert j == pytest.approx(float(p1 @ result.value.values[0]), abs=1e-7)


def test_two_runs_produce_identical_policies(smartgrid):
    loaded, lifted, result = smartgrid
    again = solve_discounted(loaded.model, lifted, tol=1e-8)
    np.testing.assert_array_equal(result.policy.table, again.policy.table)
    np.testing.assert_array_equal(result.value.values, again.value.values)


# ---------------------------------------------------------------------------
# controller-strategy round trip
# ---------------------------------------------------------------------------


def test_controller_strategy_round_trip(smartgrid):
    loaded, _, result = smartgrid
    model = loaded.model
    table = to_controller_strategy(result.policy, model.k, model.num_actions)
    assert table.shape == (1, model.num_states(), model.k)
    rebuilt = policy_from_controller_strategy(table, model.num_actions, stationary=True)
    np.testing.assert_array_equal(rebuilt.table, result.policy.table)


def test_identity_map_controller_strategy():
    # map index 1 encodes assignment (0, 1): each state keeps its own label
    policy = Policy(np.array([[1]], dtype=np.int64), stationary=True)
    table = to_controller_strategy(policy, k=2, num_actions=2)
    np.testing.assert_array_equal(table[0, 0], [0, 1])
