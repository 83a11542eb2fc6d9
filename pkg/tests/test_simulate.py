import numpy as np
import pytest

from meanfield import (
    ConfigError,
    CostSpec,
    Horizon,
    MeanField,
    ModelSpec,
    ObservationChannel,
    StrategyGapError,
    build_lifted_mdp,
    evaluate_policy,
    initial_mean_field_distribution,
    simulate,
    solve_finite_horizon,
    solve_pomdp_finite,
    truncation_horizon,
    validate_kernel,
)
from meanfield import _accel
from meanfield.model import enumerate_maps, maps_matrix, pascal_table, rank_counts
from meanfield.simulate import episode_uniforms
from meanfield.solver import Policy
from meanfield.verify import counterexample_model, random_exchangeable_cost, random_model

Q = np.array([[0.25, 0.75], [0.375, 0.625]])


def _model(n, k, num_actions, transition, cost=None, horizon=None, init=None):
    return ModelSpec(
        n=n, k=k, num_actions=num_actions, transition=transition,
        cost=cost or CostSpec(kind="exchangeable", fn=lambda z, g: 0.0),
        horizon=horizon or Horizon.finite(2),
        init_dist=init if init is not None else np.full(k, 1.0 / k),
    )


# ---------------------------------------------------------------------------
# determinism
# ---------------------------------------------------------------------------


def test_identical_seed_reproduces_everything(smartgrid):
    loaded, lifted, result = smartgrid
    kwargs = dict(seed=11, num_episodes=300, cost_tables=np.stack(lifted.costs))
    a = simulate(loaded.model, result.policy, **kwargs)
    b = simulate(loaded.model, result.policy, **kwargs)
    np.testing.assert_array_equal(a.episode_costs, b.episode_costs)
    np.testing.assert_array_equal(a.z_rank_paths, b.z_rank_paths)
    np.testing.assert_array_equal(a.map_indices, b.map_indices)


def test_thread_count_does_not_change_results(smartgrid):
    loaded, lifted, result = smartgrid
    runs = [
        simulate(
            loaded.model, result.policy, seed=13, num_episodes=600,
            threads=threads, chunk_size=128, cost_tables=np.stack(lifted.costs),
        )
        for threads in (1, 2, 4)
    ]
    for other in runs[1:]:
        np.testing.assert_array_equal(runs[0].episode_costs, other.episode_costs)
        np.testing.assert_array_equal(runs[0].z_rank_paths, other.z_rank_paths)


def test_backends_produce_identical_trajectories():
    if not _accel.HAVE_NUMBA:
        pytest.skip("numba unavailable")
    n, k, H, E = 20, 2, 30, 50
    model = _model(n, k, 2, np.stack([Q, 0.2 * Q + 0.8 * np.eye(2)]),
                   horizon=Horizon.discounted(0.9))
    policy = Policy(np.arange(n + 1, dtype=np.int64).reshape(1, -1) % 4, stationary=True)
    init_cdf = np.cumsum(model.init_dist)
    trans_cdf = np.cumsum(model.transition_at(1), axis=2)
    maps = np.ascontiguousarray(maps_matrix(k, 2))
    pascal = np.ascontiguousarray(pascal_table(n, k))
    cost = np.zeros((1, n + 1, 4))
    uniforms = np.stack([episode_uniforms(3, ep, H + 1, n) for ep in range(E)])

    outs = []
    for fn in (_accel.simulate_chunk_numba, _accel.simulate_chunk_numpy):
        costs = np.zeros(E)
        zr = np.zeros((E, H + 1), dtype=np.int64)
        gi = np.zeros((E, H), dtype=np.int64)
        fn(uniforms, init_cdf, trans_cdf, maps, policy.table, cost, 0.9, pascal, k, costs, zr, gi)
        outs.append((costs, zr, gi))
    np.testing.assert_array_equal(outs[0][1], outs[1][1])
    np.testing.assert_array_equal(outs[0][2], outs[1][2])
    np.testing.assert_array_equal(outs[0][0], outs[1][0])


def test_fast_and_flexible_paths_agree():
    model = _model(6, 2, 2, np.stack([Q, Q]), horizon=Horizon.discounted(0.8),
                   cost=CostSpec(kind="exchangeable", fn=lambda z, g: float(z.counts[0])))
    policy = Policy(np.zeros((1, 7), dtype=np.int64), stationary=True)
    fast = simulate(model, policy, seed=21, horizon_steps=12, num_episodes=40)
    slow = simulate(model, policy, seed=21, horizon_steps=12, num_episodes=40,
                    record_states=True)
    np.testing.assert_array_equal(fast.z_rank_paths, slow.z_rank_paths)
    np.testing.assert_array_equal(fast.episode_costs, slow.episode_costs)


def test_deterministic_dynamics_bit_identical_paths():
    swap = np.array([[[0.0, 1.0], [1.0, 0.0]]])
    model = _model(4, 2, 1, swap, horizon=Horizon.finite(3))
    policy = Policy(np.zeros((3, 5), dtype=np.int64), stationary=False)
    a = simulate(model, policy, seed=1, num_episodes=10)
    b = simulate(model, policy, seed=1, num_episodes=10)
    np.testing.assert_array_equal(a.z_rank_paths, b.z_rank_paths)
    # swap dynamics alternate the mean-field deterministically after t=1
    assert np.all(a.z_rank_paths[:, 0] + a.z_rank_paths[:, 1] == 4)


def test_permuting_subsystem_streams_leaves_z_path_unchanged():
    """Exchangeability: reassigning the per-subsystem random streams permutes
    the joint trajectory but cannot move the mean-field path."""
    n, k, H, E = 8, 2, 10, 30
    model = _model(n, k, 1, Q[None], horizon=Horizon.discounted(0.9))
    policy = Policy(np.zeros((1, n + 1), dtype=np.int64), stationary=True)
    init_cdf = np.cumsum(model.init_dist)
    trans_cdf = np.cumsum(model.transition_at(1), axis=2)
    maps = np.ascontiguousarray(maps_matrix(k, 1))
    pascal = np.ascontiguousarray(pascal_table(n, k))
    cost = np.zeros((1, n + 1, 1))
    uniforms = np.stack([episode_uniforms(9, ep, H + 1, n) for ep in range(E)])
    perm = np.random.default_rng(0).permutation(n)

    def run(u):
        costs = np.zeros(E)
        zr = np.zeros((E, H + 1), dtype=np.int64)
        gi = np.zeros((E, H), dtype=np.int64)
        _accel.simulate_chunk_numpy(
            u, init_cdf, trans_cdf, maps, policy.table, cost, 1.0, pascal, k, costs, zr, gi
        )
        return zr

    np.testing.assert_array_equal(run(uniforms), run(uniforms[:, :, perm]))


# ---------------------------------------------------------------------------
# statistical agreement with the exact solver
# ---------------------------------------------------------------------------


def test_simulated_cost_matches_exact_policy_value():
    rng = np.random.default_rng(4)
    cost = random_exchangeable_cost(rng, 5, 2, 2)
    model = random_model(rng, 5, 2, 2, horizon=Horizon.finite(3), cost=cost)
    lifted = build_lifted_mdp(model)
    result = solve_finite_horizon(model, lifted)
    _, exact = evaluate_policy(model, lifted, result.policy)
    sim = simulate(model, result.policy, seed=17, num_episodes=4000)
    assert abs(sim.mean - exact) <= 4 * sim.stderr


def test_even_split_simulation_matches_half():
    model = counterexample_model(1.0)
    lifted = build_lifted_mdp(model)
    result = solve_finite_horizon(model, lifted)
    sim = simulate(model, result.policy, seed=23, num_episodes=6000)
    assert abs(sim.mean - 0.5) <= 4 * sim.stderr


def test_general_cost_path_costs_recomputable():
    def joint_cost(x, u):
        return float(np.sum(np.asarray(x) == 0) + 0.5 * np.sum(np.asarray(u)))

    model = _model(3, 2, 2, np.stack([Q, Q]), horizon=Horizon.finite(2),
                   cost=CostSpec(kind="general", fn=joint_cost))
    policy = Policy(np.array([[1, 1, 2, 3], [0, 0, 0, 0]], dtype=np.int64), stationary=False)
    sim = simulate(model, policy, seed=31, num_episodes=50, record_states=True)
    maps = maps_matrix(2, 2)
    for ep in range(50):
        total = 0.0
        for t in range(2):
            states = sim.states[ep, t]
            g = sim.map_indices[ep, t]
            total += joint_cost(states, maps[g][states])
            assert rank_counts(np.bincount(states, minlength=2)) == sim.z_rank_paths[ep, t]
        assert total == pytest.approx(sim.episode_costs[ep], abs=1e-12)


def test_mean_field_dependent_dynamics_agree_with_exact_value():
    def coupling(z):
        p = 0.3 + 0.4 * z[0]
        return np.array([[[p, 1.0 - p], [1.0 - p, p]]])

    model = _model(
        3, 2, 1, coupling, horizon=Horizon.finite(3),
        cost=CostSpec(kind="exchangeable", fn=lambda z, g: float(z.counts[0])),
    )
    lifted = build_lifted_mdp(model)
    policy = Policy(np.zeros((3, 4), dtype=np.int64), stationary=False)
    _, exact = evaluate_policy(model, lifted, policy)
    sim = simulate(model, policy, seed=37, num_episodes=4000)
    assert abs(sim.mean - exact) <= 4 * sim.stderr


def test_pomdp_simulation_matches_root_value(rng):
    cost = random_exchangeable_cost(rng, 3, 2, 2)
    model = random_model(rng, 3, 2, 2, horizon=Horizon.finite(3), cost=cost)
    lifted = build_lifted_mdp(model)
    chan = ObservationChannel.noisy_identity(model.num_states(), 0.75)
    solution = solve_pomdp_finite(model, lifted, chan)
    sim = simulate(model, solution, seed=41, num_episodes=4000)
    assert abs(sim.mean - solution.root_value) <= 4 * sim.stderr


# ---------------------------------------------------------------------------
# guards
# ---------------------------------------------------------------------------


def test_strategy_gap_is_rejected():
    model = _model(3, 2, 2, np.stack([Q, Q]))
    with pytest.raises(StrategyGapError):
        simulate(model, np.array([0, 1, -1, 0]), seed=1, num_episodes=2)
    with pytest.raises(StrategyGapError):
        simulate(model, np.array([0, 1, 0]), seed=1, num_episodes=2)  # one state short


def test_finite_horizon_forces_exact_length():
    model = counterexample_model()
    policy = Policy(np.zeros((2, 3), dtype=np.int64), stationary=False)
    with pytest.raises(ConfigError):
        simulate(model, policy, seed=1, horizon_steps=5, num_episodes=2)


def test_truncation_horizon_bounds_tail():
    H = truncation_horizon(0.9, 1.404)
    assert 0.9**H * 1.404 < 1e-6
    assert 0.9 ** (H - 1) * 1.404 >= 1e-6


# ---------------------------------------------------------------------------
# statistical kernel validation
# ---------------------------------------------------------------------------


def test_validate_kernel_deterministic_dynamics_zero_distance():
    swap = np.array([[[0.0, 1.0], [1.0, 0.0]]])
    model = _model(5, 2, 1, swap)
    check = validate_kernel(model, MeanField((3, 2)), enumerate_maps(2, 1)[0], seed=3, num_samples=500)
    assert check.tv_distance == 0.0
    assert check.passed


def test_validate_kernel_bundled_model_below_bound(smartgrid):
    loaded, _, _ = smartgrid
    maps = enumerate_maps(2, 3)
    check = validate_kernel(loaded.model, MeanField((70, 30)), maps[4], seed=7, num_samples=100_000)
    assert check.passed
    assert check.tv_distance < check.bound < 0.03


def test_validate_kernel_single_sample_is_a_distance():
    model = _model(4, 2, 1, Q[None])
    check = validate_kernel(model, MeanField((2, 2)), enumerate_maps(2, 1)[0], seed=5, num_samples=1)
    assert 0.0 <= check.tv_distance <= 1.0
