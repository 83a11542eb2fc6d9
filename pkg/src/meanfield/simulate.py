"""Monte Carlo simulation of the true n-subsystem system.

Simulation is the ground truth the exact solvers are checked against: every
subsystem individually draws its next state from its prescribed action's
row. Randomness comes from one 64-bit seed through counter-based Philox
streams keyed (seed, episode); within an episode the draw for (step,
subsystem) sits at a fixed position of that stream, so trajectories are
reproducible for any chunking, thread count, or execution order.

The hot path (exchangeable cost, static matrices, mean-field-indexed
policy) runs through the compiled chunk kernel; everything else (general
costs, mean-field-dependent dynamics, belief-tree strategies) takes the
flexible per-episode path with identical draw semantics.
"""

from __future__ import annotations

import dataclasses
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import _accel
from .errors import ConfigError, StrategyGapError
from .lifting import build_cost_tables, lift_kernel_row
from .model import (
    CoordinationMap,
    MeanField,
    ModelSpec,
    enumerate_maps,
    enumerate_mean_fields,
    maps_matrix,
    pascal_table,
    rank_counts,
)
from .pomdp import POMDPSolution
from .solver import Policy

__all__ = [
    "SimulationResult",
    "simulate",
    "validate_kernel",
    "KernelValidation",
    "truncation_horizon",
    "episode_uniforms",
]


@dataclass(frozen=True)
class SimulationResult:
    """Per-episode costs and paths plus summary statistics."""

    episode_costs: np.ndarray  # (E,)
    z_rank_paths: np.ndarray  # (E, H+1) ranks, including the terminal mean-field
    map_indices: np.ndarray  # (E, H)
    mean: float
    stderr: float
    seed: int
    horizon: int
    discounted: bool
    states: np.ndarray | None = None  # (E, H+1, n), only when recorded


def truncation_horizon(beta: float, cost_max: float, tail: float = 1e-6) -> int:
    """Smallest H with beta**H * cost_max below the tail threshold."""
    if cost_max <= tail:
        return 1
    return max(1, math.ceil(math.log(tail / cost_max) / math.log(beta)))


def episode_uniforms(seed: int, episode: int, rows: int, n: int) -> np.ndarray:
    """The (rows, n) uniform block of episode's Philox stream.

    Row 0 drives the initial states; row t+1 drives the subsystem draws of
    step t+1. Position (row, i) is the draw of subsystem i.
    """
    gen = np.random.Generator(np.random.Philox(key=np.array([seed, episode], dtype=np.uint64)))
    return gen.random((rows, n))


def _observation_uniforms(seed: int, episode: int, horizon: int, n: int) -> np.ndarray:
    """Extra (horizon,) block consumed after the subsystem draws (POMDP mode)."""
    gen = np.random.Generator(np.random.Philox(key=np.array([seed, episode], dtype=np.uint64)))
    gen.random((horizon + 1, n))  # skip the subsystem block
    return gen.random(horizon)


def _normalize_strategy(model: ModelSpec, strategy) -> Policy:
    S = model.num_states()
    G = model.num_maps()
    if isinstance(strategy, Policy):
        policy = strategy
    else:
        arr = np.asarray(strategy, dtype=np.int64)
        if arr.ndim == 1:
            policy = Policy(arr.reshape(1, -1), stationary=True)
        elif arr.ndim == 2:
            policy = Policy(arr, stationary=(arr.shape[0] == 1))
        elif arr.ndim == 3:
            from .solver import policy_from_controller_strategy

            policy = policy_from_controller_strategy(
                arr, model.num_actions, stationary=(arr.shape[0] == 1)
            )
        else:
            raise ConfigError(f"cannot interpret strategy with ndim={arr.ndim}")
    if policy.table.shape[1] != S:
        raise StrategyGapError(
            f"strategy covers {policy.table.shape[1]} mean-fields, model has {S}"
        )
    if np.any(policy.table < 0) or np.any(policy.table >= G):
        raise StrategyGapError("strategy table has entries outside the map index range")
    return policy


def simulate(
    model: ModelSpec,
    strategy,
    seed: int,
    horizon_steps: int | None = None,
    num_episodes: int = 1000,
    *,
    threads: int = 1,
    chunk_size: int = 512,
    record_states: bool = False,
    cost_tables: np.ndarray | None = None,
) -> SimulationResult:
    """Roll out episodes of the full system under a symmetric strategy.

    ``strategy`` may be a :class:`Policy`, a map-index table ((S,), (T, S)),
    a per-controller action table ((stages, S, k)), or a
    :class:`POMDPSolution` (observations are then simulated through its
    channel and the belief tree is walked instead of the mean-field).

    Discounted models accumulate beta**(t-1)-weighted stage costs and default
    to the horizon where the discounted tail falls below 1e-6; finite-horizon
    models run exactly T steps with unit weights.
    """
    if isinstance(strategy, POMDPSolution):
        return _simulate_pomdp(model, strategy, seed, num_episodes)

    policy = _normalize_strategy(model, strategy)
    discounted = model.horizon.kind == "discounted"
    beta = model.horizon.beta if discounted else 1.0
    if cost_tables is None:
        cost_tables = build_cost_tables(model)
    if discounted:
        H = horizon_steps or truncation_horizon(beta, float(cost_tables.max()))
    else:
        H = model.horizon.T
        if horizon_steps is not None and horizon_steps != H:
            raise ConfigError(f"finite-horizon simulation runs exactly T={H} steps")
        if not policy.stationary and policy.num_stages != H:
            raise ConfigError(f"policy has {policy.num_stages} stages, horizon T={H}")

    fast = (
        model.cost.kind == "exchangeable"
        and model.transition_kind in ("static", "staged")
        and not record_states
    )
    if fast:
        return _simulate_fast(
            model, policy, cost_tables, seed, H, num_episodes, beta, discounted, threads, chunk_size
        )
    return _simulate_flexible(
        model, policy, cost_tables, seed, H, num_episodes, beta, discounted, record_states
    )


def _transition_cdfs(model: ModelSpec, H: int) -> np.ndarray:
    if model.transition_kind == "static":
        return np.cumsum(model.transition_at(1), axis=2)[None, :, :, :]
    return np.stack([np.cumsum(model.transition_at(t), axis=2) for t in range(1, H + 1)])


def _simulate_fast(
    model, policy, cost_tables, seed, H, num_episodes, beta, discounted, threads, chunk_size
):
    n, k = model.n, model.k
    S = model.num_states()
    init_cdf = np.cumsum(model.init_dist)
    trans_cdfs = _transition_cdfs(model, H)
    maps_arr = np.ascontiguousarray(maps_matrix(k, model.num_actions))
    pascal = np.ascontiguousarray(pascal_table(n, k))
    policy_arr = np.ascontiguousarray(policy.table)
    cost_arr = np.ascontiguousarray(cost_tables)

    out_costs = np.zeros(num_episodes)
    out_zranks = np.zeros((num_episodes, H + 1), dtype=np.int64)
    out_gidx = np.zeros((num_episodes, H), dtype=np.int64)

    staged_trans = trans_cdfs.shape[0] > 1

    def run_chunk(e0: int, e1: int):
        E = e1 - e0
        uniforms = np.empty((E, H + 1, n))
        for i, ep in enumerate(range(e0, e1)):
            uniforms[i] = episode_uniforms(seed, ep, H + 1, n)
        if staged_trans:
            # stage-dependent matrices take the flexible scalar path per chunk
            _chunk_staged(
                uniforms, init_cdf, trans_cdfs, maps_arr, policy_arr, cost_arr, beta,
                pascal, k, out_costs[e0:e1], out_zranks[e0:e1], out_gidx[e0:e1],
            )
        else:
            _accel.simulate_chunk(
                uniforms, init_cdf, trans_cdfs[0], maps_arr, policy_arr, cost_arr,
                beta, pascal, k, out_costs[e0:e1], out_zranks[e0:e1], out_gidx[e0:e1],
            )

    bounds = [(e0, min(e0 + chunk_size, num_episodes)) for e0 in range(0, num_episodes, chunk_size)]
    if threads > 1 and len(bounds) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            list(pool.map(lambda b: run_chunk(*b), bounds))
    else:
        for b in bounds:
            run_chunk(*b)

    return _summarize(out_costs, out_zranks, out_gidx, seed, H, discounted)


def _chunk_staged(
    uniforms, init_cdf, trans_cdfs, maps_arr, policy_arr, cost_arr, beta, pascal, k,
    out_costs, out_zranks, out_gidx,
):
    # same step semantics as the accel kernels, with per-stage matrices
    E, H1, n = uniforms.shape
    H = H1 - 1
    states = (uniforms[:, 0, :, None] >= init_cdf[: k - 1]).sum(axis=2).astype(np.int64)
    counts = np.zeros((E, k), dtype=np.int64)
    for s in range(k):
        counts[:, s] = (states == s).sum(axis=1)
    w = 1.0
    for t in range(H):
        r = _accel._rank_counts_array(counts, n, k, pascal)
        out_zranks[:, t] = r
        g = policy_arr[t if policy_arr.shape[0] > 1 else 0, r]
        out_gidx[:, t] = g
        out_costs += w * cost_arr[t if cost_arr.shape[0] > 1 else 0, r, g]
        w *= beta
        actions = maps_arr[g[:, None], states]
        cdf = trans_cdfs[t][actions, states]
        states = (uniforms[:, t + 1, :, None] >= cdf[:, :, : k - 1]).sum(axis=2).astype(np.int64)
        for s in range(k):
            counts[:, s] = (states == s).sum(axis=1)
    out_zranks[:, H] = _accel._rank_counts_array(counts, n, k, pascal)


def _summarize(costs, zranks, gidx, seed, H, discounted) -> SimulationResult:
    E = costs.size
    stderr = float(costs.std(ddof=1) / math.sqrt(E)) if E > 1 else math.inf
    return SimulationResult(
        episode_costs=costs,
        z_rank_paths=zranks,
        map_indices=gidx,
        mean=float(costs.mean()),
        stderr=stderr,
        seed=seed,
        horizon=H,
        discounted=discounted,
    )


def _simulate_flexible(
    model, policy, cost_tables, seed, H, num_episodes, beta, discounted, record_states
):
    n, k = model.n, model.k
    init_cdf = np.cumsum(model.init_dist)
    maps = enumerate_maps(model.k, model.num_actions)
    maps_arr = maps_matrix(model.k, model.num_actions)
    mean_fields = enumerate_mean_fields(model.n, model.k)
    pascal = pascal_table(n, k)
    exchangeable = model.cost.kind == "exchangeable"

    out_costs = np.zeros(num_episodes)
    out_zranks = np.zeros((num_episodes, H + 1), dtype=np.int64)
    out_gidx = np.zeros((num_episodes, H), dtype=np.int64)
    out_states = np.zeros((num_episodes, H + 1, n), dtype=np.int64) if record_states else None

    for ep in range(num_episodes):
        uniforms = episode_uniforms(seed, ep, H + 1, n)
        states = (uniforms[0][:, None] >= init_cdf[: k - 1]).sum(axis=1).astype(np.int64)
        total = 0.0
        w = 1.0
        for t in range(H):
            counts = np.bincount(states, minlength=k)
            r = rank_counts(counts, pascal)
            out_zranks[ep, t] = r
            if out_states is not None:
                out_states[ep, t] = states
            stage = t + 1 if model.horizon.kind == "finite" else 1
            g = int(policy.at_stage(stage)[r])
            out_gidx[ep, t] = g
            z = mean_fields[r]
            if exchangeable:
                total += w * float(model.cost.at_stage(stage)(z, maps[g]))
            else:
                actions = maps_arr[g][states]
                total += w * float(model.cost.at_stage(stage)(states, actions))
            w *= beta
            trans = model.transition_at(stage, z)
            cdf = np.cumsum(trans, axis=2)
            rows = cdf[maps_arr[g][states], states]  # (n, k)
            states = (uniforms[t + 1][:, None] >= rows[:, : k - 1]).sum(axis=1).astype(np.int64)
        counts = np.bincount(states, minlength=k)
        out_zranks[ep, H] = rank_counts(counts, pascal)
        if out_states is not None:
            out_states[ep, H] = states
        out_costs[ep] = total

    result = _summarize(out_costs, out_zranks, out_gidx, seed, H, discounted)
    if record_states:
        result = dataclasses.replace(result, states=out_states)
    return result


def _simulate_pomdp(model, solution: POMDPSolution, seed: int, num_episodes: int):
    """Finite-horizon rollout where the prescription comes from walking the
    solved belief tree with simulated observations."""
    if model.horizon.kind != "finite":
        raise ConfigError("belief-tree simulation needs a finite-horizon model")
    n, k = model.n, model.k
    H = solution.horizon
    init_cdf = np.cumsum(model.init_dist)
    maps = enumerate_maps(model.k, model.num_actions)
    maps_arr = maps_matrix(model.k, model.num_actions)
    mean_fields = enumerate_mean_fields(model.n, model.k)
    pascal = pascal_table(n, k)
    L_cdf = np.cumsum(solution.channel.likelihood, axis=0)  # over observations, per z
    Y = solution.channel.num_obs
    exchangeable = model.cost.kind == "exchangeable"

    out_costs = np.zeros(num_episodes)
    out_zranks = np.zeros((num_episodes, H + 1), dtype=np.int64)
    out_gidx = np.zeros((num_episodes, H), dtype=np.int64)

    for ep in range(num_episodes):
        uniforms = episode_uniforms(seed, ep, H + 1, n)
        obs_uniforms = _observation_uniforms(seed, ep, H, n)
        states = (uniforms[0][:, None] >= init_cdf[: k - 1]).sum(axis=1).astype(np.int64)
        node = solution.root
        total = 0.0
        for t in range(H):
            counts = np.bincount(states, minlength=k)
            r = rank_counts(counts, pascal)
            out_zranks[ep, t] = r
            y = int((obs_uniforms[t] >= L_cdf[: Y - 1, r]).sum())
            node = solution.child(node, y)
            g = node.map_index
            out_gidx[ep, t] = g
            z = mean_fields[r]
            if exchangeable:
                total += float(model.cost.at_stage(t + 1)(z, maps[g]))
            else:
                actions = maps_arr[g][states]
                total += float(model.cost.at_stage(t + 1)(states, actions))
            trans = model.transition_at(t + 1, z)
            cdf = np.cumsum(trans, axis=2)
            rows = cdf[maps_arr[g][states], states]
            states = (uniforms[t + 1][:, None] >= rows[:, : k - 1]).sum(axis=1).astype(np.int64)
        out_zranks[ep, H] = rank_counts(np.bincount(states, minlength=k), pascal)
        out_costs[ep] = total

    return _summarize(out_costs, out_zranks, out_gidx, seed, H, discounted=False)


# ---------------------------------------------------------------------------
# Statistical kernel validation
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class KernelValidation:
    tv_distance: float
    bound: float
    passed: bool
    num_samples: int


def validate_kernel(
    model: ModelSpec,
    z: MeanField,
    gamma: CoordinationMap,
    seed: int,
    num_samples: int,
    confidence: float = 0.99,
) -> KernelValidation:
    """Total-variation distance between empirical next-mean-field frequencies
    and the exact kernel row, with an L1-concentration pass/fail bound.

    The bound sqrt((S ln 2 + ln(1/delta)) / (2 N)) holds with probability at
    least ``confidence`` for the true kernel, so a correct implementation
    fails at most (1 - confidence) of the time per pair (much less in
    practice, the union bound being loose).
    """
    if num_samples < 1:
        raise ConfigError("num_samples must be >= 1")
    exact = lift_kernel_row(model, z, gamma, t=1)
    S = exact.size
    trans = model.transition_at(1, z)
    gen = np.random.Generator(np.random.Philox(key=np.array([seed, 0], dtype=np.uint64)))
    next_counts = np.zeros((num_samples, model.k), dtype=np.int64)
    for x in range(model.k):
        m_x = int(z.counts[x])
        if m_x == 0:
            continue
        row = trans[gamma.assignment[x], x, :]
        next_counts += gen.multinomial(m_x, row, size=num_samples)
    pascal = pascal_table(model.n, model.k)
    ranks = _accel._rank_counts_array(next_counts, model.n, model.k, pascal)
    empirical = np.bincount(ranks, minlength=S) / num_samples
    tv = 0.5 * float(np.abs(empirical - exact).sum())
    delta = 1.0 - confidence
    bound = math.sqrt((S * math.log(2.0) + math.log(1.0 / delta)) / (2.0 * num_samples))
    return KernelValidation(tv_distance=tv, bound=bound, passed=tv <= bound, num_samples=num_samples)
