"""Brute-force reference implementations over the joint state space.

Everything here exists to validate the fast paths and is deliberately
simple: joint states are enumerated explicitly, per-subsystem noise is
reconstructed as an explicit finite alphabet (each transition row realized
as a noise-indexed deterministic map over the cells cut by all row CDFs),
and strategies are searched exhaustively. None of it shares code with the
lifting/solving layers beyond the core model types.
"""

from __future__ import annotations

import itertools
import math
from functools import lru_cache

import numpy as np

from .errors import BudgetError, ConfigError, NumericError
from .model import (
    CoordinationMap,
    MeanField,
    ModelSpec,
    class_size,
    num_mean_fields,
    rank_counts,
)
from .solver import Policy, evaluate_policy

__all__ = [
    "joint_states",
    "noise_realization",
    "brute_kernel",
    "brute_kernel_literal",
    "brute_cost",
    "exhaustive_symmetric_search",
    "brute_value",
]

MAX_N_JOINT = 5
MAX_STRATEGY_CANDIDATES = 10**7
MAX_LITERAL_TERMS = 2 * 10**6


@lru_cache(maxsize=32)
def joint_states(n: int, k: int) -> np.ndarray:
    """(k**n, n) array of all joint states, lexicographic."""
    arr = np.array(list(itertools.product(range(k), repeat=n)), dtype=np.int64)
    arr.setflags(write=False)
    return arr


@lru_cache(maxsize=32)
def _joint_counts(n: int, k: int) -> np.ndarray:
    states = joint_states(n, k)
    counts = np.stack([np.bincount(row, minlength=k) for row in states])
    counts.setflags(write=False)
    return counts


@lru_cache(maxsize=32)
def _joint_ranks(n: int, k: int) -> np.ndarray:
    counts = _joint_counts(n, k)
    ranks = np.array([rank_counts(row) for row in counts], dtype=np.int64)
    ranks.setflags(write=False)
    return ranks


def noise_realization(trans: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Realize per-action stochastic matrices as (f, P_W).

    The noise alphabet is the set of cells cut out of [0, 1) by the union of
    all row CDFs; each cell lies inside exactly one bucket of every row, so
    f[x, u, w] is deterministic and marginalizing the uniform-cell noise
    recovers the original rows exactly (up to float telescoping).
    """
    num_actions, k, _ = trans.shape
    cums = np.cumsum(trans, axis=2)
    cuts = np.unique(np.concatenate([[0.0], cums.ravel()]))
    widths = np.diff(cuts)
    pmf = widths / widths.sum()
    W = widths.size
    f = np.zeros((k, num_actions, W), dtype=np.int64)
    for x in range(k):
        for u in range(num_actions):
            c = cums[u, x]
            y = np.searchsorted(c, cuts[:-1], side="right")
            f[x, u] = np.minimum(y, k - 1)
    # sanity: the realization must reproduce the rows
    rebuilt = np.zeros_like(trans)
    for x in range(k):
        for u in range(num_actions):
            np.add.at(rebuilt[u, x], f[x, u], pmf)
    if np.max(np.abs(rebuilt - trans)) > 1e-12:
        raise NumericError("noise realization failed to reproduce the transition rows")
    return f, pmf


def _members(z: MeanField, n: int, k: int) -> np.ndarray:
    states = joint_states(n, k)
    target = np.asarray(z.counts, dtype=np.int64)
    return states[np.all(_joint_counts(n, k) == target, axis=1)]


def brute_kernel(model: ModelSpec, z: MeanField, gamma: CoordinationMap, t: int = 1) -> np.ndarray:
    """Next mean-field distribution by definition: average over the joint
    states in H(z) of the push-forward of the per-subsystem noise."""
    n, k = model.n, model.k
    if n > MAX_N_JOINT:
        raise BudgetError(f"brute_kernel enumerates k**n joint states; n={n} > {MAX_N_JOINT}")
    trans = model.transition_at(t, z)
    rows = _realized_rows(trans, model.num_actions, k)

    all_next = joint_states(n, k)
    ranks_next = _joint_ranks(n, k)
    gamma_arr = np.asarray(gamma.assignment, dtype=np.int64)
    members = _members(z, n, k)
    acc = np.zeros(num_mean_fields(n, k))
    cols = np.arange(n)
    for x_row in members:
        per_sub = rows[x_row, gamma_arr[x_row], :]  # (n, k)
        probs = per_sub[cols[None, :], all_next].prod(axis=1)
        acc += np.bincount(ranks_next, weights=probs, minlength=acc.size)
    return acc / members.shape[0]


def brute_kernel_literal(
    model: ModelSpec, z: MeanField, gamma: CoordinationMap, t: int = 1
) -> np.ndarray:
    """Fully literal double sum over (joint state in H(z), joint noise word).

    Exists to confirm, on tiny instances, that factorizing the noise sum per
    subsystem (as brute_kernel does) changes nothing.
    """
    n, k = model.n, model.k
    trans = model.transition_at(t, z)
    f, pmf = noise_realization(trans)
    W = pmf.size
    members = _members(z, n, k)
    if members.shape[0] * W**n > MAX_LITERAL_TERMS:
        raise BudgetError(
            f"literal sum has {members.shape[0] * W ** n} terms (cap {MAX_LITERAL_TERMS})"
        )
    gamma_arr = np.asarray(gamma.assignment, dtype=np.int64)
    acc = np.zeros(num_mean_fields(n, k))
    for x_row in members:
        u_row = gamma_arr[x_row]
        for w_word in itertools.product(range(W), repeat=n):
            p = 1.0
            counts = [0] * k
            for i in range(n):
                p *= pmf[w_word[i]]
                counts[f[x_row[i], u_row[i], w_word[i]]] += 1
            acc[rank_counts(counts)] += p
    return acc / members.shape[0]


def brute_cost(model: ModelSpec, z: MeanField, gamma: CoordinationMap, t: int = 1) -> float:
    """Literal average of the joint cost over H(z)."""
    n, k = model.n, model.k
    fn = model.cost.at_stage(t)
    if model.cost.kind == "exchangeable":
        # declared to factor through (z, map): the average is one evaluation
        return float(fn(z, gamma))
    if class_size(z) > 10**6 or k**n > 4 * 10**6:
        raise BudgetError(f"H(z) too large to enumerate for counts {z.counts}")
    members = _members(z, n, k)
    gamma_arr = np.asarray(gamma.assignment, dtype=np.int64)
    total = math.fsum(float(fn(row, gamma_arr[row])) for row in members)
    return total / members.shape[0]


def exhaustive_symmetric_search(
    model: ModelSpec,
    lifted,
    T: int | None = None,
    guard: int = MAX_STRATEGY_CANDIDATES,
) -> tuple[Policy, float]:
    """Minimum total cost over ALL Markov symmetric strategies, by enumeration.

    Every assignment of a coordination map to each (stage, mean-field) pair
    is evaluated exactly; ties keep the first candidate in product order.
    """
    if model.horizon.kind != "finite":
        raise ConfigError("exhaustive search needs a finite horizon")
    T = model.horizon.T if T is None else T
    S = num_mean_fields(model.n, model.k)
    G = model.num_maps()
    n_candidates = G ** (S * T)
    if n_candidates > guard:
        raise BudgetError(f"{n_candidates} candidate strategies exceed guard {guard}")
    best_value = math.inf
    best_policy = None
    for flat in itertools.product(range(G), repeat=S * T):
        policy = Policy(np.asarray(flat, dtype=np.int64).reshape(T, S), stationary=False)
        _, value = evaluate_policy(model, lifted, policy)
        if value < best_value:
            best_value = value
            best_policy = policy
    return best_policy, best_value


def brute_value(model: ModelSpec, policy: Policy, T: int | None = None) -> float:
    """Expected total cost of a symmetric Markov policy, computed on the joint
    chain over X^n with explicitly reconstructed per-subsystem rows.

    Independent of the lifted tables: cross-checks kernel, cost lifting, and
    policy evaluation in one number.
    """
    n, k = model.n, model.k
    if n > MAX_N_JOINT:
        raise BudgetError(f"brute_value enumerates k**n joint states; n={n} > {MAX_N_JOINT}")
    if model.horizon.kind != "finite":
        raise ConfigError("brute_value needs a finite horizon")
    T = model.horizon.T if T is None else T
    states = joint_states(n, k)
    M = states.shape[0]
    ranks = _joint_ranks(n, k)
    mean_fields = [
        MeanField(tuple(int(c) for c in row)) for row in _joint_counts(n, k)
    ]
    from .model import enumerate_maps

    maps = enumerate_maps(k, model.num_actions)
    dist = np.prod(model.init_dist[states], axis=1)
    cols = np.arange(n)
    total = 0.0
    for t in range(1, T + 1):
        g_by_state = policy.at_stage(t)[ranks]  # map index per joint state
        fn = model.cost.at_stage(t)
        stage = 0.0
        for m in range(M):
            if dist[m] == 0.0:
                continue
            gamma = maps[g_by_state[m]]
            if model.cost.kind == "exchangeable":
                stage += dist[m] * float(fn(mean_fields[m], gamma))
            else:
                gamma_arr = np.asarray(gamma.assignment, dtype=np.int64)
                stage += dist[m] * float(fn(states[m], gamma_arr[states[m]]))
        total += stage
        if t == T:
            break
        stage_rows = None
        if model.transition_kind != "mean_field":
            stage_rows = _realized_rows(model.transition_at(t), model.num_actions, k)
        new_dist = np.zeros(M)
        for m in range(M):
            if dist[m] == 0.0:
                continue
            x_row = states[m]
            rows = stage_rows
            if rows is None:
                rows = _realized_rows(model.transition_at(t, mean_fields[m]), model.num_actions, k)
            gamma_arr = np.asarray(maps[g_by_state[m]].assignment, dtype=np.int64)
            per_sub = rows[x_row, gamma_arr[x_row], :]
            new_dist += dist[m] * per_sub[cols[None, :], states].prod(axis=1)
        dist = new_dist
    return total


def _realized_rows(trans: np.ndarray, num_actions: int, k: int) -> np.ndarray:
    """Per-(state, action) rows rebuilt from the explicit noise realization."""
    f, pmf = noise_realization(trans)
    rows = np.zeros((k, num_actions, k))
    for x in range(k):
        for u in range(num_actions):
            np.add.at(rows[x, u], f[x, u], pmf)
    return rows
