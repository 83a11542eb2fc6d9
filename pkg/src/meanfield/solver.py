"""Dynamic programming over the mean-field simplex.

Finite horizon: backward induction with terminal value zero. Infinite
horizon with discounting: value iteration run until the contraction bound
guarantees the returned value is within ``tol`` of the fixed point, then a
greedy stationary policy is extracted. Both share one backup routine; the
minimizing map is always the lowest-index argmin so that every controller,
solving the same program independently, lands on the same strategy.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError
from .lifting import LiftedMDP
from .model import ModelSpec, initial_mean_field_distribution, maps_matrix

__all__ = [
    "Policy",
    "ValueFunction",
    "SolveResult",
    "solve_finite_horizon",
    "solve_discounted",
    "evaluate_policy",
    "to_controller_strategy",
    "policy_from_controller_strategy",
    "bellman_residual",
]


@dataclass(frozen=True)
class Policy:
    """Map index per (stage, mean-field rank). Stationary policies hold one row."""

    table: np.ndarray  # (T, S) or (1, S) int64
    stationary: bool

    def __post_init__(self):
        tab = np.asarray(self.table, dtype=np.int64)
        if tab.ndim != 2:
            raise ConfigError(f"policy table must be 2-d (stages, states), got shape {tab.shape}")
        if self.stationary and tab.shape[0] != 1:
            raise ConfigError("stationary policy must have exactly one stage row")
        object.__setattr__(self, "table", tab)

    def at_stage(self, t: int) -> np.ndarray:
        return self.table[0] if self.stationary else self.table[t - 1]

    @property
    def num_stages(self) -> int:
        return self.table.shape[0]


@dataclass(frozen=True)
class ValueFunction:
    """Value per (stage, mean-field rank); finite-horizon includes V_{T+1} = 0."""

    values: np.ndarray  # (T+1, S) finite-horizon, (1, S) stationary
    stationary: bool

    def at_stage(self, t: int) -> np.ndarray:
        return self.values[0] if self.stationary else self.values[t - 1]


@dataclass(frozen=True)
class SolveResult:
    policy: Policy
    value: ValueFunction
    iterations: int = 0
    sup_norm_deltas: tuple[float, ...] = ()


def _backup(cost: np.ndarray, kernel, v_next: np.ndarray, discount: float):
    """One Bellman backup: Q(z, g) = cost + discount * E[v_next(Z')]."""
    q = cost + discount * kernel.dot(v_next)
    # np.argmin returns the first (lowest-index) minimizer: deterministic ties
    return q.min(axis=1), q.argmin(axis=1).astype(np.int64)


def solve_finite_horizon(model: ModelSpec, lifted: LiftedMDP) -> SolveResult:
    """Exact backward induction for a finite-horizon model."""
    if model.horizon.kind != "finite":
        raise ConfigError("solve_finite_horizon needs a finite-horizon model")
    T = model.horizon.T
    S = lifted.num_states
    values = np.zeros((T + 1, S))
    policy = np.zeros((T, S), dtype=np.int64)
    for t in range(T, 0, -1):
        v, g = _backup(lifted.cost_at(t), lifted.kernel_at(t), values[t], 1.0)
        values[t - 1] = v
        policy[t - 1] = g
    return SolveResult(
        policy=Policy(policy, stationary=False),
        value=ValueFunction(values, stationary=False),
        iterations=T,
    )


def solve_discounted(model: ModelSpec, lifted: LiftedMDP, tol: float = 1e-8) -> SolveResult:
    """Value iteration to within ``tol`` of the optimal discounted value.

    Stops when the sup-norm update drops below tol*(1-beta)/(2*beta), which
    bounds the true value error by tol; the greedy policy of the final value
    is returned as the stationary optimum.
    """
    if model.horizon.kind != "discounted":
        raise ConfigError("solve_discounted needs a discounted-horizon model")
    if not model.time_homogeneous:
        raise ConfigError("discounted solving requires time-homogeneous dynamics and cost")
    if tol <= 0:
        raise ConfigError(f"tol must be positive, got {tol}")
    beta = model.horizon.beta
    cost = lifted.cost_at(1)
    kernel = lifted.kernel_at(1)
    S = lifted.num_states
    threshold = tol * (1.0 - beta) / (2.0 * beta)
    v = np.zeros(S)
    deltas = []
    iterations = 0
    while True:
        v_new, _ = _backup(cost, kernel, v, beta)
        delta = float(np.max(np.abs(v_new - v)))
        deltas.append(delta)
        iterations += 1
        v = v_new
        if delta < threshold:
            break
        if iterations > 10_000_000:  # unreachable for beta < 1; defensive
            raise RuntimeError("value iteration failed to converge")
    _, g = _backup(cost, kernel, v, beta)
    return SolveResult(
        policy=Policy(g.reshape(1, -1), stationary=True),
        value=ValueFunction(v.reshape(1, -1), stationary=True),
        iterations=iterations,
        sup_norm_deltas=tuple(deltas),
    )


def evaluate_policy(
    model: ModelSpec, lifted: LiftedMDP, policy: Policy, tol: float = 1e-10
) -> tuple[ValueFunction, float]:
    """Exact value of a fixed policy, and its total expected cost J.

    Finite horizon: one exact backward recursion. Discounted: fixed-point
    iteration on V = c_psi + beta * P_psi V until the contraction bound
    guarantees error below ``tol``. J weights V at stage 1 by the multinomial
    distribution of the initial mean-field.
    """
    S = lifted.num_states
    p1 = initial_mean_field_distribution(model)
    rows = np.arange(S)
    if model.horizon.kind == "finite":
        T = model.horizon.T
        if not policy.stationary and policy.num_stages != T:
            raise ConfigError(f"policy has {policy.num_stages} stages, horizon T={T}")
        values = np.zeros((T + 1, S))
        for t in range(T, 0, -1):
            g = policy.at_stage(t)
            q = lifted.cost_at(t) + lifted.kernel_at(t).dot(values[t])
            values[t - 1] = q[rows, g]
        vf = ValueFunction(values, stationary=False)
        return vf, float(np.dot(p1, values[0]))

    if not policy.stationary:
        raise ConfigError("discounted evaluation needs a stationary policy")
    beta = model.horizon.beta
    g = policy.at_stage(1)
    cost = lifted.cost_at(1)[rows, g]
    kernel = lifted.kernel_at(1)
    threshold = tol * (1.0 - beta) / (2.0 * beta)
    v = np.zeros(S)
    while True:
        q = cost + beta * kernel.dot(v)[rows, g]
        delta = float(np.max(np.abs(q - v)))
        v = q
        if delta < threshold:
            break
    vf = ValueFunction(v.reshape(1, -1), stationary=True)
    return vf, float(np.dot(p1, v))


def to_controller_strategy(policy: Policy, k: int, num_actions: int) -> np.ndarray:
    """Per-controller table g(z, x) = (map chosen at z)(x), shape (stages, S, k)."""
    maps = maps_matrix(k, num_actions)
    return maps[policy.table]


def policy_from_controller_strategy(
    strategy: np.ndarray, num_actions: int, stationary: bool
) -> Policy:
    """Inverse of :func:`to_controller_strategy` (re-encode actions as map indices)."""
    strategy = np.asarray(strategy, dtype=np.int64)
    if strategy.ndim == 2:
        strategy = strategy[None, :, :]
    k = strategy.shape[2]
    powers = num_actions ** np.arange(k - 1, -1, -1, dtype=np.int64)
    table = strategy @ powers
    return Policy(table, stationary=stationary)


def bellman_residual(model: ModelSpec, lifted: LiftedMDP, result: SolveResult) -> float:
    """max_z |V(z) - (T V)(z)| for the returned value (stationary case),
    or the max backward-recursion defect (finite case)."""
    if model.horizon.kind == "discounted":
        v = result.value.at_stage(1)
        tv, _ = _backup(lifted.cost_at(1), lifted.kernel_at(1), v, model.horizon.beta)
        return float(np.max(np.abs(tv - v)))
    T = model.horizon.T
    worst = 0.0
    for t in range(1, T + 1):
        v_next = result.value.values[t]
        tv, _ = _backup(lifted.cost_at(t), lifted.kernel_at(t), v_next, 1.0)
        worst = max(worst, float(np.max(np.abs(tv - result.value.values[t - 1]))))
    return worst
