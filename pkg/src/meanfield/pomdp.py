"""Partially observed mean-field sharing.

When controllers see only a noisy symbol of the mean-field, the information
state becomes the belief: a distribution over mean-field ranks. This module
provides the observation channel, the Bayes update of the belief through
one (map, observation) step, the belief-lifted cost, and an exact
finite-horizon solver by backward induction on the reachable belief tree.

The root of the tree is the prior mean-field distribution (the multinomial
of the initial state PMF) filtered through the first observation; the
root value is the expectation of the stage-1 value over that observation.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import BudgetError, ConfigError, ObservationInconsistencyError
from .lifting import LiftedKernel, LiftedMDP
from .model import CoordinationMap, MeanField, ModelSpec, initial_mean_field_distribution

__all__ = [
    "ObservationChannel",
    "Belief",
    "belief_prediction",
    "belief_update",
    "lift_belief_cost",
    "BeliefNode",
    "POMDPSolution",
    "solve_pomdp_finite",
]

BELIEF_ATOL = 1e-10
CHANNEL_ATOL = 1e-12


@dataclass(frozen=True)
class ObservationChannel:
    """Finite observation alphabet with likelihood table L[y, z_rank].

    For every mean-field the likelihoods over observations sum to one.
    """

    likelihood: np.ndarray

    def __post_init__(self):
        table = np.asarray(self.likelihood, dtype=np.float64)
        if table.ndim != 2:
            raise ConfigError(f"likelihood must be 2-d (observations, states), got {table.shape}")
        if np.any(table < 0):
            raise ConfigError("likelihood has negative entries")
        col_sums = table.sum(axis=0)
        bad = np.nonzero(np.abs(col_sums - 1.0) > CHANNEL_ATOL)[0]
        if bad.size:
            z = int(bad[0])
            raise ConfigError(
                f"channel: likelihoods for z_rank={z} sum to {col_sums[z]!r} "
                f"(must be 1 within {CHANNEL_ATOL})"
            )
        object.__setattr__(self, "likelihood", table)

    @property
    def num_obs(self) -> int:
        return self.likelihood.shape[0]

    @property
    def num_states(self) -> int:
        return self.likelihood.shape[1]

    @classmethod
    def noiseless(cls, num_states: int) -> "ObservationChannel":
        """Perfect observation: the alphabet is the mean-field rank itself."""
        return cls(np.eye(num_states))

    @classmethod
    def noisy_identity(cls, num_states: int, accuracy: float) -> "ObservationChannel":
        """Reports the true rank with the given probability, otherwise one of
        the remaining ranks uniformly."""
        if num_states < 2:
            raise ConfigError("noisy-identity channel needs at least 2 mean-fields")
        if not 0.0 <= accuracy <= 1.0:
            raise ConfigError(f"accuracy must lie in [0, 1], got {accuracy}")
        off = (1.0 - accuracy) / (num_states - 1)
        table = np.full((num_states, num_states), off)
        np.fill_diagonal(table, accuracy)
        return cls(table)

    @classmethod
    def from_function(
        cls, h, noise_pmf, num_obs: int, mean_fields: list[MeanField]
    ) -> "ObservationChannel":
        """Compile y = h(z, noise) with finite noise into a likelihood table."""
        pmf = np.asarray(noise_pmf, dtype=np.float64)
        if np.any(pmf < 0) or abs(pmf.sum() - 1.0) > CHANNEL_ATOL:
            raise ConfigError(f"noise pmf must be a probability vector, sums to {pmf.sum()!r}")
        table = np.zeros((num_obs, len(mean_fields)))
        for zi, z in enumerate(mean_fields):
            for nu, p in enumerate(pmf):
                y = int(h(z, nu))
                if not 0 <= y < num_obs:
                    raise ConfigError(f"h(z={z.counts}, nu={nu}) = {y} outside [0, {num_obs})")
                table[y, zi] += p
        return cls(table)


@dataclass(frozen=True)
class Belief:
    """Probability vector over mean-field ranks."""

    probs: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.probs, dtype=np.float64)
        if np.any(p < 0):
            raise ConfigError("belief has negative entries")
        if abs(p.sum() - 1.0) > BELIEF_ATOL:
            raise ConfigError(f"belief sums to {p.sum()!r} (must be 1 within {BELIEF_ATOL})")
        object.__setattr__(self, "probs", p)


def _stage_kernel_of(lifted) -> LiftedKernel:
    if isinstance(lifted, LiftedKernel):
        return lifted
    if isinstance(lifted, LiftedMDP):
        if not lifted.stationary:
            raise TypeError("pass the stage's LiftedKernel for a time-varying model")
        return lifted.kernel_at(1)
    raise TypeError(f"expected LiftedKernel or LiftedMDP, got {type(lifted)!r}")


def _map_index_of(gamma, num_maps: int) -> int:
    g = gamma.index if isinstance(gamma, CoordinationMap) else int(gamma)
    if not 0 <= g < num_maps:
        raise IndexError(f"map index {g} outside [0, {num_maps})")
    return g


def belief_prediction(belief: Belief, gamma, lifted) -> np.ndarray:
    """Pre-observation distribution of the next mean-field under the map."""
    kernel = _stage_kernel_of(lifted)
    g = _map_index_of(gamma, kernel.num_maps)
    return belief.probs @ kernel.matrix(g)


def belief_update(belief: Belief, gamma, y: int, lifted, channel: ObservationChannel) -> Belief:
    """Bayes step: predict through the kernel, weight by the observation
    likelihood, normalize. A zero normalizer means the observation is
    impossible under the model and raises rather than being papered over."""
    pred = belief_prediction(belief, gamma, lifted)
    post = channel.likelihood[y] * pred
    norm = post.sum()
    if norm <= 0.0:
        raise ObservationInconsistencyError(
            f"observation {y} has probability 0 under the predicted belief"
        )
    return Belief(post / norm)


def lift_belief_cost(belief: Belief, gamma, lifted) -> float:
    """Expected per-step cost under the belief: the z-lifted cost averaged
    over the belief."""
    if isinstance(lifted, LiftedMDP):
        cost = lifted.cost_at(1) if lifted.stationary else None
        if cost is None:
            raise TypeError("pass the stage's cost table for a time-varying model")
    else:
        cost = np.asarray(lifted, dtype=np.float64)
    g = _map_index_of(gamma, cost.shape[1])
    return float(belief.probs @ cost[:, g])


# ---------------------------------------------------------------------------
# Exact finite-horizon solver on the reachable belief tree
# ---------------------------------------------------------------------------


@dataclass
class BeliefNode:
    node_id: int
    parent_id: int  # -1 at the root
    depth: int  # stage t; 0 for the pre-observation root
    observation: int  # symbol that led here; -1 at the root
    belief: np.ndarray
    map_index: int  # chosen prescription; -1 at the root
    value: float
    children: dict[int, int] = field(default_factory=dict)  # observation -> node_id


@dataclass(frozen=True)
class POMDPSolution:
    root_value: float
    nodes: list[BeliefNode]
    channel: ObservationChannel
    horizon: int

    @property
    def root(self) -> BeliefNode:
        return self.nodes[0]

    def child(self, node: BeliefNode, y: int) -> BeliefNode:
        try:
            return self.nodes[node.children[y]]
        except KeyError:
            raise ObservationInconsistencyError(
                f"observation {y} unreachable from node {node.node_id}"
            ) from None


def solve_pomdp_finite(
    model: ModelSpec,
    lifted: LiftedMDP,
    channel: ObservationChannel,
    node_budget: int = 200_000,
) -> POMDPSolution:
    """Backward induction over beliefs reachable from the initial prior.

    Values are memoized on exact belief bytes, so channels that collapse the
    belief (e.g. noiseless observation) cost far less than the worst-case
    (num_maps * num_obs)**T expansion. Exceeding ``node_budget`` distinct
    (stage, belief) evaluations raises :class:`BudgetError`.
    """
    if model.horizon.kind != "finite":
        raise ConfigError("solve_pomdp_finite needs a finite-horizon model")
    if channel.num_states != lifted.num_states:
        raise ConfigError(
            f"channel covers {channel.num_states} mean-fields, model has {lifted.num_states}"
        )
    T = model.horizon.T
    G = lifted.num_maps
    L = channel.likelihood
    Y = channel.num_obs

    memo: dict[tuple[int, bytes], tuple[float, int]] = {}
    evaluated = 0

    def value(t: int, pi: np.ndarray) -> float:
        nonlocal evaluated
        key = (t, pi.tobytes())
        hit = memo.get(key)
        if hit is not None:
            return hit[0]
        evaluated += 1
        if evaluated > node_budget:
            raise BudgetError(
                f"belief evaluations exceeded node budget {node_budget}",
                required=evaluated,
                budget=node_budget,
            )
        cost_t = lifted.cost_at(t)
        kernel_t = lifted.kernel_at(t)
        best = np.inf
        best_g = -1
        for g in range(G):
            q = float(pi @ cost_t[:, g])
            if t < T:
                pred = pi @ kernel_t.matrix(g)
                p_obs = L @ pred
                for y in range(Y):
                    if p_obs[y] <= 0.0:
                        continue
                    child = L[y] * pred / p_obs[y]
                    q += p_obs[y] * value(t + 1, child)
            if q < best:
                best = q
                best_g = g
        memo[key] = (best, best_g)
        return best

    prior = initial_mean_field_distribution(model)
    p_first = L @ prior
    root_value = 0.0
    first_beliefs: dict[int, np.ndarray] = {}
    for y in range(Y):
        if p_first[y] <= 0.0:
            continue
        pi = L[y] * prior / p_first[y]
        first_beliefs[y] = pi
        root_value += p_first[y] * value(1, pi)

    # materialize the tree along the optimal prescriptions
    nodes = [BeliefNode(0, -1, 0, -1, prior, -1, root_value)]

    def expand(parent: BeliefNode, y: int, t: int, pi: np.ndarray):
        v, g = memo[(t, pi.tobytes())]
        node = BeliefNode(len(nodes), parent.node_id, t, y, pi, g, v)
        nodes.append(node)
        if len(nodes) > node_budget:
            raise BudgetError(
                f"belief tree exceeded node budget {node_budget}",
                required=len(nodes),
                budget=node_budget,
            )
        parent.children[y] = node.node_id
        if t < T:
            pred = pi @ lifted.kernel_at(t).matrix(g)
            p_obs = L @ pred
            for y2 in range(Y):
                if p_obs[y2] <= 0.0:
                    continue
                expand(node, y2, t + 1, L[y2] * pred / p_obs[y2])

    for y in sorted(first_beliefs):
        expand(nodes[0], y, 1, first_beliefs[y])

    return POMDPSolution(root_value=root_value, nodes=nodes, channel=channel, horizon=T)
