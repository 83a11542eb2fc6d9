"""Oracle-equivalence checks and the models they run on.

The CLI ``verify`` subcommand runs a quick pass of every check; the
acceptance test suite runs the same functions at full size. Each check
returns the worst observed error so callers can assert their own
tolerances.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .lifting import build_lifted_mdp, lift_cost, lift_kernel_row
from .model import (
    CoordinationMap,
    CostSpec,
    Horizon,
    MeanField,
    ModelSpec,
    enumerate_maps,
    enumerate_mean_fields,
    initial_mean_field_distribution,
    rank_counts,
)
from .oracle import brute_cost, brute_kernel, brute_value, exhaustive_symmetric_search
from .pomdp import Belief, ObservationChannel, belief_prediction, belief_update, solve_pomdp_finite
from .solver import Policy, evaluate_policy, solve_finite_horizon

__all__ = [
    "VerificationCheck",
    "random_transition",
    "random_model",
    "random_general_cost",
    "counterexample_model",
    "check_kernel_equivalence",
    "check_cost_equivalence",
    "check_dp_vs_exhaustive",
    "check_counterexample",
    "check_pomdp_reduction",
    "check_belief_consistency",
    "check_policy_evaluation",
    "run_verification",
]


@dataclass(frozen=True)
class VerificationCheck:
    name: str
    passed: bool
    detail: str


# ---------------------------------------------------------------------------
# model corpus
# ---------------------------------------------------------------------------


def random_transition(rng: np.random.Generator, k: int, num_actions: int) -> np.ndarray:
    mats = rng.random((num_actions, k, k)) + 0.05
    return mats / mats.sum(axis=2, keepdims=True)


def zero_cost() -> CostSpec:
    return CostSpec(kind="exchangeable", fn=lambda z, gamma: 0.0)


def random_exchangeable_cost(rng: np.random.Generator, n: int, k: int, num_actions: int) -> CostSpec:
    S = len(enumerate_mean_fields(n, k))
    table = rng.random((S, num_actions**k))

    def fn(z, gamma):
        return float(table[rank_counts(z.counts), gamma.index])

    return CostSpec(kind="exchangeable", fn=fn)


def random_general_cost(rng: np.random.Generator, n: int, k: int, num_actions: int) -> CostSpec:
    """Permutation-asymmetric joint cost: per-subsystem terms that depend on
    the subsystem index, plus a coupling between the first and last."""
    a = rng.random((n, k))
    b = rng.random((n, num_actions))
    c = rng.random((k, k))

    def fn(x, u):
        x = np.asarray(x)
        u = np.asarray(u)
        idx = np.arange(len(x))
        return float(a[idx, x].sum() + b[idx, u].sum() + c[x[0], x[-1]])

    return CostSpec(kind="general", fn=fn)


def random_model(
    rng: np.random.Generator,
    n: int,
    k: int,
    num_actions: int,
    horizon: Horizon | None = None,
    cost: CostSpec | None = None,
) -> ModelSpec:
    init = rng.random(k) + 0.05
    return ModelSpec(
        n=n,
        k=k,
        num_actions=num_actions,
        transition=random_transition(rng, k, num_actions),
        cost=cost if cost is not None else zero_cost(),
        horizon=horizon if horizon is not None else Horizon.finite(2),
        init_dist=init / init.sum(),
    )


def counterexample_model(K: float = 1.0) -> ModelSpec:
    """Two subsystems whose next state equals their action; stage 2 charges K
    unless the population is split evenly. The best symmetric strategy pays
    K/2 in expectation while an asymmetric one would pay nothing."""
    # next state = action, regardless of current state
    trans = np.zeros((2, 2, 2))
    trans[0, :, 0] = 1.0
    trans[1, :, 1] = 1.0

    def stage1(z, gamma):
        return 0.0

    def stage2(z, gamma):
        return K if z.counts != (1, 1) else 0.0

    return ModelSpec(
        n=2,
        k=2,
        num_actions=2,
        transition=trans,
        cost=CostSpec(kind="exchangeable", fn=None, stage_fns=(stage1, stage2)),
        horizon=Horizon.finite(2),
        init_dist=np.array([0.5, 0.5]),
    )


# ---------------------------------------------------------------------------
# checks
# ---------------------------------------------------------------------------


def check_kernel_equivalence(seed: int, num_models: int) -> tuple[float, int]:
    """Exact kernel vs joint-space brute force over every (z, map) pair of
    randomized models with n in 1..4, k in {2,3}, actions in {1,2}."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    rows = 0
    for _ in range(num_models):
        n = int(rng.integers(1, 5))
        k = int(rng.integers(2, 4))
        num_actions = int(rng.integers(1, 3))
        model = random_model(rng, n, k, num_actions)
        mean_fields = enumerate_mean_fields(n, k)
        maps = enumerate_maps(k, num_actions)
        for z in mean_fields:
            for gamma in maps:
                fast = lift_kernel_row(model, z, gamma)
                slow = brute_kernel(model, z, gamma)
                worst = max(worst, float(np.max(np.abs(fast - slow))))
                rows += 1
    return worst, rows


def check_cost_equivalence(seed: int, num_cases: int) -> float:
    """Lifted general cost vs literal H(z) average on random joint costs."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(num_cases):
        n = int(rng.integers(2, 6))
        k = int(rng.integers(2, 4))
        num_actions = int(rng.integers(1, 3))
        cost = random_general_cost(rng, n, k, num_actions)
        model = random_model(rng, n, k, num_actions, cost=cost)
        mean_fields = enumerate_mean_fields(n, k)
        maps = enumerate_maps(k, num_actions)
        z = mean_fields[int(rng.integers(len(mean_fields)))]
        gamma = maps[int(rng.integers(len(maps)))]
        fast = lift_cost(model, z, gamma)
        slow = brute_cost(model, z, gamma)
        worst = max(worst, abs(fast - slow))
    return worst


def _dp_value(model: ModelSpec) -> tuple[float, Policy]:
    lifted = build_lifted_mdp(model)
    result = solve_finite_horizon(model, lifted)
    p1 = initial_mean_field_distribution(model)
    return float(np.dot(p1, result.value.values[0])), result.policy


def check_dp_vs_exhaustive(seed: int, num_models: int = 3) -> float:
    """Backward induction vs enumeration of every Markov symmetric strategy,
    on the counterexample and random two-state, two-action, T=2 models."""
    rng = np.random.default_rng(seed)
    models = [counterexample_model()]
    for _ in range(num_models):
        n = int(rng.integers(1, 4))
        cost = random_exchangeable_cost(rng, n, 2, 2)
        models.append(random_model(rng, n, 2, 2, cost=cost))
    worst = 0.0
    for model in models:
        dp_value, _ = _dp_value(model)
        lifted = build_lifted_mdp(model)
        _, brute_min = exhaustive_symmetric_search(model, lifted)
        worst = max(worst, abs(dp_value - brute_min))
    return worst


def check_counterexample() -> dict:
    """The even-split example: symmetric optimum K/2, asymmetric benchmark 0,
    exact scaling in K with an unchanged argmin policy."""
    model = counterexample_model(1.0)
    lifted = build_lifted_mdp(model)
    value_1, policy_1 = _dp_value(model)
    _, exhaustive_1 = exhaustive_symmetric_search(model, lifted)

    model_10 = counterexample_model(10.0)
    value_10, policy_10 = _dp_value(model_10)

    # the known asymmetric strategy "controller i plays i": both actions
    # distinct, next states distinct, stage-2 cost identically zero
    trans = model.transition_at(1)
    asym_cost = 0.0
    for x1 in itertools.product(range(2), repeat=2):
        p_x1 = model.init_dist[x1[0]] * model.init_dist[x1[1]]
        u = (0, 1)  # controller i plays i
        for y1 in range(2):
            for y2 in range(2):
                p_next = trans[u[0], x1[0], y1] * trans[u[1], x1[1], y2]
                if p_next == 0.0:
                    continue
                counts = (int(y1 == 0) + int(y2 == 0), int(y1 == 1) + int(y2 == 1))
                stage2 = 1.0 if counts != (1, 1) else 0.0
                asym_cost += p_x1 * p_next * stage2

    return {
        "symmetric_value": value_1,
        "exhaustive_value": exhaustive_1,
        "scaled_value": value_10,
        "policies_match": bool(np.array_equal(policy_1.table, policy_10.table)),
        "asymmetric_value": asym_cost,
    }


def check_pomdp_reduction(seed: int, cases=((1, 1), (2, 2), (3, 3), (4, 4), (6, 3), (6, 4))) -> float:
    """Noiseless-channel belief solver vs the mean-field DP, per instance."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for n, T in cases:
        cost = random_exchangeable_cost(rng, n, 2, 2)
        model = random_model(rng, n, 2, 2, horizon=Horizon.finite(T), cost=cost)
        lifted = build_lifted_mdp(model)
        channel = ObservationChannel.noiseless(model.num_states())
        solution = solve_pomdp_finite(model, lifted, channel)
        result = solve_finite_horizon(model, lifted)
        p1 = initial_mean_field_distribution(model)
        mdp_value = float(np.dot(p1, result.value.values[0]))
        worst = max(worst, abs(solution.root_value - mdp_value))
    return worst


def check_belief_consistency(seed: int, num_triples: int) -> float:
    """Marginalizing the updated belief over observations must reproduce the
    one-step prediction, for random (belief, map, channel) triples."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    model = None
    lifted = None
    for case in range(num_triples):
        if case % 50 == 0:  # refresh the model every so often
            n = int(rng.integers(1, 5))
            k = int(rng.integers(2, 4))
            model = random_model(rng, n, k, 2)
            lifted = build_lifted_mdp(model)
        S = lifted.num_states
        G = lifted.num_maps
        raw = rng.random(S) + 1e-3
        pi = Belief(raw / raw.sum())
        g = int(rng.integers(G))
        Y = int(rng.integers(2, 5))
        like = rng.random((Y, S)) + 0.02
        channel = ObservationChannel(like / like.sum(axis=0, keepdims=True))
        kernel = lifted.kernel_at(1)
        pred = belief_prediction(pi, g, kernel)
        p_obs = channel.likelihood @ pred
        mixed = np.zeros(S)
        for y in range(Y):
            if p_obs[y] <= 0.0:
                continue
            post = belief_update(pi, g, y, kernel, channel)
            mixed += p_obs[y] * post.probs
        worst = max(worst, float(np.max(np.abs(mixed - pred))))
    return worst


def check_policy_evaluation(seed: int, num_models: int = 5) -> float:
    """evaluate_policy on the lifted chain vs the joint-chain brute value."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(num_models):
        n = int(rng.integers(1, 4))
        k = int(rng.integers(2, 4))
        num_actions = int(rng.integers(1, 3))
        T = int(rng.integers(1, 4))
        cost = random_exchangeable_cost(rng, n, k, num_actions)
        model = random_model(rng, n, k, num_actions, horizon=Horizon.finite(T), cost=cost)
        lifted = build_lifted_mdp(model)
        S = model.num_states()
        G = model.num_maps()
        policy = Policy(rng.integers(0, G, size=(T, S)), stationary=False)
        _, fast = evaluate_policy(model, lifted, policy)
        slow = brute_value(model, policy)
        worst = max(worst, abs(fast - slow))
    return worst


# ---------------------------------------------------------------------------
# bundled run (CLI `verify`)
# ---------------------------------------------------------------------------


def run_verification(seed: int = 20140901) -> list[VerificationCheck]:
    checks = []

    err, rows = check_kernel_equivalence(seed, num_models=40)
    checks.append(
        VerificationCheck(
            "kernel-oracle-equivalence", err <= 1e-12, f"max |fast - brute| = {err:.3e} over {rows} rows"
        )
    )

    err = check_cost_equivalence(seed + 1, num_cases=30)
    checks.append(
        VerificationCheck("cost-oracle-equivalence", err <= 1e-12, f"max |fast - brute| = {err:.3e}")
    )

    err = check_dp_vs_exhaustive(seed + 2, num_models=2)
    checks.append(
        VerificationCheck("dp-vs-exhaustive", err <= 1e-12, f"max |DP - exhaustive| = {err:.3e}")
    )

    ce = check_counterexample()
    ce_ok = (
        abs(ce["symmetric_value"] - 0.5) <= 1e-12
        and abs(ce["exhaustive_value"] - 0.5) <= 1e-12
        and abs(ce["scaled_value"] - 5.0) <= 1e-12
        and ce["policies_match"]
        and ce["asymmetric_value"] == 0.0
    )
    checks.append(
        VerificationCheck(
            "even-split-counterexample",
            ce_ok,
            f"symmetric {ce['symmetric_value']:.6f}, asymmetric {ce['asymmetric_value']:.6f}, "
            f"x10 {ce['scaled_value']:.6f}",
        )
    )

    err = check_pomdp_reduction(seed + 3, cases=((1, 1), (2, 2), (3, 2)))
    checks.append(
        VerificationCheck("pomdp-noiseless-reduction", err <= 1e-10, f"max |belief - mdp| = {err:.3e}")
    )

    err = check_belief_consistency(seed + 4, num_triples=200)
    checks.append(
        VerificationCheck("belief-update-consistency", err <= 1e-12, f"max defect = {err:.3e}")
    )

    err = check_policy_evaluation(seed + 5, num_models=4)
    checks.append(
        VerificationCheck("policy-evaluation-vs-joint-chain", err <= 1e-10, f"max gap = {err:.3e}")
    )

    return checks
