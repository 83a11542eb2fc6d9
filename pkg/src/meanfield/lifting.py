"""Lifting the n-subsystem model to a Markov decision process on mean-fields.

Two quantities make the mean-field an information state: the expected
per-step cost given ``(z, map)`` and the transition law of the next
mean-field given ``(z, map)``. Both are computed here exactly:

* cost — exchangeable costs evaluate directly; general costs average over
  the permutation class H(z), by full enumeration when |H(z)| fits a budget
  and by uniform permutation sampling (with reported standard error) above;

* kernel — given z, the subsystems currently in state x transition i.i.d.
  with the row of their prescribed action's matrix, so their landing counts
  are multinomial; the next mean-field is the independent sum over source
  states, computed by exact sequential convolution over the composition
  lattice (fixed state order, no truncation, no renormalization).

Neither computation takes any policy object: the lifted quantities are
strategy-independent by construction.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Iterator

import numpy as np

from . import _accel
from .errors import BudgetError, ConfigError, NumericError
from .model import (
    CoordinationMap,
    CostSpec,
    MeanField,
    ModelSpec,
    class_size,
    compositions,
    maps_matrix,
    rank_counts,
)

__all__ = [
    "kl_divergence",
    "smartgrid_cost",
    "multiset_permutations",
    "lift_cost",
    "lift_kernel_row",
    "LiftedKernel",
    "LiftedMDP",
    "build_lifted_mdp",
]

ROW_SUM_ATOL = 1e-10
DEFAULT_ENUMERATION_BUDGET = 10**6


# ---------------------------------------------------------------------------
# Costs
# ---------------------------------------------------------------------------


def kl_divergence(p: np.ndarray, q: np.ndarray) -> float:
    """D(p || q) in nats, with 0 * log(0/q) := 0. Requires q > 0 wherever used."""
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    mask = p > 0
    if np.any(q[mask] <= 0):
        raise NumericError("KL divergence undefined: reference has a zero where p > 0")
    return float(np.sum(p[mask] * (np.log(p[mask]) - np.log(q[mask]))))


def smartgrid_cost(action_cost, reference) -> CostSpec:
    """Exchangeable tracking cost: mean per-device action cost plus the KL
    divergence of the current mean-field from a reference distribution.

    The reference must be strictly positive so the KL term stays finite for
    every achievable mean-field.
    """
    c = np.asarray(action_cost, dtype=np.float64)
    zeta = np.asarray(reference, dtype=np.float64)
    if np.any(zeta <= 0):
        raise ConfigError("cost.reference: must be strictly positive everywhere")
    if abs(zeta.sum() - 1.0) > 1e-12:
        raise ConfigError(f"cost.reference: sums to {zeta.sum()!r} (must be 1 within 1e-12)")

    def fn(z: MeanField, gamma: CoordinationMap) -> float:
        frac = z.fractions()
        act = float(np.dot(frac, c[np.asarray(gamma.assignment)]))
        return act + kl_divergence(frac, zeta)

    return CostSpec(kind="exchangeable", fn=fn)


def multiset_permutations(counts) -> Iterator[np.ndarray]:
    """All distinct joint states with the given counts, in lexicographic order."""
    x = []
    for state, c in enumerate(counts):
        x.extend([state] * int(c))
    x = np.array(x, dtype=np.int64)
    n = len(x)
    while True:
        yield x.copy()
        i = n - 2
        while i >= 0 and x[i] >= x[i + 1]:
            i -= 1
        if i < 0:
            return
        j = n - 1
        while x[j] <= x[i]:
            j -= 1
        x[i], x[j] = x[j], x[i]
        x[i + 1 :] = x[i + 1 :][::-1]


def lift_cost(
    model: ModelSpec,
    z: MeanField,
    gamma: CoordinationMap,
    t: int = 1,
    *,
    enumeration_budget: int = DEFAULT_ENUMERATION_BUDGET,
    num_samples: int | None = None,
    seed: int = 0,
    return_stderr: bool = False,
):
    """Expected per-step cost given the mean-field and the prescription.

    Exchangeable costs evaluate in O(1); general costs average the joint
    cost over H(z). Above the enumeration budget a uniform sample of
    ``num_samples`` permutations estimates the mean (pass
    ``return_stderr=True`` to also get the standard error); with sampling
    disabled the budget overrun raises :class:`BudgetError`.
    """
    fn = model.cost.at_stage(t)
    if model.cost.kind == "exchangeable":
        value = float(fn(z, gamma))
        if not math.isfinite(value):
            raise NumericError(f"exchangeable cost returned non-finite value at z={z.counts}")
        return (value, 0.0) if return_stderr else value

    assignment = np.asarray(gamma.assignment, dtype=np.int64)
    size = class_size(z)
    if size <= enumeration_budget:
        total = math.fsum(
            float(fn(x, assignment[x])) for x in multiset_permutations(z.counts)
        )
        value = total / size
        return (value, 0.0) if return_stderr else value

    if num_samples is None:
        raise BudgetError(
            f"|H(z)| = {size} exceeds enumeration budget {enumeration_budget} "
            "and permutation sampling is not enabled (pass num_samples)",
            required=size,
            budget=enumeration_budget,
        )
    rng = np.random.default_rng(seed)
    canonical = np.repeat(np.arange(z.k, dtype=np.int64), np.asarray(z.counts, dtype=np.int64))
    draws = np.empty(num_samples)
    for m in range(num_samples):
        x = rng.permutation(canonical)
        draws[m] = float(fn(x, assignment[x]))
    value = float(draws.mean())
    stderr = float(draws.std(ddof=1) / math.sqrt(num_samples)) if num_samples > 1 else math.inf
    return (value, stderr) if return_stderr else value


# ---------------------------------------------------------------------------
# Kernel
# ---------------------------------------------------------------------------


def _multinomial_terms(m: int, probs: np.ndarray) -> list[tuple[tuple[int, ...], float]]:
    """Multinomial(m, probs) pmf as (counts, probability) pairs in lex order.

    Coefficients are exact big integers; zero-probability outcomes are
    omitted (they are exact zeros, not small values).
    """
    k = len(probs)
    out = []
    fact_m = math.factorial(m)
    for row in compositions(m, k):
        p = 1.0
        coeff = fact_m
        skip = False
        for c, pr in zip(row, probs):
            c = int(c)
            if c:
                if pr == 0.0:
                    skip = True
                    break
                p *= pr**c
                coeff //= math.factorial(c)
        if skip:
            continue
        out.append((tuple(int(c) for c in row), float(coeff) * p))
    return out


def lift_kernel_row(
    model: ModelSpec, z: MeanField, gamma: CoordinationMap, t: int = 1
) -> np.ndarray:
    """Exact distribution of the next mean-field given (z, map), as a dense
    vector over mean-field ranks.

    Sequential convolution over source states in fixed order 0..k-1: the
    landing counts of the m_x subsystems in state x are multinomial with the
    row of P(map[x]) at x, and the contributions add independently.
    """
    k = model.k
    trans = model.transition_at(t, z)
    dist: dict[tuple[int, ...], float] = {(0,) * k: 1.0}
    for x in range(k):
        m_x = int(z.counts[x])
        if m_x == 0:
            continue
        row = trans[gamma.assignment[x], x, :]
        terms = _multinomial_terms(m_x, row)
        new: dict[tuple[int, ...], float] = {}
        for base, p in dist.items():
            for delta, q in terms:
                key = tuple(b + d for b, d in zip(base, delta))
                new[key] = new.get(key, 0.0) + p * q
        dist = new

    out = np.zeros(model.num_states())
    for counts, p in dist.items():
        out[rank_counts(counts)] = p
    _check_kernel_row(out, f"kernel row z={z.counts} map={gamma.assignment}")
    return out


def _check_kernel_row(row: np.ndarray, what: str):
    if np.any(row < 0):
        raise NumericError(f"{what}: negative probability")
    s = row.sum()
    if abs(s - 1.0) > ROW_SUM_ATOL:
        raise NumericError(f"{what}: sums to {s!r} (deviation beyond {ROW_SUM_ATOL})")


# ---------------------------------------------------------------------------
# Materialized tables
# ---------------------------------------------------------------------------


class LiftedKernel:
    """Row-sparse P(z' | z, map) for one stage.

    Rows are stored CSR-style in (z-major, map) order. Entries are exact
    convolution outputs; exact zeros are omitted, small probabilities are
    kept, and no row is ever renormalized.
    """

    def __init__(self, indptr, indices, data, num_states: int, num_maps: int):
        self.indptr = np.asarray(indptr, dtype=np.int64)
        self.indices = np.asarray(indices, dtype=np.int64)
        self.data = np.asarray(data, dtype=np.float64)
        self.num_states = num_states
        self.num_maps = num_maps
        if np.any(np.diff(self.indptr) <= 0):
            raise NumericError("kernel has an empty (z, map) row")
        self._dense_by_map: dict[int, np.ndarray] = {}

    @classmethod
    def from_dense(cls, table: np.ndarray) -> "LiftedKernel":
        S, G, S2 = table.shape
        flat = table.reshape(S * G, S2)
        indptr = np.zeros(S * G + 1, dtype=np.int64)
        idx_chunks = []
        data_chunks = []
        for r in range(S * G):
            nz = np.nonzero(flat[r])[0]
            indptr[r + 1] = indptr[r] + nz.size
            idx_chunks.append(nz)
            data_chunks.append(flat[r, nz])
        return cls(
            indptr,
            np.concatenate(idx_chunks),
            np.concatenate(data_chunks),
            S,
            G,
        )

    def row(self, z_rank: int, map_idx: int) -> np.ndarray:
        r = z_rank * self.num_maps + map_idx
        out = np.zeros(self.num_states)
        lo, hi = self.indptr[r], self.indptr[r + 1]
        out[self.indices[lo:hi]] = self.data[lo:hi]
        return out

    def dot(self, v: np.ndarray) -> np.ndarray:
        """E[v(Z') | z, map] for every row, shaped (num_states, num_maps)."""
        seg = self.data * v[self.indices]
        sums = np.add.reduceat(seg, self.indptr[:-1])
        return sums.reshape(self.num_states, self.num_maps)

    def matrix(self, map_idx: int) -> np.ndarray:
        """Dense (S, S) transition matrix for one fixed map."""
        cached = self._dense_by_map.get(map_idx)
        if cached is None:
            S = self.num_states
            cached = np.zeros((S, S))
            for z in range(S):
                r = z * self.num_maps + map_idx
                lo, hi = self.indptr[r], self.indptr[r + 1]
                cached[z, self.indices[lo:hi]] = self.data[lo:hi]
            cached.setflags(write=False)
            self._dense_by_map[map_idx] = cached
        return cached

    def iter_entries(self) -> Iterator[tuple[int, int, int, float]]:
        """(z_rank, map_idx, zprime_rank, probability) triples, row order."""
        for z in range(self.num_states):
            for g in range(self.num_maps):
                r = z * self.num_maps + g
                lo, hi = self.indptr[r], self.indptr[r + 1]
                for pos in range(lo, hi):
                    yield z, g, int(self.indices[pos]), float(self.data[pos])


@dataclass(frozen=True)
class LiftedMDP:
    """Per-stage cost tables and kernels for the coordinator's MDP."""

    model: ModelSpec
    costs: tuple[np.ndarray, ...]  # each (S, G)
    kernels: tuple[LiftedKernel, ...]
    stationary: bool

    def cost_at(self, t: int) -> np.ndarray:
        return self.costs[0] if self.stationary else self.costs[t - 1]

    def kernel_at(self, t: int) -> LiftedKernel:
        return self.kernels[0] if self.stationary else self.kernels[t - 1]

    @property
    def num_states(self) -> int:
        return self.costs[0].shape[0]

    @property
    def num_maps(self) -> int:
        return self.costs[0].shape[1]

    def max_stage_cost(self) -> float:
        return max(float(c.max()) for c in self.costs)


def _stage_kernel(model: ModelSpec, mean_fields: list[MeanField], maps, t: int) -> LiftedKernel:
    S = len(mean_fields)
    G = len(maps)
    n, k = model.n, model.k
    if k == 2 and model.transition_kind in ("static", "staged"):
        trans = model.transition_at(t)
        table = _accel.kernel_table_k2(
            n,
            np.ascontiguousarray(trans),
            np.ascontiguousarray(maps_matrix(k, model.num_actions)),
            _accel.log_factorial_table(n),
        )
        for z in range(S):
            for g in range(G):
                _check_kernel_row(table[z, g], f"kernel row z_rank={z} map={g}")
        return LiftedKernel.from_dense(table)

    table = np.zeros((S, G, S))
    for zi, z in enumerate(mean_fields):
        for gi, gamma in enumerate(maps):
            table[zi, gi] = lift_kernel_row(model, z, gamma, t)
    return LiftedKernel.from_dense(table)


def _stage_cost(model: ModelSpec, mean_fields, maps, t: int) -> np.ndarray:
    S, G = len(mean_fields), len(maps)
    out = np.zeros((S, G))
    for zi, z in enumerate(mean_fields):
        for gi, gamma in enumerate(maps):
            out[zi, gi] = lift_cost(model, z, gamma, t)
    return out


def build_cost_tables(model: ModelSpec) -> np.ndarray:
    """(stages, S, G) lifted cost tables; one stage when the cost is
    time-homogeneous. Used by the simulator, which never needs the kernel."""
    from .model import enumerate_maps, enumerate_mean_fields

    mean_fields = enumerate_mean_fields(model.n, model.k)
    maps = enumerate_maps(model.k, model.num_actions)
    stages = model.horizon.T if model.cost.time_varying else 1
    return np.stack([_stage_cost(model, mean_fields, maps, s + 1) for s in range(stages)])


def build_lifted_mdp(model: ModelSpec, memory_budget_bytes: int = 2**31) -> LiftedMDP:
    """Materialize cost tables and kernels for every stage.

    Contents are deterministic functions of the model: rows are computed in
    fixed (z, map) order and each row's convolution is internally sequential,
    so parallel callers would obtain bit-identical tables.
    """
    from .model import enumerate_maps, enumerate_mean_fields  # local: avoid cycle noise

    S = model.num_states()
    G = model.num_maps()
    stages = 1 if model.time_homogeneous else model.horizon.T
    required = stages * (S * G * S + S * G) * 8
    if required > memory_budget_bytes:
        raise BudgetError(
            f"lifted tables need ~{required} bytes (budget {memory_budget_bytes}); "
            f"|M_n| = {S}, maps = {G}, stages = {stages}",
            required=required,
            budget=memory_budget_bytes,
        )
    mean_fields = enumerate_mean_fields(model.n, model.k)
    maps = enumerate_maps(model.k, model.num_actions)
    costs = []
    kernels = []
    for s in range(stages):
        t = s + 1
        costs.append(_stage_cost(model, mean_fields, maps, t))
        kernels.append(_stage_kernel(model, mean_fields, maps, t))
    return LiftedMDP(
        model=model,
        costs=tuple(costs),
        kernels=tuple(kernels),
        stationary=(stages == 1),
    )
