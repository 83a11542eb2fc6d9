"""Problem data model and combinatorial primitives.

The controlled object is a population of ``n`` exchangeable subsystems, each
with a local state in ``{0..k-1}``. The population-level state is the
mean-field ``z``: the empirical distribution of local states, stored here as
an exact integer count vector summing to ``n``. The set of achievable
mean-fields (compositions of ``n`` into ``k`` nonnegative parts) is
enumerated in lexicographic order and indexed densely by ``rank``/``unrank``;
every table in the solver layers is indexed by that rank.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable, Sequence

import numpy as np

from .errors import ConfigError

__all__ = [
    "MeanField",
    "CoordinationMap",
    "CostSpec",
    "Horizon",
    "ModelSpec",
    "enumerate_mean_fields",
    "compositions",
    "num_mean_fields",
    "rank",
    "unrank",
    "rank_counts",
    "mean_field_of",
    "class_size",
    "log_class_size",
    "enumerate_maps",
    "maps_matrix",
    "map_index",
    "pascal_table",
    "initial_mean_field_distribution",
]

ATOL_STOCHASTIC = 1e-12


# ---------------------------------------------------------------------------
# Mean-fields
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class MeanField:
    """Empirical distribution of the n subsystems, as exact integer counts.

    ``counts[x]`` is the number of subsystems currently in local state ``x``.
    The fraction view ``z(x) = counts[x]/n`` is derived, never stored.
    """

    counts: tuple[int, ...]

    def __post_init__(self):
        if any(c < 0 for c in self.counts):
            raise ValueError(f"negative count in mean-field {self.counts}")

    @property
    def n(self) -> int:
        return sum(self.counts)

    @property
    def k(self) -> int:
        return len(self.counts)

    def fractions(self) -> np.ndarray:
        return np.asarray(self.counts, dtype=np.float64) / self.n


def _compositions_lex(n: int, k: int):
    # All k-tuples of nonnegative ints summing to n, lexicographically.
    if k == 1:
        yield (n,)
        return
    for first in range(n + 1):
        for rest in _compositions_lex(n - first, k - 1):
            yield (first,) + rest


@lru_cache(maxsize=64)
def compositions(n: int, k: int) -> np.ndarray:
    """Dense (|M_n|, k) int64 array of all count vectors, in lex order."""
    if n < 1 or k < 1:
        raise ValueError(f"need n >= 1 and k >= 1, got n={n}, k={k}")
    arr = np.array(list(_compositions_lex(n, k)), dtype=np.int64)
    arr.setflags(write=False)
    return arr


def enumerate_mean_fields(n: int, k: int) -> list[MeanField]:
    """All achievable mean-fields for n subsystems over k local states."""
    return [MeanField(tuple(int(c) for c in row)) for row in compositions(n, k)]


def num_mean_fields(n: int, k: int) -> int:
    """|M_n| = C(n+k-1, k-1), the stars-and-bars count."""
    return math.comb(n + k - 1, k - 1)


@lru_cache(maxsize=64)
def pascal_table(n: int, k: int) -> np.ndarray:
    """Binomial table C[a, b] for a <= n+k, b <= k, exact int64.

    Used by the O(k) rank formula and by the compiled simulation kernels.
    """
    rows = n + k + 1
    cols = k + 1
    table = np.zeros((rows, cols), dtype=np.int64)
    for a in range(rows):
        table[a, 0] = 1
        for b in range(1, min(a, cols - 1) + 1):
            table[a, b] = math.comb(a, b)
    table.setflags(write=False)
    return table


def rank_counts(counts: Sequence[int], pascal: np.ndarray | None = None) -> int:
    """Lexicographic rank of a count vector among compositions of its sum.

    Position i contributes the number of compositions whose prefix is smaller:
    sum_{v < c_i} C(rem - v + j - 1, j - 1) with j remaining parts, which
    telescopes to C(rem + j, j) - C(rem - c_i + j, j).
    """
    k = len(counts)
    n = int(sum(counts))
    if pascal is None:
        pascal = pascal_table(n, k)
    r = 0
    rem = n
    for i in range(k - 1):
        j = k - 1 - i
        ci = int(counts[i])
        r += pascal[rem + j, j] - pascal[rem - ci + j, j]
        rem -= ci
    return int(r)


def rank(z: MeanField) -> int:
    """Dense index of ``z`` consistent with ``enumerate_mean_fields`` order."""
    return rank_counts(z.counts)


def unrank(i: int, n: int, k: int) -> MeanField:
    """Inverse of :func:`rank` over the compositions of n into k parts."""
    total = num_mean_fields(n, k)
    if not 0 <= i < total:
        raise IndexError(f"rank {i} out of range for |M_n| = {total}")
    pascal = pascal_table(n, k)
    counts = []
    rem = n
    r = i
    for pos in range(k - 1):
        j = k - 1 - pos
        ci = 0
        # advance ci while all compositions with this prefix rank below r
        while True:
            block = pascal[rem - ci + j - 1, j - 1]  # compositions of rem-ci into j parts
            if r < block:
                break
            r -= block
            ci += 1
        counts.append(ci)
        rem -= ci
    counts.append(rem)
    return MeanField(tuple(counts))


def mean_field_of(joint_state: Sequence[int], k: int) -> MeanField:
    """Count vector of a joint state; invariant to permuting the subsystems."""
    counts = [0] * k
    for x in joint_state:
        xi = int(x)
        if not 0 <= xi < k:
            raise ValueError(f"local state {xi} outside range [0, {k})")
        counts[xi] += 1
    return MeanField(tuple(counts))


def class_size(z: MeanField) -> int:
    """|H(z)|: number of joint states with empirical counts ``z``.

    Exact big-integer multinomial coefficient n! / prod_x counts[x]!.
    """
    size = math.factorial(z.n)
    for c in z.counts:
        size //= math.factorial(c)
    return size


def log_class_size(counts: Sequence[int]) -> float:
    """log |H(z)| in floating point, safe for large n."""
    n = int(sum(counts))
    out = math.lgamma(n + 1.0)
    for c in counts:
        out -= math.lgamma(int(c) + 1.0)
    return out


# ---------------------------------------------------------------------------
# Coordination maps
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CoordinationMap:
    """A prescription assigning one action to every local state.

    ``assignment[x]`` is the action taken by every subsystem whose local
    state is ``x``. Maps are indexed canonically by the base-``num_actions``
    encoding of the assignment vector (assignment[0] is the leading digit).
    """

    assignment: tuple[int, ...]
    num_actions: int

    def __post_init__(self):
        for x, u in enumerate(self.assignment):
            if not 0 <= u < self.num_actions:
                raise ValueError(f"action {u} for state {x} outside range [0, {self.num_actions})")

    @property
    def index(self) -> int:
        return map_index(self.assignment, self.num_actions)


def map_index(assignment: Sequence[int], num_actions: int) -> int:
    idx = 0
    for u in assignment:
        idx = idx * num_actions + int(u)
    return idx


@lru_cache(maxsize=64)
def maps_matrix(k: int, num_actions: int) -> np.ndarray:
    """(num_actions**k, k) int64 table; row g is the assignment of map g."""
    g = num_actions**k
    arr = np.zeros((g, k), dtype=np.int64)
    for idx in range(g):
        v = idx
        for x in range(k - 1, -1, -1):
            arr[idx, x] = v % num_actions
            v //= num_actions
    arr.setflags(write=False)
    return arr


def enumerate_maps(k: int, num_actions: int) -> list[CoordinationMap]:
    return [
        CoordinationMap(tuple(int(u) for u in row), num_actions)
        for row in maps_matrix(k, num_actions)
    ]


# ---------------------------------------------------------------------------
# Cost specification
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CostSpec:
    """Per-step cost, either exchangeable or general.

    Exchangeable costs are declared to depend on the joint state and actions
    only through ``(z, map)`` and are lifted exactly at O(1) per pair; general
    costs are arbitrary functions of the joint state/action vectors and are
    lifted by averaging over the permutation class H(z).

    ``fn`` signatures:
      exchangeable: fn(z: MeanField, gamma: CoordinationMap) -> float
      general:      fn(joint_state: int array (n,), joint_action: int array (n,)) -> float

    ``stage_fns``, when given, overrides ``fn`` with one callable per stage
    (finite horizon only).
    """

    kind: str  # "exchangeable" | "general"
    fn: Callable | None = None
    stage_fns: tuple[Callable, ...] | None = None

    def __post_init__(self):
        if self.kind not in ("exchangeable", "general"):
            raise ConfigError(f"cost kind must be 'exchangeable' or 'general', got {self.kind!r}")
        if self.fn is None and not self.stage_fns:
            raise ConfigError("cost spec needs fn or stage_fns")

    @property
    def time_varying(self) -> bool:
        return self.stage_fns is not None

    def at_stage(self, t: int) -> Callable:
        """Cost callable for 1-based stage t."""
        if self.stage_fns is not None:
            if not 1 <= t <= len(self.stage_fns):
                raise IndexError(f"stage {t} outside 1..{len(self.stage_fns)}")
            return self.stage_fns[t - 1]
        return self.fn


@dataclass(frozen=True)
class Horizon:
    """Finite horizon T, or infinite horizon with discount beta in (0,1)."""

    kind: str  # "finite" | "discounted"
    T: int | None = None
    beta: float | None = None

    def __post_init__(self):
        if self.kind == "finite":
            if self.T is None or self.T < 1:
                raise ConfigError(f"finite horizon needs T >= 1, got {self.T}")
        elif self.kind == "discounted":
            if self.beta is None or not 0.0 < self.beta < 1.0:
                raise ConfigError(f"discounted horizon needs 0 < beta < 1, got {self.beta}")
        else:
            raise ConfigError(f"horizon kind must be 'finite' or 'discounted', got {self.kind!r}")

    @classmethod
    def finite(cls, T: int) -> "Horizon":
        return cls("finite", T=T)

    @classmethod
    def discounted(cls, beta: float) -> "Horizon":
        return cls("discounted", beta=beta)


# ---------------------------------------------------------------------------
# Model specification
# ---------------------------------------------------------------------------


def _check_stochastic(mat: np.ndarray, what: str):
    if mat.ndim != 2:
        raise ConfigError(f"{what}: expected a 2-d matrix, got shape {mat.shape}")
    if np.any(mat < 0):
        bad = np.argwhere(mat < 0)[0]
        raise ConfigError(f"{what}[{bad[0]}]: negative entry at column {bad[1]}")
    sums = mat.sum(axis=1)
    bad_rows = np.nonzero(np.abs(sums - 1.0) > ATOL_STOCHASTIC)[0]
    if bad_rows.size:
        r = int(bad_rows[0])
        raise ConfigError(f"{what}[{r}]: row sums to {sums[r]!r} (must be 1 within {ATOL_STOCHASTIC})")


@dataclass(frozen=True)
class ModelSpec:
    """Complete description of one mean-field control problem.

    ``transition`` accepts three forms:
      * a (num_actions, k, k) array of row-stochastic matrices (per action);
      * a list of such arrays, one per stage (finite horizon only);
      * a callable ``(z_fractions: array (k,)) -> (num_actions, k, k)`` for
        mean-field-dependent dynamics (validated per evaluation).

    Per-subsystem process noise is absorbed into the per-action stochastic
    matrices; the brute-force oracle reconstructs an explicit noise alphabet
    from the rows when it needs one.
    """

    n: int
    k: int
    num_actions: int
    transition: object
    cost: CostSpec
    horizon: Horizon
    init_dist: np.ndarray
    _transition_kind: str = field(init=False, default="static")

    def __post_init__(self):
        if self.n < 1 or self.k < 1 or self.num_actions < 1:
            raise ConfigError(
                f"n, k, num_actions must be positive, got ({self.n}, {self.k}, {self.num_actions})"
            )
        init = np.asarray(self.init_dist, dtype=np.float64)
        if init.shape != (self.k,):
            raise ConfigError(f"init_dist must have length k={self.k}, got shape {init.shape}")
        if np.any(init < 0) or abs(init.sum() - 1.0) > ATOL_STOCHASTIC:
            raise ConfigError(f"init_dist must be a probability vector, sums to {init.sum()!r}")
        object.__setattr__(self, "init_dist", init)

        tr = self.transition
        if callable(tr):
            object.__setattr__(self, "_transition_kind", "mean_field")
            # spot-validate at a representative mean-field
            probe = np.full(self.k, 1.0 / self.k)
            self._validate_matrix_block(np.asarray(tr(probe), dtype=np.float64), "transition(z)")
        elif isinstance(tr, (list, tuple)):
            if self.horizon.kind != "finite":
                raise ConfigError("time-varying transitions require a finite horizon")
            if len(tr) != self.horizon.T:
                raise ConfigError(
                    f"transition stage list has length {len(tr)}, horizon T={self.horizon.T}"
                )
            stages = tuple(np.asarray(m, dtype=np.float64) for m in tr)
            for t, m in enumerate(stages):
                self._validate_matrix_block(m, f"transition[stage {t + 1}]")
            object.__setattr__(self, "transition", stages)
            object.__setattr__(self, "_transition_kind", "staged")
        else:
            mat = np.asarray(tr, dtype=np.float64)
            self._validate_matrix_block(mat, "transition")
            object.__setattr__(self, "transition", mat)
            object.__setattr__(self, "_transition_kind", "static")

        if self.cost.time_varying:
            if self.horizon.kind != "finite":
                raise ConfigError("stage-dependent costs require a finite horizon")
            if len(self.cost.stage_fns) != self.horizon.T:
                raise ConfigError(
                    f"cost stage list has length {len(self.cost.stage_fns)}, horizon T={self.horizon.T}"
                )

    def _validate_matrix_block(self, block: np.ndarray, what: str):
        expected = (self.num_actions, self.k, self.k)
        if block.shape != expected:
            raise ConfigError(f"{what}: expected shape {expected}, got {block.shape}")
        for u in range(self.num_actions):
            _check_stochastic(block[u], f"{what}[action {u}]")

    # -- accessors ---------------------------------------------------------

    @property
    def transition_kind(self) -> str:
        return self._transition_kind

    @property
    def time_homogeneous(self) -> bool:
        return self._transition_kind != "staged" and not self.cost.time_varying

    def transition_at(self, t: int, z: MeanField | None = None) -> np.ndarray:
        """(num_actions, k, k) matrices for 1-based stage t at mean-field z."""
        if self._transition_kind == "static":
            return self.transition
        if self._transition_kind == "staged":
            return self.transition[t - 1]
        if z is None:
            raise ValueError("mean-field-dependent transitions need z")
        block = np.asarray(self.transition(z.fractions()), dtype=np.float64)
        self._validate_matrix_block(block, "transition(z)")
        return block

    def num_states(self) -> int:
        return num_mean_fields(self.n, self.k)

    def num_maps(self) -> int:
        return self.num_actions**self.k


def initial_mean_field_distribution(model: ModelSpec) -> np.ndarray:
    """P(Z_1 = z) over ranks: the multinomial induced by iid initial states.

    Exact big-int multinomial coefficients for n <= 20, log-space above.
    """
    comps = compositions(model.n, model.k)
    p = model.init_dist
    out = np.zeros(comps.shape[0])
    use_logs = model.n > 20
    logp = np.full(model.k, -np.inf)
    np.log(p, out=logp, where=p > 0)
    for i, row in enumerate(comps):
        if np.any((p == 0) & (row > 0)):
            continue
        if use_logs:
            out[i] = math.exp(log_class_size(row) + float(np.dot(row, logp)))
        else:
            size = class_size(MeanField(tuple(int(c) for c in row)))
            out[i] = float(size) * float(np.prod(p ** row))
    return out
