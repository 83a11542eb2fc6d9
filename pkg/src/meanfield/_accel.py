"""Hot numeric kernels: numba-compiled with a pure-numpy fallback.

Backend selection: environment variable ``MEANFIELD_NUMBA`` set to ``0``
(or ``false``/``off``) forces the numpy path, ``1`` (``true``/``on``)
requires numba; unset means "use numba when importable". Both backends
implement identical arithmetic step orders, so simulation trajectories and
per-episode cost sums are bit-identical across backends; kernel-table
entries agree to float convolution reordering (~1e-15).

The two hot loops are the binomial-convolution build of the mean-field
transition table for two-state models, and the per-episode simulation of
the n-subsystem system. Everything else in the package is numpy-bound
linear algebra that gains nothing from compilation.
"""

from __future__ import annotations

import math
import os

import numpy as np

try:
    import numba

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - mirror environment always has numba
    numba = None
    HAVE_NUMBA = False


def _select_backend() -> str:
    flag = os.environ.get("MEANFIELD_NUMBA", "").strip().lower()
    if flag in ("0", "false", "off", "no"):
        return "numpy"
    if flag in ("1", "true", "on", "yes"):
        if not HAVE_NUMBA:
            raise ImportError("MEANFIELD_NUMBA=1 but numba is not importable")
        return "numba"
    return "numba" if HAVE_NUMBA else "numpy"


BACKEND = _select_backend()


# ---------------------------------------------------------------------------
# numpy implementations
# ---------------------------------------------------------------------------


def _binom_pmf_numpy(m: int, p: float, lgf: np.ndarray) -> np.ndarray:
    """Binomial(m, p) pmf, log-space for stability. lgf[i] = lgamma(i+1)."""
    if m == 0:
        return np.ones(1)
    if p <= 0.0:
        out = np.zeros(m + 1)
        out[0] = 1.0
        return out
    if p >= 1.0:
        out = np.zeros(m + 1)
        out[m] = 1.0
        return out
    i = np.arange(m + 1)
    lp = math.log(p)
    lq = math.log1p(-p)
    return np.exp(lgf[m] - lgf[i] - lgf[m - i] + i * lp + (m - i) * lq)


def kernel_table_k2_numpy(
    n: int, trans: np.ndarray, maps: np.ndarray, lgf: np.ndarray
) -> np.ndarray:
    """Dense (n+1, G, n+1) mean-field kernel table for k = 2 models.

    Row (z, g) is the pmf of the next state-0 count: the sum of two
    independent binomials, one per source state, convolved exactly.
    """
    G = maps.shape[0]
    out = np.zeros((n + 1, G, n + 1))
    for g in range(G):
        p0 = trans[maps[g, 0], 0, 0]
        p1 = trans[maps[g, 1], 1, 0]
        for m0 in range(n + 1):
            m1 = n - m0
            pmf0 = _binom_pmf_numpy(m0, p0, lgf)
            pmf1 = _binom_pmf_numpy(m1, p1, lgf)
            out[m0, g, :] = np.convolve(pmf0, pmf1)
    return out


def _rank_counts_array(counts: np.ndarray, n: int, k: int, pascal: np.ndarray) -> np.ndarray:
    """Vectorized lexicographic rank of count rows (E, k) -> (E,) int64."""
    E = counts.shape[0]
    r = np.zeros(E, dtype=np.int64)
    rem = np.full(E, n, dtype=np.int64)
    for i in range(k - 1):
        j = k - 1 - i
        ci = counts[:, i]
        r += pascal[rem + j, j] - pascal[rem - ci + j, j]
        rem -= ci
    return r


def simulate_chunk_numpy(
    uniforms: np.ndarray,
    init_cdf: np.ndarray,
    trans_cdf: np.ndarray,
    maps: np.ndarray,
    policy: np.ndarray,
    cost_table: np.ndarray,
    beta: float,
    pascal: np.ndarray,
    k: int,
    out_costs: np.ndarray,
    out_zranks: np.ndarray,
    out_gidx: np.ndarray,
) -> None:
    """Advance a chunk of episodes in lockstep; see the numba twin for the
    per-episode reference semantics (identical comparisons and sum order)."""
    E, H1, n = uniforms.shape
    H = H1 - 1
    u0 = uniforms[:, 0, :]
    states = (u0[:, :, None] >= init_cdf[: k - 1]).sum(axis=2).astype(np.int64)
    counts = np.zeros((E, k), dtype=np.int64)
    for s in range(k):
        counts[:, s] = (states == s).sum(axis=1)
    w = 1.0
    eidx = np.arange(E)
    for t in range(H):
        r = _rank_counts_array(counts, n, k, pascal)
        out_zranks[:, t] = r
        pt = t if policy.shape[0] > 1 else 0
        g = policy[pt, r]
        out_gidx[:, t] = g
        ct = t if cost_table.shape[0] > 1 else 0
        out_costs += w * cost_table[ct, r, g]
        w *= beta
        actions = maps[g[:, None], states]
        cdf_rows = trans_cdf[actions, states]  # (E, n, k)
        u = uniforms[:, t + 1, :]
        states = (u[:, :, None] >= cdf_rows[:, :, : k - 1]).sum(axis=2).astype(np.int64)
        for s in range(k):
            counts[:, s] = (states == s).sum(axis=1)
    out_zranks[:, H] = _rank_counts_array(counts, n, k, pascal)
    del eidx


# ---------------------------------------------------------------------------
# numba implementations
# ---------------------------------------------------------------------------

if HAVE_NUMBA:
    from numba import njit

    @njit(cache=True, nogil=True)
    def _binom_pmf_nb(m, p, lgf, buf):  # pragma: no cover - compiled
        if m == 0:
            buf[0] = 1.0
            return
        for i in range(m + 1):
            buf[i] = 0.0
        if p <= 0.0:
            buf[0] = 1.0
            return
        if p >= 1.0:
            buf[m] = 1.0
            return
        lp = math.log(p)
        lq = math.log1p(-p)
        for i in range(m + 1):
            buf[i] = math.exp(lgf[m] - lgf[i] - lgf[m - i] + i * lp + (m - i) * lq)

    @njit(cache=True, nogil=True)
    def kernel_table_k2_numba(n, trans, maps, lgf):  # pragma: no cover - compiled
        G = maps.shape[0]
        out = np.zeros((n + 1, G, n + 1))
        pmf0 = np.zeros(n + 1)
        pmf1 = np.zeros(n + 1)
        for g in range(G):
            p0 = trans[maps[g, 0], 0, 0]
            p1 = trans[maps[g, 1], 1, 0]
            for m0 in range(n + 1):
                m1 = n - m0
                _binom_pmf_nb(m0, p0, lgf, pmf0)
                _binom_pmf_nb(m1, p1, lgf, pmf1)
                for c in range(n + 1):
                    lo = c - m1 if c > m1 else 0
                    hi = m0 if m0 < c else c
                    acc = 0.0
                    for i in range(lo, hi + 1):
                        acc += pmf0[i] * pmf1[c - i]
                    out[m0, g, c] = acc
        return out

    @njit(cache=True, nogil=True)
    def simulate_chunk_numba(
        uniforms,
        init_cdf,
        trans_cdf,
        maps,
        policy,
        cost_table,
        beta,
        pascal,
        k,
        out_costs,
        out_zranks,
        out_gidx,
    ):  # pragma: no cover - compiled
        E, H1, n = uniforms.shape
        H = H1 - 1
        states = np.zeros(n, dtype=np.int64)
        counts = np.zeros(k, dtype=np.int64)
        for e in range(E):
            for x in range(k):
                counts[x] = 0
            for i in range(n):
                u = uniforms[e, 0, i]
                s = 0
                while s < k - 1 and u >= init_cdf[s]:
                    s += 1
                states[i] = s
                counts[s] += 1
            total = 0.0
            w = 1.0
            for t in range(H):
                r = 0
                rem = n
                for ii in range(k - 1):
                    j = k - 1 - ii
                    ci = counts[ii]
                    r += pascal[rem + j, j] - pascal[rem - ci + j, j]
                    rem -= ci
                out_zranks[e, t] = r
                pt = t if policy.shape[0] > 1 else 0
                g = policy[pt, r]
                out_gidx[e, t] = g
                ct = t if cost_table.shape[0] > 1 else 0
                total += w * cost_table[ct, r, g]
                w *= beta
                for x in range(k):
                    counts[x] = 0
                for i in range(n):
                    x = states[i]
                    a = maps[g, x]
                    u = uniforms[e, t + 1, i]
                    y = 0
                    while y < k - 1 and u >= trans_cdf[a, x, y]:
                        y += 1
                    states[i] = y
                    counts[y] += 1
            r = 0
            rem = n
            for ii in range(k - 1):
                j = k - 1 - ii
                ci = counts[ii]
                r += pascal[rem + j, j] - pascal[rem - ci + j, j]
                rem -= ci
            out_zranks[e, H] = r
            out_costs[e] = total


# ---------------------------------------------------------------------------
# dispatch
# ---------------------------------------------------------------------------

if BACKEND == "numba":
    kernel_table_k2 = kernel_table_k2_numba
    simulate_chunk = simulate_chunk_numba
else:
    kernel_table_k2 = kernel_table_k2_numpy
    simulate_chunk = simulate_chunk_numpy


def log_factorial_table(n: int) -> np.ndarray:
    """lgf[i] = lgamma(i + 1) for i in 0..n."""
    return np.array([math.lgamma(i + 1.0) for i in range(n + 1)])
