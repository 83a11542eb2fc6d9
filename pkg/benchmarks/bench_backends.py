#!/usr/bin/env python3
"""Benchmark the numba kernels against their pure-numpy fallbacks.

Times the two hot paths on the bundled 100-device model: building the
mean-field kernel table (binomial convolutions over all (z, map) pairs)
and simulating seeded episodes of the full system.

Run after an editable install:

    python benchmarks/bench_backends.py [--n 100] [--episodes 2000] [--repeat 5]
"""

import argparse
import time

import numpy as np

from meanfield import _accel
from meanfield.config import load_config
from meanfield import bundled_config
from meanfield.lifting import build_lifted_mdp
from meanfield.model import maps_matrix, pascal_table
from meanfield.simulate import episode_uniforms, truncation_horizon
from meanfield.solver import solve_discounted


def _time(fn, repeat):
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--n", type=int, default=100, help="number of subsystems")
    parser.add_argument("--episodes", type=int, default=2000)
    parser.add_argument("--repeat", type=int, default=5)
    args = parser.parse_args()

    loaded = load_config(str(bundled_config()))
    model = loaded.model
    if args.n != model.n:
        import dataclasses

        model = dataclasses.replace(model, n=args.n)
    n, k = model.n, model.k

    trans = np.ascontiguousarray(model.transition_at(1))
    maps = np.ascontiguousarray(maps_matrix(k, model.num_actions))
    lgf = _accel.log_factorial_table(n)

    print(f"model: n={n}, |M_n|={model.num_states()}, maps={model.num_maps()}")
    if not _accel.HAVE_NUMBA:
        print("numba not importable; benchmarking the numpy path only")

    # --- kernel table build -------------------------------------------------
    t_numpy = _time(lambda: _accel.kernel_table_k2_numpy(n, trans, maps, lgf), args.repeat)
    print(f"kernel table  numpy : {t_numpy * 1e3:8.2f} ms")
    if _accel.HAVE_NUMBA:
        _accel.kernel_table_k2_numba(n, trans, maps, lgf)  # compile before timing
        t_numba = _time(lambda: _accel.kernel_table_k2_numba(n, trans, maps, lgf), args.repeat)
        print(f"kernel table  numba : {t_numba * 1e3:8.2f} ms  ({t_numpy / t_numba:5.1f}x)")
        diff = np.max(
            np.abs(
                _accel.kernel_table_k2_numba(n, trans, maps, lgf)
                - _accel.kernel_table_k2_numpy(n, trans, maps, lgf)
            )
        )
        print(f"              max |numba - numpy| = {diff:.2e}")

    # --- episode simulation -------------------------------------------------
    lifted = build_lifted_mdp(model)
    policy = solve_discounted(model, lifted, tol=1e-6).policy
    beta = model.horizon.beta
    H = truncation_horizon(beta, float(lifted.cost_at(1).max()))
    E = args.episodes
    uniforms = np.empty((E, H + 1, n))
    for ep in range(E):
        uniforms[ep] = episode_uniforms(7, ep, H + 1, n)
    init_cdf = np.cumsum(model.init_dist)
    trans_cdf = np.cumsum(trans, axis=2)
    pascal = np.ascontiguousarray(pascal_table(n, k))
    cost = np.stack(lifted.costs)

    def run(fn):
        costs = np.zeros(E)
        zr = np.zeros((E, H + 1), dtype=np.int64)
        gi = np.zeros((E, H), dtype=np.int64)
        fn(uniforms, init_cdf, trans_cdf, maps, policy.table, cost, beta, pascal, k, costs, zr, gi)
        return costs

    t_numpy = _time(lambda: run(_accel.simulate_chunk_numpy), args.repeat)
    print(f"simulate {E:5d} eps numpy : {t_numpy * 1e3:8.2f} ms")
    if _accel.HAVE_NUMBA:
        run(_accel.simulate_chunk_numba)  # compile
        t_numba = _time(lambda: run(_accel.simulate_chunk_numba), args.repeat)
        print(f"simulate {E:5d} eps numba : {t_numba * 1e3:8.2f} ms  ({t_numpy / t_numba:5.1f}x)")
        same = np.array_equal(run(_accel.simulate_chunk_numba), run(_accel.simulate_chunk_numpy))
        print(f"              per-episode costs bit-identical: {same}")


if __name__ == "__main__":
    main()
