"""Command-line front end.

Subcommands: solve-mdp, solve-pomdp, simulate, evaluate, export-kernel,
verify, figure-data. All artifacts are CSV with a single header line;
re-running a command with identical flags reproduces identical bytes.
Exit codes: 0 success, 2 config problems, 3 budget overruns, 4 numeric
failures, 5 verification failures.
"""

from __future__ import annotations

import argparse
import csv
import sys
import time
from pathlib import Path

import numpy as np

from .config import load_config
from .errors import BudgetError, ConfigError, MeanFieldError, NumericError
from .lifting import build_lifted_mdp
from .model import compositions, maps_matrix, initial_mean_field_distribution
from .pomdp import solve_pomdp_finite
from .simulate import simulate, truncation_horizon
from .solver import Policy, evaluate_policy, solve_discounted, solve_finite_horizon
from .verify import run_verification

EXIT_CONFIG = 2
EXIT_BUDGET = 3
EXIT_NUMERIC = 4
EXIT_VERIFY = 5


def _fmt(value) -> str:
    if isinstance(value, (bool, np.bool_)):
        return "1" if value else "0"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, float):
        return "%.17g" % value
    return str(value)


def _write_csv(path: Path, header, rows):
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(v) for v in row) + "\n")
    return path


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


# ---------------------------------------------------------------------------
# shared artifact writers
# ---------------------------------------------------------------------------


def _policy_value_rows(model, policy: Policy, values: np.ndarray, stages):
    comps = compositions(model.n, model.k)
    maps = maps_matrix(model.k, model.num_actions)
    for t in stages:
        g_row = policy.at_stage(t)
        v_row = values[0] if values.shape[0] == 1 else values[t - 1]
        for z in range(comps.shape[0]):
            g = int(g_row[z])
            yield (
                t,
                z,
                *[int(c) for c in comps[z]],
                g,
                *[int(a) for a in maps[g]],
                float(v_row[z]),
            )


def _policy_value_header(model):
    return (
        ["stage", "z_rank"]
        + [f"count_{x}" for x in range(model.k)]
        + ["map_index"]
        + [f"action_state_{x}" for x in range(model.k)]
        + ["value"]
    )


def _write_policy_value(path: Path, model, policy: Policy, value_table: np.ndarray):
    stages = [1] if policy.stationary else list(range(1, policy.num_stages + 1))
    return _write_csv(
        path, _policy_value_header(model), _policy_value_rows(model, policy, value_table, stages)
    )


def _load_policy_csv(path: Path, model) -> Policy:
    entries = {}
    with open(path) as fh:
        reader = csv.DictReader(fh)
        for row in reader:
            entries[(int(row["stage"]), int(row["z_rank"]))] = int(row["map_index"])
    if not entries:
        raise ConfigError(f"{path}: empty policy file")
    stages = sorted({s for s, _ in entries})
    S = model.num_states()
    table = np.full((len(stages), S), -1, dtype=np.int64)
    for (s, z), g in entries.items():
        table[stages.index(s), z] = g
    if np.any(table < 0):
        raise ConfigError(f"{path}: policy does not cover every (stage, z_rank)")
    stationary = model.horizon.kind == "discounted"
    if stationary and len(stages) != 1:
        raise ConfigError(f"{path}: discounted model needs a single-stage policy")
    return Policy(table, stationary=stationary)


def _resolve_strategy(args, model, lifted):
    if getattr(args, "policy", None):
        return _load_policy_csv(Path(args.policy), model), f"policy:{args.policy}"
    if getattr(args, "constant_map", None) is not None:
        g = int(args.constant_map)
        if not 0 <= g < model.num_maps():
            raise ConfigError(f"--constant-map {g} outside [0, {model.num_maps()})")
        stationary = model.horizon.kind == "discounted"
        stages = 1 if stationary else model.horizon.T
        table = np.full((stages, model.num_states()), g, dtype=np.int64)
        return Policy(table, stationary=stationary), f"constant-map:{g}"
    # default: solve for the optimal strategy
    if model.horizon.kind == "discounted":
        result = solve_discounted(model, lifted, tol=args.tol)
    else:
        result = solve_finite_horizon(model, lifted)
    return result.policy, "optimal"


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def _cmd_solve_mdp(args) -> int:
    loaded = load_config(args.config)
    model = loaded.model
    out = _out_dir(args)
    t0 = time.perf_counter()
    lifted = build_lifted_mdp(model, memory_budget_bytes=args.memory_budget)
    if model.horizon.kind == "discounted":
        result = solve_discounted(model, lifted, tol=args.tol)
        values = result.value.values
        print(
            f"converged in {result.iterations} iterations "
            f"(value error bound {args.tol:g}, {time.perf_counter() - t0:.2f}s)"
        )
    else:
        result = solve_finite_horizon(model, lifted)
        values = result.value.values
        print(f"backward induction over T={model.horizon.T} stages")
    path = _write_policy_value(out / "policy_value.csv", model, result.policy, values)
    p1 = initial_mean_field_distribution(model)
    j = float(np.dot(p1, values[0]))
    print(f"expected optimal cost from the initial mean-field distribution: {j:.12g}")
    print(f"wrote {path}")
    return 0


def _cmd_solve_pomdp(args) -> int:
    loaded = load_config(args.config)
    if loaded.channel is None:
        raise ConfigError("solve-pomdp needs an observation channel in the config")
    model = loaded.model
    out = _out_dir(args)
    lifted = build_lifted_mdp(model, memory_budget_bytes=args.memory_budget)
    solution = solve_pomdp_finite(model, lifted, loaded.channel, node_budget=args.node_budget)
    S = model.num_states()
    header = (
        ["depth", "node_id", "parent_id", "observation"]
        + [f"belief_{z}" for z in range(S)]
        + ["map_index", "value"]
    )
    rows = (
        (
            node.depth,
            node.node_id,
            node.parent_id,
            node.observation,
            *[float(p) for p in node.belief],
            node.map_index,
            float(node.value),
        )
        for node in solution.nodes
    )
    path = _write_csv(out / "strategy_tree.csv", header, rows)
    print(f"root value: {solution.root_value:.12g} ({len(solution.nodes)} tree nodes)")
    print(f"wrote {path}")
    return 0


def _cmd_simulate(args) -> int:
    loaded = load_config(args.config)
    model = loaded.model
    out = _out_dir(args)
    lifted = build_lifted_mdp(model, memory_budget_bytes=args.memory_budget)
    strategy, label = _resolve_strategy(args, model, lifted)
    result = simulate(
        model,
        strategy,
        seed=args.seed,
        horizon_steps=args.horizon,
        num_episodes=args.episodes,
        threads=args.threads,
        cost_tables=np.stack(lifted.costs),
    )
    comps = compositions(model.n, model.k)
    cost_rows = []
    for ep in range(min(args.episodes, args.trajectories)):
        for t in range(result.horizon):
            zr = int(result.z_rank_paths[ep, t])
            g = int(result.map_indices[ep, t])
            stage_cost = float(lifted.cost_at(t + 1)[zr, g])
            cost_rows.append((ep, t + 1, *[int(c) for c in comps[zr]], g, stage_cost))
    traj_header = (
        ["episode", "t"] + [f"count_{x}" for x in range(model.k)] + ["map_index", "stage_cost"]
    )
    _write_csv(out / "trajectories.csv", traj_header, cost_rows)
    _write_csv(
        out / "summary.csv",
        ["policy_id", "mean", "std_error", "num_episodes", "seed"],
        [(label, result.mean, result.stderr, args.episodes, args.seed)],
    )
    print(
        f"{label}: mean {'discounted' if result.discounted else 'total'} cost "
        f"{result.mean:.6f} +/- {result.stderr:.6f} (stderr) over {args.episodes} episodes, "
        f"horizon {result.horizon}"
    )
    print(f"wrote {out / 'trajectories.csv'} and {out / 'summary.csv'}")
    return 0


def _cmd_evaluate(args) -> int:
    loaded = load_config(args.config)
    model = loaded.model
    out = _out_dir(args)
    lifted = build_lifted_mdp(model, memory_budget_bytes=args.memory_budget)
    strategy, label = _resolve_strategy(args, model, lifted)
    vf, j = evaluate_policy(model, lifted, strategy, tol=args.tol)
    path = _write_policy_value(out / "evaluation.csv", model, strategy, vf.values)
    print(f"{label}: exact expected cost J = {j:.12g}")
    print(f"wrote {path}")
    return 0


def _cmd_export_kernel(args) -> int:
    loaded = load_config(args.config)
    model = loaded.model
    out = _out_dir(args)
    lifted = build_lifted_mdp(model, memory_budget_bytes=args.memory_budget)
    header = ["z_rank", "map_index", "zprime_rank", "probability"]
    written = []
    for s, kernel in enumerate(lifted.kernels):
        name = "kernel.csv" if lifted.stationary else f"kernel_stage{s + 1}.csv"
        written.append(_write_csv(out / name, header, kernel.iter_entries()))
    for path in written:
        print(f"wrote {path}")
    return 0


def _cmd_verify(args) -> int:
    checks = run_verification(seed=args.seed if args.seed is not None else 20140901)
    failures = 0
    for check in checks:
        status = "PASS" if check.passed else "FAIL"
        print(f"[{status}] {check.name}: {check.detail}")
        failures += 0 if check.passed else 1
    if failures:
        print(f"{failures} verification check(s) failed")
        return EXIT_VERIFY
    print("all verification checks passed")
    return 0


def _cmd_figure_data(args) -> int:
    loaded = load_config(args.config)
    model = loaded.model
    if model.k != 2:
        raise ConfigError("figure-data needs a two-state model (policy plotted against z(1))")
    if model.horizon.kind != "discounted":
        raise ConfigError("figure-data needs a discounted-horizon model")
    out = _out_dir(args)
    lifted = build_lifted_mdp(model, memory_budget_bytes=args.memory_budget)
    result = solve_discounted(model, lifted, tol=args.tol)
    comps = compositions(model.n, model.k)
    z1 = comps[:, 0] / model.n  # fraction of subsystems in the first state
    strategy_table = maps_matrix(model.k, model.num_actions)[result.policy.at_stage(1)]
    _write_csv(
        out / "panel_a_policy_state0.csv",
        ["z1", "action"],
        ((float(z1[z]), int(strategy_table[z, 0])) for z in range(len(z1))),
    )
    _write_csv(
        out / "panel_b_policy_state1.csv",
        ["z1", "action"],
        ((float(z1[z]), int(strategy_table[z, 1])) for z in range(len(z1))),
    )
    sim = simulate(
        model,
        result.policy,
        seed=args.seed,
        horizon_steps=args.horizon,
        num_episodes=1,
        threads=1,
        cost_tables=np.stack([lifted.cost_at(1)]),
    )
    _write_csv(
        out / "panel_c_sample_path.csv",
        ["t", "z1"],
        (
            (t + 1, float(comps[int(sim.z_rank_paths[0, t]), 0]) / model.n)
            for t in range(args.horizon)
        ),
    )
    _write_csv(
        out / "panel_d_value.csv",
        ["z1", "value"],
        ((float(z1[z]), float(result.value.at_stage(1)[z])) for z in range(len(z1))),
    )
    print(f"wrote 4 panels to {out}")
    return 0


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------


def _add_common(p, *, config=True, seed_required=False, seed=True):
    if config:
        p.add_argument("--config", required=True, help="model config file (YAML)")
    p.add_argument("--out", default="out", help="output directory (default: ./out)")
    if seed:
        p.add_argument(
            "--seed", type=int, required=seed_required, help="64-bit seed for all randomness"
        )
    p.add_argument("--tol", type=float, default=1e-8, help="value-error tolerance (default 1e-8)")
    p.add_argument("--threads", type=int, default=1, help="worker parallelism cap")
    p.add_argument(
        "--memory-budget",
        type=int,
        default=2**31,
        help="byte budget for lifted tables (default 2 GiB)",
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="meanfield",
        description="Team-optimal control of symmetric subsystems via mean-field dynamic programming.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("solve-mdp", help="solve the mean-field MDP and export policy/value")
    _add_common(p)
    p.set_defaults(func=_cmd_solve_mdp)

    p = sub.add_parser("solve-pomdp", help="solve the noisy-observation problem on the belief tree")
    _add_common(p)
    p.add_argument("--node-budget", type=int, default=200_000, help="belief evaluation cap")
    p.set_defaults(func=_cmd_solve_pomdp)

    p = sub.add_parser("simulate", help="Monte Carlo rollout of a strategy on the full system")
    _add_common(p, seed_required=True)
    p.add_argument("--episodes", type=int, default=10_000)
    p.add_argument("--horizon", type=int, default=None, help="steps per episode")
    p.add_argument("--policy", help="policy CSV exported by solve-mdp/evaluate")
    p.add_argument("--constant-map", type=int, default=None, help="play one map index everywhere")
    p.add_argument(
        "--trajectories", type=int, default=10, help="episodes written to trajectories.csv"
    )
    p.set_defaults(func=_cmd_simulate)

    p = sub.add_parser("evaluate", help="exact expected cost of a strategy on the lifted chain")
    _add_common(p)
    p.add_argument("--policy", help="policy CSV exported by solve-mdp")
    p.add_argument("--constant-map", type=int, default=None)
    p.set_defaults(func=_cmd_evaluate)

    p = sub.add_parser("export-kernel", help="dump the lifted transition kernel as CSV triples")
    _add_common(p)
    p.set_defaults(func=_cmd_export_kernel)

    p = sub.add_parser("verify", help="run the oracle-equivalence suite")
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=_cmd_verify)

    p = sub.add_parser("figure-data", help="export policy/value/sample-path panels vs z(1)")
    _add_common(p, seed_required=True)
    p.add_argument("--horizon", type=int, default=100, help="sample-path length (default 100)")
    p.set_defaults(func=_cmd_figure_data)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except BudgetError as exc:
        print(f"budget exceeded: {exc}", file=sys.stderr)
        return EXIT_BUDGET
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except MeanFieldError as exc:  # any other package error counts as numeric
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
