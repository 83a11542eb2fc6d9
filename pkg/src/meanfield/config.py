"""Model ingestion from YAML config files.

The surface syntax is YAML; field names are fixed: ``n``, ``k``,
``actions``, ``transition`` (explicit ``matrices`` per action, a smart-grid
``natural``/``forcing`` shorthand, or per-stage ``stages``), ``cost``
(``type`` one of ``exchangeable-smartgrid`` / ``general`` /
``custom-expression``), ``horizon`` (``finite`` with ``T`` or ``discounted``
with ``beta``), ``init_dist``, and an optional observation ``channel``.
Numbers may be written as fraction strings ("1/3") for exactness.

Loading also produces a normalized dict (shorthands expanded, channel
compiled to a likelihood table) that reloads to an identical model.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path

import numpy as np
import yaml

from .errors import ConfigError
from .model import CostSpec, Horizon, ModelSpec, enumerate_mean_fields
from .lifting import smartgrid_cost
from .pomdp import ObservationChannel

__all__ = ["LoadedConfig", "load_config", "load_model", "dump_normalized_config"]


@dataclass(frozen=True)
class LoadedConfig:
    model: ModelSpec
    channel: ObservationChannel | None
    normalized: dict


def _num(value, path: str) -> float:
    if isinstance(value, bool):
        raise ConfigError(f"{path}: expected a number, got a boolean")
    if isinstance(value, (int, float)):
        return float(value)
    if isinstance(value, str):
        try:
            return float(Fraction(value))
        except (ValueError, ZeroDivisionError):
            raise ConfigError(f"{path}: cannot parse number {value!r}") from None
    raise ConfigError(f"{path}: expected a number, got {type(value).__name__}")


def _int(value, path: str) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        raise ConfigError(f"{path}: expected an integer, got {value!r}")
    return value


def _vector(value, path: str) -> list[float]:
    if not isinstance(value, (list, tuple)):
        raise ConfigError(f"{path}: expected a list")
    return [_num(v, f"{path}[{i}]") for i, v in enumerate(value)]


def _matrix(value, path: str) -> list[list[float]]:
    if not isinstance(value, (list, tuple)):
        raise ConfigError(f"{path}: expected a matrix (list of rows)")
    return [_vector(row, f"{path}[{i}]") for i, row in enumerate(value)]


def _require(section: dict, key: str, path: str):
    if not isinstance(section, dict):
        raise ConfigError(f"{path}: expected a mapping")
    if key not in section:
        raise ConfigError(f"{path}.{key}: required field missing")
    return section[key]


# ---------------------------------------------------------------------------
# expressions
# ---------------------------------------------------------------------------

_EXPR_GLOBALS = {
    "__builtins__": {},
    "np": np,
    "abs": abs,
    "min": min,
    "max": max,
    "sum": sum,
    "float": float,
    "int": int,
    "len": len,
    "range": range,
    "log": math.log,
    "exp": math.exp,
    "sqrt": math.sqrt,
}


def _compile_expr(expr: str, path: str):
    if not isinstance(expr, str):
        raise ConfigError(f"{path}: expected an expression string")
    try:
        return compile(expr, f"<config:{path}>", "eval")
    except SyntaxError as exc:
        raise ConfigError(f"{path}: syntax error in expression: {exc}") from None


# ---------------------------------------------------------------------------
# sections
# ---------------------------------------------------------------------------


def _build_transition(section, num_actions: int, k: int, path: str):
    """Returns (matrices-or-stage-list, normalized section)."""
    if isinstance(section, dict) and "stages" in section:
        stages = section["stages"]
        if not isinstance(stages, list) or not stages:
            raise ConfigError(f"{path}.stages: expected a non-empty list")
        built = [
            _build_transition(s, num_actions, k, f"{path}.stages[{i}]")
            for i, s in enumerate(stages)
        ]
        return [b[0] for b in built], {"stages": [b[1] for b in built]}

    if isinstance(section, dict) and "natural" in section:
        natural = np.array(_matrix(_require(section, "natural", path), f"{path}.natural"))
        forcing = section.get("forcing", [])
        if not isinstance(forcing, list):
            raise ConfigError(f"{path}.forcing: expected a list")
        mats = np.zeros((num_actions, k, k))
        mats[0] = natural
        seen = {0}
        for i, entry in enumerate(forcing):
            epath = f"{path}.forcing[{i}]"
            action = _int(_require(entry, "action", epath), f"{epath}.action")
            target = _int(_require(entry, "target", epath), f"{epath}.target")
            eps = _num(_require(entry, "epsilon", epath), f"{epath}.epsilon")
            if not 1 <= action < num_actions:
                raise ConfigError(f"{epath}.action: {action} outside 1..{num_actions - 1}")
            if not 0 <= target < k:
                raise ConfigError(f"{epath}.target: {target} outside 0..{k - 1}")
            if not 0.0 <= eps <= 1.0:
                raise ConfigError(f"{epath}.epsilon: {eps} outside [0, 1]")
            if action in seen:
                raise ConfigError(f"{epath}.action: action {action} configured twice")
            seen.add(action)
            force = np.zeros((k, k))
            force[:, target] = 1.0
            mats[action] = (1.0 - eps) * force + eps * natural
        missing = sorted(set(range(num_actions)) - seen)
        if missing:
            raise ConfigError(f"{path}.forcing: no entry for action(s) {missing}")
        return mats, {"matrices": mats.tolist()}

    if isinstance(section, dict) and "matrices" in section:
        raw = _require(section, "matrices", path)
        if not isinstance(raw, list) or len(raw) != num_actions:
            raise ConfigError(f"{path}.matrices: expected {num_actions} matrices (one per action)")
        mats = np.array([_matrix(m, f"{path}.matrices[{u}]") for u, m in enumerate(raw)])
        return mats, {"matrices": mats.tolist()}

    raise ConfigError(f"{path}: expected 'matrices', 'natural'/'forcing', or 'stages'")


def _build_cost(section, n: int, k: int, num_actions: int, path: str):
    """Returns (CostSpec, normalized section)."""
    if isinstance(section, dict) and "stages" in section:
        stages = section["stages"]
        if not isinstance(stages, list) or not stages:
            raise ConfigError(f"{path}.stages: expected a non-empty list")
        built = [
            _build_cost(s, n, k, num_actions, f"{path}.stages[{i}]")
            for i, s in enumerate(stages)
        ]
        kinds = {spec.kind for spec, _ in built}
        if len(kinds) != 1:
            raise ConfigError(f"{path}.stages: mixed exchangeable/general stage costs")
        fns = tuple(
            spec.fn if spec.fn is not None else spec.stage_fns[0] for spec, _ in built
        )
        return (
            CostSpec(kind=kinds.pop(), fn=None, stage_fns=fns),
            {"stages": [norm for _, norm in built]},
        )

    ctype = _require(section, "type", path)
    if ctype == "exchangeable-smartgrid":
        action_cost = _vector(_require(section, "action_cost", path), f"{path}.action_cost")
        if len(action_cost) != num_actions:
            raise ConfigError(f"{path}.action_cost: expected {num_actions} entries")
        reference = _vector(_require(section, "reference", path), f"{path}.reference")
        if len(reference) != k:
            raise ConfigError(f"{path}.reference: expected {k} entries")
        spec = smartgrid_cost(action_cost, reference)
        return spec, {
            "type": ctype,
            "action_cost": [float(c) for c in action_cost],
            "reference": [float(r) for r in reference],
        }

    if ctype == "custom-expression":
        expr = _require(section, "expr", path)
        code = _compile_expr(expr, f"{path}.expr")

        def fn(z, gamma):
            scope = {
                "z": z.fractions(),
                "counts": np.asarray(z.counts, dtype=np.int64),
                "gamma": np.asarray(gamma.assignment, dtype=np.int64),
                "n": n,
                "k": k,
            }
            return float(eval(code, _EXPR_GLOBALS, scope))

        return CostSpec(kind="exchangeable", fn=fn), {"type": ctype, "expr": expr}

    if ctype == "general":
        expr = _require(section, "expr", path)
        code = _compile_expr(expr, f"{path}.expr")

        def fn(x, u):
            scope = {"x": np.asarray(x), "u": np.asarray(u), "n": n, "k": k}
            return float(eval(code, _EXPR_GLOBALS, scope))

        return CostSpec(kind="general", fn=fn), {"type": ctype, "expr": expr}

    raise ConfigError(
        f"{path}.type: {ctype!r} is not one of "
        "'exchangeable-smartgrid', 'general', 'custom-expression'"
    )


def _build_horizon(section, path: str):
    htype = _require(section, "type", path)
    if htype == "finite":
        T = _int(_require(section, "T", path), f"{path}.T")
        return Horizon.finite(T), {"type": "finite", "T": T}
    if htype == "discounted":
        beta = _num(_require(section, "beta", path), f"{path}.beta")
        return Horizon.discounted(beta), {"type": "discounted", "beta": beta}
    raise ConfigError(f"{path}.type: {htype!r} is not 'finite' or 'discounted'")


def _build_channel(section, model: ModelSpec, path: str):
    ctype = _require(section, "type", path)
    S = model.num_states()
    if ctype == "noiseless":
        channel = ObservationChannel.noiseless(S)
    elif ctype == "noisy-identity":
        acc = _num(_require(section, "accuracy", path), f"{path}.accuracy")
        channel = ObservationChannel.noisy_identity(S, acc)
    elif ctype == "likelihood":
        table = np.array(_matrix(_require(section, "table", path), f"{path}.table"))
        if table.shape[1] != S:
            raise ConfigError(f"{path}.table: expected {S} columns (one per mean-field)")
        channel = ObservationChannel(table)
    elif ctype == "functional":
        expr = _require(section, "expr", path)
        code = _compile_expr(expr, f"{path}.expr")
        pmf = _vector(_require(section, "noise_pmf", path), f"{path}.noise_pmf")
        num_obs = _int(_require(section, "num_observations", path), f"{path}.num_observations")

        def h(z, nu):
            scope = {
                "z": z.fractions(),
                "counts": np.asarray(z.counts, dtype=np.int64),
                "nu": nu,
                "n": model.n,
                "k": model.k,
            }
            return int(eval(code, _EXPR_GLOBALS, scope))

        channel = ObservationChannel.from_function(
            h, pmf, num_obs, enumerate_mean_fields(model.n, model.k)
        )
    else:
        raise ConfigError(
            f"{path}.type: {ctype!r} is not one of "
            "'noiseless', 'noisy-identity', 'likelihood', 'functional'"
        )
    # normalized form is always the compiled likelihood table
    return channel, {"type": "likelihood", "table": channel.likelihood.tolist()}


# ---------------------------------------------------------------------------
# entry points
# ---------------------------------------------------------------------------


def load_config(source) -> LoadedConfig:
    """Load a model (and optional channel) from a YAML file path or dict."""
    if isinstance(source, dict):
        raw = source
    else:
        path = Path(source)
        if not path.exists():
            raise ConfigError(f"config file not found: {path}")
        with open(path) as fh:
            try:
                raw = yaml.safe_load(fh)
            except yaml.YAMLError as exc:
                raise ConfigError(f"{path}: YAML parse error: {exc}") from None
    if not isinstance(raw, dict):
        raise ConfigError("config root must be a mapping")

    n = _int(_require(raw, "n", "config"), "n")
    k = _int(_require(raw, "k", "config"), "k")
    num_actions = _int(_require(raw, "actions", "config"), "actions")
    if n < 1 or k < 1 or num_actions < 1:
        raise ConfigError(f"n, k, actions must be positive, got ({n}, {k}, {num_actions})")

    transition, norm_transition = _build_transition(
        _require(raw, "transition", "config"), num_actions, k, "transition"
    )
    cost, norm_cost = _build_cost(_require(raw, "cost", "config"), n, k, num_actions, "cost")
    horizon, norm_horizon = _build_horizon(_require(raw, "horizon", "config"), "horizon")
    init_dist = _vector(_require(raw, "init_dist", "config"), "init_dist")
    if len(init_dist) != k:
        raise ConfigError(f"init_dist: expected {k} entries, got {len(init_dist)}")

    model = ModelSpec(
        n=n,
        k=k,
        num_actions=num_actions,
        transition=transition,
        cost=cost,
        horizon=horizon,
        init_dist=np.array(init_dist),
    )

    normalized = {
        "n": n,
        "k": k,
        "actions": num_actions,
        "transition": norm_transition,
        "cost": norm_cost,
        "horizon": norm_horizon,
        "init_dist": [float(v) for v in init_dist],
    }

    channel = None
    if "channel" in raw and raw["channel"] is not None:
        channel, norm_channel = _build_channel(raw["channel"], model, "channel")
        normalized["channel"] = norm_channel

    return LoadedConfig(model=model, channel=channel, normalized=normalized)


def load_model(source) -> tuple[ModelSpec, ObservationChannel | None]:
    loaded = load_config(source)
    return loaded.model, loaded.channel


def dump_normalized_config(loaded: LoadedConfig) -> str:
    """YAML text of the normalized config; reloading it yields an identical
    model (matrices expanded, channel compiled, numbers as plain floats)."""
    return yaml.safe_dump(loaded.normalized, sort_keys=False, default_flow_style=None)
