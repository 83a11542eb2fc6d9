"""Team-optimal control of symmetric stochastic subsystems coupled through
their mean-field: exact dynamic programming on the mean-field simplex, a
belief-space extension for noisy mean-field observations, brute-force
oracles for validation, and a seeded Monte Carlo simulator."""

from .errors import (
    BudgetError,
    ConfigError,
    MeanFieldError,
    NumericError,
    ObservationInconsistencyError,
    StrategyGapError,
)
from .model import (
    CoordinationMap,
    CostSpec,
    Horizon,
    MeanField,
    ModelSpec,
    class_size,
    enumerate_maps,
    enumerate_mean_fields,
    initial_mean_field_distribution,
    mean_field_of,
    num_mean_fields,
    rank,
    unrank,
)
from .lifting import (
    LiftedKernel,
    LiftedMDP,
    build_cost_tables,
    build_lifted_mdp,
    kl_divergence,
    lift_cost,
    lift_kernel_row,
    smartgrid_cost,
)
from .solver import (
    Policy,
    SolveResult,
    ValueFunction,
    bellman_residual,
    evaluate_policy,
    policy_from_controller_strategy,
    solve_discounted,
    solve_finite_horizon,
    to_controller_strategy,
)
from .pomdp import (
    Belief,
    ObservationChannel,
    POMDPSolution,
    belief_prediction,
    belief_update,
    lift_belief_cost,
    solve_pomdp_finite,
)
from .simulate import KernelValidation, SimulationResult, simulate, truncation_horizon, validate_kernel
from .config import LoadedConfig, dump_normalized_config, load_config, load_model

__version__ = "0.1.0"


def bundled_config(name: str = "smartgrid"):
    """Path to a config file shipped with the package."""
    from importlib.resources import files

    return files("meanfield.data").joinpath(f"{name}.yaml")
