"""Exception hierarchy shared across the package.

The CLI maps these onto its exit-code contract: config errors exit 2,
budget errors 3, numeric errors 4, verification failures 5.
"""


class MeanFieldError(Exception):
    """Base class for all package errors."""


class ConfigError(MeanFieldError):
    """Invalid model description (schema, stochasticity, domain violations)."""


class StrategyGapError(ConfigError):
    """A strategy does not cover some reachable state."""


class BudgetError(MeanFieldError):
    """An enumeration, memory, or node budget was exceeded."""

    def __init__(self, message: str, required=None, budget=None):
        super().__init__(message)
        self.required = required
        self.budget = budget


class NumericError(MeanFieldError):
    """A numeric invariant failed at runtime (bad row sum, impossible event)."""


class ObservationInconsistencyError(NumericError):
    """Belief update hit a zero normalizer: the observation has probability
    zero under the model, which indicates a modelling error upstream."""
