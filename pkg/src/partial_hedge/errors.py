"""Exception hierarchy shared by the solver modules and the CLI."""

from __future__ import annotations


class HedgeError(Exception):
    """Base class for every error raised by this package."""


class ModelError(HedgeError, ValueError):
    """The market model is unusable (malformed, arbitrage, or incomplete)."""


class ArbitrageError(ModelError):
    pass


class IncompleteMarketError(ModelError):
    pass


class DegenerateClaimError(HedgeError, ValueError):
    """The claim has zero price, so cost-normalised weights are undefined."""


class BudgetError(HedgeError, ValueError):
    pass


class KnapsackError(HedgeError, ValueError):
    """A knapsack instance violates the preconditions of the chosen solver."""


class ConfigError(HedgeError, ValueError):
    pass
