"""Exception types shared across the package."""


class DualityLabError(Exception):
    """Base class for every error raised by this package."""


class MalformedTreeError(DualityLabError):
    """Scenario tree structure is invalid (orphans, bad probabilities, ragged times)."""


class PriceError(DualityLabError):
    """Asset prices are missing, nonpositive, or not finite."""


class ClockError(DualityLabError):
    """Clock increments violate the admissible-clock conditions."""


class BudgetError(DualityLabError):
    """A configured size or enumeration budget would be exceeded."""


class InfeasibleMarketError(DualityLabError):
    """No strictly positive martingale density exists: the market has arbitrage."""


class ConvergenceError(DualityLabError):
    """An iterative solver failed to reach its tolerance within the iteration budget."""


class ValueDivergenceError(DualityLabError):
    """The objective diverged; the problem is unbounded."""
