"""Exception hierarchy.

Every error carries a ``category`` string; the CLI maps categories to exit
codes and prints them on stderr.
"""


class BilevelError(Exception):
    category = "data"


class InputError(BilevelError, ValueError):
    """Bad shapes or non-finite values."""

    category = "data"


class PreconditionError(BilevelError, ValueError):
    category = "data"


class DegenerateDataError(BilevelError, ValueError):
    category = "data"


class RankDeficiencyError(BilevelError, ArithmeticError):
    category = "rank-deficiency"


class ConvergenceError(BilevelError, RuntimeError):
    """Iteration budget exhausted before the stationarity tolerance was met.

    The best iterate and its gradient norm are kept so callers can inspect
    or restart from them.
    """

    category = "convergence"

    def __init__(self, message, x=None, grad_norm=None, alpha=None):
        super().__init__(message)
        self.x = x
        self.grad_norm = grad_norm
        self.alpha = alpha


class ConfigError(BilevelError, ValueError):
    category = "config"

    def __init__(self, message, key=None):
        if key is not None:
            message = f"{key}: {message}"
        super().__init__(message)
        self.key = key
