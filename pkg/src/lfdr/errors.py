"""Exception hierarchy.

Every error carries a ``module`` attribute naming the pipeline stage that
raised it, so the command line front end can report where things broke.
"""


class LfdrError(Exception):
    module = "lfdr"


class InvalidInputError(LfdrError, ValueError):
    module = "ingest"


class DegenerateHistogramError(LfdrError, ValueError):
    module = "ingest"


class InvalidConfigError(LfdrError, ValueError):
    module = "config"


class ConditioningError(LfdrError, ArithmeticError):
    module = "density"


class NonConvergenceError(LfdrError, RuntimeError):
    """Iterative fit failed. ``last_iterate`` and ``trace`` hold the state at exit."""

    module = "density"

    def __init__(self, message, last_iterate=None, trace=None):
        super().__init__(message)
        self.last_iterate = last_iterate
        self.trace = list(trace) if trace is not None else []


class NoNullPeakError(LfdrError, ArithmeticError):
    module = "null_estimation"


class DegenerateNullError(LfdrError, ArithmeticError):
    module = "null_estimation"


class NoNonnullMassError(LfdrError, ArithmeticError):
    module = "power"
