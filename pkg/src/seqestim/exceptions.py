"""Error types raised across the package."""


class SeqEstimError(Exception):
    """Base class for all package errors."""


class DegeneratePrior(SeqEstimError, ValueError):
    """The prior has (numerically) zero variance."""


class WidderOverflow(SeqEstimError, OverflowError):
    """The tilted normalizer exceeds the representable floating range."""


class OutOfSupport(SeqEstimError, ValueError):
    """A posterior-mean value lies outside the closed support interval."""


class NoConvergence(SeqEstimError, RuntimeError):
    """An iterative root search hit its iteration cap."""


class PolicyRange(SeqEstimError, ValueError):
    """A control policy emitted a value outside ``[u_min, 1]``."""


class ClockStall(SeqEstimError, ValueError):
    """The accumulated-intensity clock stopped increasing."""


class HorizonTooShort(SeqEstimError, ValueError):
    """Immediate stopping is not optimal at the terminal time of the solver grid."""


class GridUnstable(SeqEstimError, RuntimeError):
    """The projected implicit solve failed to settle."""


class NoRoot(SeqEstimError, ValueError):
    """The smooth-fit shooting residual has no sign change."""


class NeverStops(SeqEstimError, RuntimeError):
    """A path left the solved range without entering the stopping region."""


class MonotonicityViolation(SeqEstimError, ValueError):
    """A cost function decreases somewhere on its verification grid."""


class AssumptionFailed(SeqEstimError, ValueError):
    """``h(u)/u**2`` has no interior minimizer on ``(0, 1]``."""


class ConfigMismatch(SeqEstimError, ValueError):
    """A stopping solution was built for another prior or cost rate."""


class ConfigError(SeqEstimError, ValueError):
    """Invalid experiment configuration; ``field`` is the dotted path."""

    def __init__(self, field, message):
        self.field = field
        super().__init__(f"{field}: {message}")
