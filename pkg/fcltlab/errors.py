"""Exception and warning types raised across fcltlab."""


class FcltLabError(Exception):
    """Base class for every fcltlab error."""


class ConfigError(FcltLabError, ValueError):
    """Bad run configuration or unparseable input file."""


class ModelError(FcltLabError, ValueError):
    """A rate matrix that cannot serve as an ergodic generator."""


class ZeroRate(ModelError):
    """A supplied birth/death rate is not strictly positive."""


class NotAGenerator(ModelError):
    """Negative off-diagonal rate or a row that does not sum to zero."""


class NotErgodic(ModelError):
    """Rate graph not strongly connected, or more than one invariant law."""


class NotReversible(FcltLabError, ValueError):
    """Operation needs detailed balance and the model lacks it."""


class NotCentered(FcltLabError, ValueError):
    """Vector has a constant component where 1-perp is required."""


class HorizonExceeded(FcltLabError, ValueError):
    """Requested time lies beyond the simulated horizon."""


class ScheduleNotSmallO(FcltLabError, ValueError):
    """A lambda schedule exponent <= 1 is not o(1/n)."""


class SpectralFailure(FcltLabError, RuntimeError):
    """The symmetric eigensolver did not converge."""


class SingularSolve(FcltLabError, RuntimeError):
    """Shifted system (lambda I - Q) could not be solved."""


class ContractViolation(FcltLabError, RuntimeError):
    """A numerical contract failed; `invariant` names it."""

    def __init__(self, invariant: str, value: float, limit: float):
        self.invariant = invariant
        self.value = value
        self.limit = limit
        super().__init__(f"{invariant}: {value:.3e} exceeds {limit:.3e}")


class DegenerateObservable(UserWarning):
    """Centered observable is identically zero, so sigma^2(f) = 0."""
