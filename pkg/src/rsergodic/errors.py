"""Exception hierarchy.

Every error raised on purpose by the package derives from
:class:`ErgodicityError`.  Infeasibility errors carry the diagnostic object
produced by the failing check so callers can serialize it.
"""


class ErgodicityError(Exception):
    """Base class for all package errors."""


# -- generators -------------------------------------------------------------

class GeneratorError(ErgodicityError, ValueError):
    """A rate matrix violates the Q-matrix invariants.

    ``violations`` lists every violated invariant, not only the first.
    """

    def __init__(self, message, violations=()):
        super().__init__(message)
        self.violations = list(violations)


class NonConservativeError(GeneratorError):
    pass


class NegativeRateError(GeneratorError):
    pass


class ReducibleError(GeneratorError):
    pass


class SingularSystemError(ErgodicityError):
    pass


class NotAbsorbableError(ErgodicityError):
    pass


class DivergentSeriesError(ErgodicityError):
    pass


# -- matrix analysis --------------------------------------------------------

class NotZPatternError(ErgodicityError, ValueError):
    pass


class RouteDisagreementError(ErgodicityError):
    """The minors, eigenvalue and LP routes returned different verdicts."""

    def __init__(self, message, verdicts):
        super().__init__(message)
        self.verdicts = dict(verdicts)


class NotReversibleError(ErgodicityError):
    pass


class NonSimplePeripheralEigenvalueError(ErgodicityError):
    pass


class InfeasibleError(ErgodicityError):
    """A certificate condition does not hold; ``diagnostic`` explains why."""

    def __init__(self, message, diagnostic=None):
        super().__init__(message)
        self.diagnostic = diagnostic


class XiInfeasibleError(InfeasibleError):
    pass


class MeanConditionViolatedError(InfeasibleError):
    pass


class Lambda0NonPositiveError(InfeasibleError):
    pass


class PartitionInfeasibleError(InfeasibleError):
    pass


class HFailedError(InfeasibleError):
    """Assumption (H) fails on the sampled grid for the declared constants."""


# -- partitions -------------------------------------------------------------

class UncertifiedTailError(ErgodicityError):
    pass


class MapNotRefinementError(ErgodicityError, ValueError):
    pass


class UnboundedRatesError(ErgodicityError):
    pass


# -- dynamics ---------------------------------------------------------------

class ModelValidationError(ErgodicityError, ValueError):
    pass


class StepTooCoarseError(ErgodicityError, ValueError):
    pass


class UnsupportedCouplingDimensionError(ErgodicityError):
    pass


class NonPositiveDiffusionError(ErgodicityError, ValueError):
    pass


class CoincidencePointError(ErgodicityError, ValueError):
    pass


class A1FailedError(ErgodicityError):
    pass


class A3UnverifiedError(ErgodicityError):
    pass


# -- transport / fitting ----------------------------------------------------

class InfeasibleMarginalsError(ErgodicityError, ValueError):
    pass


class CurveTooNoisyError(ErgodicityError):
    pass


# -- configuration ----------------------------------------------------------

class ConfigError(ErgodicityError, ValueError):
    pass
