"""Exception hierarchy shared by all antireg modules."""


class AntiRegError(Exception):
    """Base class for every error raised by this package."""


# --- linear algebra -------------------------------------------------------


class NonSymmetricError(AntiRegError, ValueError):
    """Input matrix is not symmetric to the requested tolerance."""


class NoConvergenceError(AntiRegError, RuntimeError):
    """An iterative eigenvalue estimate exhausted its iteration budget."""


class DegenerateWError(AntiRegError, ValueError):
    """The reward weight matrix is identically zero, so no finite bound exists."""


class SingularCapacitorError(AntiRegError, ValueError):
    """The Woodbury capacitance matrix C^-1 + V A^-1 U is singular."""


class UnsafeLambdaError(AntiRegError, ValueError):
    """Lambda lies outside the spectral safety region.

    Attributes
    ----------
    bound : SafetyBound or None
        The violated bound, when it could be computed.
    lam : float
        The offending reward strength.
    """

    def __init__(self, message, bound=None, lam=None):
        super().__init__(message)
        self.bound = bound
        self.lam = lam


# --- solvers --------------------------------------------------------------


class StepTooLargeError(AntiRegError, ValueError):
    """Gradient-descent step size violates eta < 2 / L."""


class MaxItersError(AntiRegError, RuntimeError):
    """Iteration budget exhausted before reaching the requested tolerance."""


class TargetUnreachableError(AntiRegError, ValueError):
    """The requested per-sample DoF exceeds what the clipped safe region allows."""


class NonFiniteLossError(AntiRegError, FloatingPointError):
    """Training produced a non-finite loss or gradient."""


# --- diagnostics / statistics --------------------------------------------


class ZeroBaselineError(AntiRegError, ZeroDivisionError):
    """Baseline output matrix has zero Frobenius norm."""


class DegenerateCurvatureError(AntiRegError, ValueError):
    """Effective curvature mu - lambda * alpha_R is not positive."""


class AllZeroError(AntiRegError, ValueError):
    """All paired differences are zero; the signed-rank test is undefined."""


class MissingBaselineError(AntiRegError, KeyError):
    """Treatment rows exist without a matching lambda0 = 0 baseline row."""

    def __init__(self, message, missing=()):
        super().__init__(message)
        self.missing = tuple(missing)

    def __str__(self):
        return self.args[0]


# --- data ingestion -------------------------------------------------------


class DatasetError(AntiRegError, ValueError):
    """Base class for dataset parsing and sampling problems."""


class EmptyDatasetError(DatasetError):
    """A dataset file contains no data rows."""


class MalformedLineError(DatasetError):
    """A text line could not be parsed as numbers."""

    def __init__(self, message, line_number=None):
        super().__init__(message)
        self.line_number = line_number


class WrongArityError(MalformedLineError):
    """A text line has the wrong number of fields."""


class BadMagicError(DatasetError):
    """IDX header magic number does not match the expected container type."""


class CountMismatchError(DatasetError):
    """IDX image and label files disagree on the number of items."""


class TruncatedError(DatasetError):
    """IDX payload is shorter than its header declares."""


class TooFewSamplesError(DatasetError):
    """A stratified draw would leave a stratum (or the subset) empty."""
