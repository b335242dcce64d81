"""Exception types shared across the toolkit."""


class ToolkitError(Exception):
    """Base class for all toolkit-specific errors."""


class ValidationError(ToolkitError, ValueError):
    """Invalid model input (shapes, signs, structural constraints)."""


class RowSumNonzero(ValidationError):
    """A generator row does not sum to zero."""


class NegativeOffDiagonal(ValidationError):
    """A generator off-diagonal entry is negative."""


class Reducible(ValidationError):
    """The generator's positive-rate graph is not strongly connected."""


class SingularSolve(ToolkitError, ArithmeticError):
    """A chain linear system is numerically rank-deficient beyond tolerance."""


class TimeOutOfRange(ToolkitError, ValueError):
    """Query time falls outside a path's recorded horizon."""


class TooFewQueues(ValidationError):
    """Networks need at least two queues (one may be a pure sink)."""


class NegativeRate(ValidationError):
    """A base arrival or service rate is negative."""


class NonzeroSelfService(ValidationError):
    """Self-transfer rates mu[k][k] must vanish."""


class DimensionMismatch(ValidationError):
    """Array shapes are inconsistent with each other."""


class ProbabilityOutOfRange(ValidationError):
    """A routing probability lies outside [0, 1]."""


class NonpositiveAlpha(ValidationError):
    """The chain acceleration exponent must be positive."""


class NegativeEffectiveRate(ValidationError):
    """A hat perturbation drives an effective rate negative at this scale."""


class ExplodedPopulation(ToolkitError, RuntimeError):
    """Aggregate job count exceeded the configured safety cap."""


class GridMismatch(ToolkitError, ValueError):
    """Paths were sampled on different grids."""


class NonPSDDiffusion(ToolkitError, ArithmeticError):
    """A diffusion matrix is not positive semidefinite at some epoch."""


class ParseError(ValidationError):
    """Configuration file cannot be parsed or fails validation."""


class UnknownField(ParseError):
    """Configuration contains a field that is not part of the schema."""


class MissingRequired(ParseError):
    """Configuration lacks a required field."""
