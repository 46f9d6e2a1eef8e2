"""Exception types shared across the package."""


class QasepError(Exception):
    """Base class for all package errors."""


class DenominatorPole(QasepError, ZeroDivisionError):
    """A denominator q-Pochhammer factor vanishes for the requested parameters."""


class NonTerminating(QasepError, ValueError):
    """A basic hypergeometric series has no numerator parameter of the form q^{-l}."""


class InvalidParams(QasepError, ValueError):
    """Parameters violate a documented constraint."""


class WindowTooLarge(QasepError, ValueError):
    """The state space of the requested window is too large to enumerate."""


class DimensionMismatch(QasepError, ValueError):
    """Vector and matrix dimensions disagree."""


class NoConvergence(QasepError, RuntimeError):
    """Quadrature refinement hit its doubling limit above tolerance."""


class PrecisionLoss(NoConvergence):
    """Cancellation in the quadrature sum leaves too few correct digits."""


class NonRealResult(QasepError, RuntimeError):
    """A probability came out with a non-negligible imaginary part."""


class PoleOnGrid(QasepError, ZeroDivisionError):
    """A rational factor of the integrand is singular on the quadrature grid."""


class OrderingViolation(QasepError, ValueError):
    """Positions or thresholds are not ordered as required."""


class ConfigInvalid(QasepError, ValueError):
    """A command-line configuration failed validation."""
