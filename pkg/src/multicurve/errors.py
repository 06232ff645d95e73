"""Exception types shared across the library.

Every error raised on a documented failure path derives from
:class:`MulticurveError`, so callers (and the CLI) can distinguish numerical
failures from programming errors.
"""


class MulticurveError(Exception):
    """Base class for all library-specific errors."""


class DomainError(MulticurveError):
    """An exponent argument left the admissible set of the driving process."""


class FitError(MulticurveError):
    """A term-structure fitting equation has no admissible solution."""


class OrderingError(MulticurveError):
    """A fitted sequence violates the ordering required by the chosen mode."""


class LayoutError(MulticurveError):
    """Inconsistent factor-layout request."""


class SpreadSignError(MulticurveError):
    """Initial multiplicative spreads must be non-negative for this build."""


class ConsistencyError(MulticurveError):
    """Input curves violate positivity/monotonicity requirements."""


class AlignmentError(MulticurveError):
    """Basis-swap legs do not share start/end dates or grids."""


class IntegrationError(MulticurveError):
    """Numerical quadrature could not reach the requested tolerance."""


class BoundaryError(MulticurveError):
    """No exercise-boundary crossing exists along a fitting slice."""


class BoundsError(MulticurveError):
    """A price lies outside the no-arbitrage bounds of the inversion map."""


class DegenerateError(MulticurveError):
    """A correlation denominator vanished."""


class UnsupportedDriverError(MulticurveError):
    """The requested diagnostic is only derived for diffusion drivers."""


class CalibrationError(MulticurveError):
    """The calibration optimizer could not reach the configured tolerance."""


class ConfigError(MulticurveError):
    """Invalid simulation or run configuration."""


class ParseError(MulticurveError):
    """Malformed input file."""
