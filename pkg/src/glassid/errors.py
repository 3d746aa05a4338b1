"""Exception hierarchy shared by all modules."""


class GlassIdError(Exception):
    """Base class for errors raised by glassid."""


class DomainError(GlassIdError, ValueError):
    """An argument lies outside the operation's domain."""


class DimensionError(GlassIdError, ValueError):
    """Sizes of configurations, couplings or grids do not match."""


class SizeLimitError(GlassIdError, ValueError):
    """The requested exact computation exceeds its size budget."""


class UnsupportedModelError(GlassIdError, ValueError):
    """The operation is undefined for this model (e.g. no Gaussian disorder)."""


class InstabilityError(GlassIdError, ArithmeticError):
    """A ratio estimator's denominator is statistically indistinguishable from zero."""


class SampleSizeError(GlassIdError, ValueError):
    """Too few samples to form an estimate with an error bar."""
