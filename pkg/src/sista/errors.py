"""Exception types shared across the package."""


class InvalidProblemError(ValueError):
    """Problem data violates a structural requirement (margins, support, mass)."""


class DimensionMismatchError(ValueError):
    """Array shapes are inconsistent with the problem dimensions."""


class ExponentOverflowError(FloatingPointError):
    """An exponential exceeds the double-precision range even after stabilization."""


class BundleFormatError(ValueError):
    """A problem bundle or matrix file cannot be parsed."""


class BootstrapError(RuntimeError):
    """Too many bootstrap replicates failed to produce an estimate."""
