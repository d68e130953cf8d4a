"""Exception hierarchy shared by every module."""


class ShuffleFLError(Exception):
    """Base class for all package errors."""


class ShapeError(ShuffleFLError, ValueError):
    """Operands have incompatible dimensions."""


class DegenerateInputError(ShuffleFLError, ValueError):
    """Input is structurally valid but cannot be processed (empty, zero-norm, ...)."""


class InvariantError(ShuffleFLError, ValueError):
    """A documented data invariant does not hold (non-bijection, asymmetric matrix)."""


class NoLeakableRowError(DegenerateInputError):
    """Every first-layer bias gradient is numerically zero."""


class FormatError(ShuffleFLError, ValueError):
    """A binary file does not follow the expected on-disk layout."""


class ConfigError(ShuffleFLError, ValueError):
    """A simulation configuration violates its invariants."""


class UnsupportedConfigurationError(ShuffleFLError, ValueError):
    """Requested consensus setup cannot tolerate the declared faults."""
