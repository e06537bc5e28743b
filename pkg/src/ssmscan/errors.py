"""Exception types shared across the package.

Every failure mode the library promises to report gets its own class so that
callers (and the CLI's exit-code mapping) can distinguish them without string
matching.
"""


class SsmscanError(Exception):
    """Base class for all errors raised by this package."""


class ShapeError(SsmscanError, ValueError):
    """Operands have incompatible or unexpected shapes."""


class DomainError(SsmscanError, ValueError):
    """A numeric argument is outside the operation's domain (sign, range,
    finiteness)."""


class SingularMatrixError(SsmscanError, ValueError):
    """A matrix that must be inverted is singular; the message names the
    failing pivot."""


class FormatError(SsmscanError, ValueError):
    """Base class for binary-format parse failures (tensor files, PNM)."""


class BadMagicError(FormatError):
    """Stream does not start with the expected magic bytes."""


class UnsupportedVersionError(FormatError):
    """Recognized container, unknown version or dtype code."""


class TruncatedPayloadError(FormatError):
    """Stream ended before the declared payload was complete."""


class DimensionOverflowError(FormatError):
    """Declared dimensions exceed what this implementation will allocate."""


class FusionError(SsmscanError, ValueError):
    """Token grids with mismatching geometry cannot be fused."""


class ConnectorError(SsmscanError, RuntimeError):
    """A connector sub-operation failed; carries the variant context and
    chains the original error."""


class ConfigError(SsmscanError, ValueError):
    """Invalid run configuration (file grammar or value constraints)."""
