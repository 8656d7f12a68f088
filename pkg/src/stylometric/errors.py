"""Exception taxonomy.

Every failure the package can signal derives from StylometricError, so
callers (and fuzz tests) can catch one base type. Parser errors additionally
derive from FormatError, one subclass per failure kind.
"""


class StylometricError(Exception):
    """Base class for all errors raised by this package."""


class ValidationError(StylometricError):
    """A domain type invariant was violated (shape, range, negativity)."""


class FormatError(StylometricError):
    """Base class for serialized-stream errors."""


class BadMagicError(FormatError):
    """Stream does not start with the expected magic bytes."""


class UnsupportedVersionError(FormatError):
    """Stream declares a format version this reader does not support."""


class TruncatedStreamError(FormatError):
    """Stream ended before the declared payload was complete."""


class DimensionError(FormatError):
    """Declared dimensions are zero, absurd, or otherwise unusable."""


class NonFiniteDataError(StylometricError):
    """Numeric payload contains NaN or infinity."""


class DuplicateIdError(StylometricError):
    """The same image_id occurred twice where ids must be unique."""


class MixedDescriptorError(StylometricError):
    """Descriptors with differing channel width or provenance were combined."""


class ManifestError(StylometricError):
    """A manifest line could not be parsed; message carries the line number."""


class DimensionMismatchError(StylometricError):
    """Two descriptors of different channel width were compared."""


class SingularCovarianceError(StylometricError):
    """KL/JSD target has a zero-variance channel (singular covariance)."""


class ZeroVarianceError(StylometricError):
    """KL/JSD source has a zero-variance channel (degenerate Gaussian)."""


class MissingLabelError(StylometricError):
    """An indexed descriptor has no (or an incomplete) manifest entry."""


class QueryInIndexError(StylometricError):
    """An evaluation query shares its image_id with an indexed reference."""


class BatchQueryError(StylometricError):
    """A batch query failed; `position` is the offending query's index."""

    def __init__(self, position: int, message: str):
        super().__init__(f"query {position}: {message}")
        self.position = position


class ProvenanceError(StylometricError):
    """Two stores that must share (C, t, idx) provenance do not."""
