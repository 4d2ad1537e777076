"""Exception types shared across the package."""


class UnimosError(Exception):
    """Base class for all errors raised by this package."""


class DimensionError(UnimosError):
    """Operand shapes do not agree."""


class DegenerateVectorError(UnimosError):
    """A vector required to have nonzero norm is (numerically) zero."""


class BatchTooSmallError(UnimosError):
    """Batch statistics requested for a batch with fewer than two rows."""


class ContractViolation(UnimosError):
    """An input breaks a documented precondition (e.g. non-probability row)."""


class GradientCheckError(UnimosError):
    """Analytic gradients disagree with finite differences beyond tolerance."""


class DivergenceError(UnimosError):
    """Training produced a non-finite or exploding loss."""

    def __init__(self, message: str, step: int):
        super().__init__(f"{message} (step {step})")
        self.step = step


class PseudoLabelError(UnimosError):
    """Pseudo-labels cannot be assigned (e.g. every centroid degenerate)."""


class FileFormatError(UnimosError):
    """Base class for feature/checkpoint container problems."""


class BadMagicError(FileFormatError):
    """File does not start with the expected magic bytes."""


class UnsupportedVersionError(FileFormatError):
    """Container version not understood by this reader."""


class TruncatedFileError(FileFormatError):
    """File ends before the declared payload is complete."""


class LabelRangeError(FileFormatError):
    """A stored label falls outside [0, class_count)."""
