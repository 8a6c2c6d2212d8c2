"""Exception types raised across the package."""


class GlmDeskError(Exception):
    """Base class for all package errors."""


class ShapeError(GlmDeskError, ValueError):
    """Operand dimensions do not agree."""


class FullyMaskedRowError(GlmDeskError, ValueError):
    """A softmax row has no finite (visible) entry."""

    def __init__(self, row: int | None = None):
        msg = "fully masked row" if row is None else f"fully masked row (row {row})"
        super().__init__(msg)
        self.row = row


class BiasPolicyError(GlmDeskError, ValueError):
    """A bias was requested on a projection other than Q, K or V."""


class CacheOverflowError(GlmDeskError):
    """A KV cache append would exceed its capacity."""


class NonFiniteLossError(GlmDeskError, FloatingPointError):
    """Training produced a NaN/Inf loss; the step was not applied."""


class DataError(GlmDeskError, ValueError):
    """Malformed input data (corpus records, vocab or checkpoint files)."""
