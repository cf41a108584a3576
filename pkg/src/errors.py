"""Exception hierarchy for the mask audit toolkit."""

from pathlib import Path
from typing import Optional


class MaskAuditError(Exception):
    """Base class for every error raised by this package."""


class DimensionMismatch(MaskAuditError):
    """Two rasters that must share a shape do not."""

    def __init__(self, left: tuple[int, int], right: tuple[int, int]) -> None:
        super().__init__(left, right)
        self.left = left
        self.right = right

    def __str__(self) -> str:
        return f"dimension mismatch: {self.left} vs {self.right}"


class BothEmpty(MaskAuditError):
    """IoU requested for two empty masks."""


class EmptyMask(MaskAuditError):
    """Operation requires a non-empty mask."""


class EmptyGroundTruth(MaskAuditError):
    """Ground-truth mask has no foreground pixels."""


class GenerationError(MaskAuditError):
    """A single corrupted sample could not be produced."""


class DegenerateObject(GenerationError):
    """Object too small for single-pixel IoU steps to land inside the target interval."""


class UnreachableTarget(GenerationError):
    """IoU search and fine-tuning could not reach the target interval."""


class OverlapViolation(MaskAuditError):
    """A negative mask shares pixels with the ground truth."""


class UnreadableMask(MaskAuditError):
    """A mask or frame file could not be decoded."""

    def __init__(self, path: Path | str, reason: Optional[str] = None) -> None:
        super().__init__(path, reason)
        self.path = Path(path)
        self.reason = reason

    def __str__(self) -> str:
        message = f"unreadable mask: {self.path}"
        return f"{message} ({self.reason})" if self.reason else message


class UnsupportedDepth(MaskAuditError):
    """Mask image is not an 8-bit single channel raster."""


class UnscoredSample(MaskAuditError):
    """Manifest samples and predictions do not line up."""


class EmptyVideo(MaskAuditError):
    """A video sample contributed no scored frames."""


class RegenerationFailure(MaskAuditError):
    """The external regenerator did not return a usable mask."""


class ManifestError(MaskAuditError):
    """Manifest or instances file is missing or malformed."""
