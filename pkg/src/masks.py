"""Binary mask values, morphology and region/boundary metrics."""

import math
from typing import Optional

import numpy as np
from scipy import ndimage

from errors import BothEmpty, DimensionMismatch, EmptyMask
from models import BoundingBox, ElementShape, StructuringElement

_FOUR_NEIGHBOURS = ndimage.generate_binary_structure(2, 1)


class BinaryMask:
    """Immutable 2-D foreground/background raster.

    Equality and hashing are by shape and bits, so masks can be compared
    and used as dictionary keys.
    """

    __slots__ = ("_bits",)

    def __init__(self, bits: np.ndarray) -> None:
        array = np.asarray(bits)
        if array.ndim != 2 or array.shape[0] < 1 or array.shape[1] < 1:
            raise ValueError(f"mask must be a non-empty 2-D raster, got shape {array.shape}")
        array = np.array(array != 0, dtype=bool, copy=True)
        array.setflags(write=False)
        self._bits = array

    @classmethod
    def from_array(cls, array: np.ndarray) -> "BinaryMask":
        """Any nonzero value is foreground."""
        return cls(array)

    @classmethod
    def empty(cls, width: int, height: int) -> "BinaryMask":
        return cls(np.zeros((height, width), dtype=bool))

    @classmethod
    def full(cls, width: int, height: int) -> "BinaryMask":
        return cls(np.ones((height, width), dtype=bool))

    @property
    def bits(self) -> np.ndarray:
        """Read-only row-major view, indexed ``[y, x]``."""
        return self._bits

    @property
    def width(self) -> int:
        return self._bits.shape[1]

    @property
    def height(self) -> int:
        return self._bits.shape[0]

    @property
    def shape(self) -> tuple[int, int]:
        return self._bits.shape

    @property
    def area(self) -> int:
        return int(np.count_nonzero(self._bits))

    @property
    def is_empty(self) -> bool:
        return not self._bits.any()

    def to_array(self) -> np.ndarray:
        """Writable boolean copy."""
        return self._bits.copy()

    def _check_shape(self, other: "BinaryMask") -> None:
        if self.shape != other.shape:
            raise DimensionMismatch(self.shape, other.shape)

    def union(self, other: "BinaryMask") -> "BinaryMask":
        self._check_shape(other)
        return BinaryMask(self._bits | other._bits)

    def intersection(self, other: "BinaryMask") -> "BinaryMask":
        self._check_shape(other)
        return BinaryMask(self._bits & other._bits)

    def difference(self, other: "BinaryMask") -> "BinaryMask":
        self._check_shape(other)
        return BinaryMask(self._bits & ~other._bits)

    __or__ = union
    __and__ = intersection
    __sub__ = difference

    def issubset(self, other: "BinaryMask") -> bool:
        self._check_shape(other)
        return not (self._bits & ~other._bits).any()

    def issuperset(self, other: "BinaryMask") -> bool:
        return other.issubset(self)

    def isdisjoint(self, other: "BinaryMask") -> bool:
        self._check_shape(other)
        return not (self._bits & other._bits).any()

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, BinaryMask):
            return NotImplemented
        return self.shape == other.shape and np.array_equal(self._bits, other._bits)

    def __hash__(self) -> int:
        return hash((self.shape, np.packbits(self._bits).tobytes()))

    def __repr__(self) -> str:
        return f"BinaryMask(width={self.width}, height={self.height}, area={self.area})"


def structuring_element(
    shape: ElementShape | str, half_width: int, half_height: Optional[int] = None
) -> StructuringElement:
    """Build an element; ``half_height`` defaults to ``half_width``."""
    return StructuringElement(
        shape=ElementShape(shape),
        half_width=half_width,
        half_height=half_width if half_height is None else half_height,
    )


def mask_iou(a: BinaryMask, b: BinaryMask) -> float:
    """|a ∩ b| / |a ∪ b| evaluated as one correctly rounded division."""
    if a.shape != b.shape:
        raise DimensionMismatch(a.shape, b.shape)
    inter = int(np.count_nonzero(a.bits & b.bits))
    union = int(np.count_nonzero(a.bits | b.bits))
    if union == 0:
        raise BothEmpty("IoU is undefined for two empty masks")
    return inter / union


def dilate(m: BinaryMask, s: StructuringElement) -> BinaryMask:
    """Dilation; pixels pushed outside the canvas are clipped."""
    if s.is_identity or m.is_empty:
        return m
    return BinaryMask(ndimage.binary_dilation(m.bits, structure=s.footprint()))


def erode(m: BinaryMask, s: StructuringElement) -> BinaryMask:
    """Erosion; off-image positions count as background."""
    if s.is_identity or m.is_empty:
        return m
    return BinaryMask(ndimage.binary_erosion(m.bits, structure=s.footprint(), border_value=0))


def boundary(m: BinaryMask) -> BinaryMask:
    """Foreground pixels with a background or off-image 4-neighbour."""
    if m.is_empty:
        return m
    interior = ndimage.binary_erosion(m.bits, structure=_FOUR_NEIGHBOURS, border_value=0)
    return BinaryMask(m.bits & ~interior)


def bbox(m: BinaryMask) -> BoundingBox:
    """Tight inclusive bounding box of the foreground."""
    ys, xs = np.nonzero(m.bits)
    if xs.size == 0:
        raise EmptyMask("bounding box of an empty mask")
    return BoundingBox(x_min=int(xs.min()), y_min=int(ys.min()), x_max=int(xs.max()), y_max=int(ys.max()))


def bbox_iou(a: BoundingBox, b: BoundingBox) -> float:
    """Area IoU of two inclusive boxes."""
    inter_w = min(a.x_max, b.x_max) - max(a.x_min, b.x_min) + 1
    inter_h = min(a.y_max, b.y_max) - max(a.y_min, b.y_min) + 1
    if inter_w <= 0 or inter_h <= 0:
        return 0.0
    inter = inter_w * inter_h
    return inter / (a.area + b.area - inter)


def default_boundary_tolerance(width: int, height: int) -> int:
    """ceil(0.8% of the image diagonal), at least one pixel."""
    return max(1, math.ceil(0.008 * math.hypot(width, height)))


def jaccard_and_boundary_f(
    pred: BinaryMask, gt: BinaryMask, tolerance: Optional[int] = None
) -> tuple[float, float]:
    """Region Jaccard J and tolerance-matched contour F-measure.

    Two empty masks score (1.0, 1.0).
    """
    if pred.shape != gt.shape:
        raise DimensionMismatch(pred.shape, gt.shape)
    if tolerance is None:
        tolerance = default_boundary_tolerance(gt.width, gt.height)

    if pred.is_empty and gt.is_empty:
        return 1.0, 1.0
    j = mask_iou(pred, gt)

    pred_edge = boundary(pred)
    gt_edge = boundary(gt)
    if pred_edge.is_empty and gt_edge.is_empty:
        return j, 1.0
    if pred_edge.is_empty or gt_edge.is_empty:
        return j, 0.0

    band = structuring_element(ElementShape.RECTANGLE, tolerance)
    precision = (pred_edge & dilate(gt_edge, band)).area / pred_edge.area
    recall = (gt_edge & dilate(pred_edge, band)).area / gt_edge.area
    if precision + recall == 0:
        return j, 0.0
    return j, 2 * precision * recall / (precision + recall)
