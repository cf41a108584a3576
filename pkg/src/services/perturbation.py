"""Generators for the six candidate-mask types."""

import hashlib
import logging
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy import ndimage

from errors import (
    DegenerateObject,
    DimensionMismatch,
    EmptyGroundTruth,
    GenerationError,
    OverlapViolation,
    UnreachableTarget,
)
from masks import BinaryMask, bbox, bbox_iou, mask_iou, structuring_element, erode
from models import (
    GEOMETRIC_TYPES,
    Action,
    BuildConfig,
    Difficulty,
    ElementShape,
    GenerationFailure,
    IoUTarget,
    MaskType,
    PerturbationSpec,
    QualityLabel,
)

logger = logging.getLogger(__name__)

# Fine-tuning may flip at most this many pixels per unit of gt area.
FLIP_CAP_FACTOR = 4

_UNIT_ELEMENT = structuring_element(ElementShape.RECTANGLE, 1)


def derive_seed(global_seed: int, *parts: object) -> int:
    """Stable 64-bit seed from a global seed and naming parts."""
    text = ":".join(str(part) for part in (global_seed, *parts))
    return int.from_bytes(hashlib.sha256(text.encode("utf-8")).digest()[:8], "big")


def slot_name(kind: MaskType, difficulty: Optional[Difficulty] = None, negative_id: Optional[str] = None) -> str:
    """Stable slot name, e.g. ``cutout-hard`` or ``merge-neg3``."""
    if negative_id is not None:
        return f"{kind.value}-{negative_id}"
    if difficulty is not None and difficulty is not Difficulty.NA:
        return f"{kind.value}-{difficulty.value}"
    return kind.value


def derive_action(mask_type: MaskType, iou: float, config: Optional[BuildConfig] = None) -> Action:
    """The recommended action implied by a mask type and its IoU."""
    config = config or BuildConfig()
    match mask_type:
        case MaskType.PERFECT:
            return Action.ACCEPT
        case MaskType.FULL_NEG:
            return Action.REJECT
        case MaskType.MERGE:
            if iou >= config.merge_minor_threshold:
                return Action.MINOR_REVISION
            if iou >= config.merge_major_threshold:
                return Action.MAJOR_REVISION
            return Action.REJECT
        case _:
            return Action.MINOR_REVISION if iou >= config.hard_range.lo else Action.MAJOR_REVISION


def merge_difficulty(action: Action) -> Difficulty:
    return {
        Action.MINOR_REVISION: Difficulty.HARD,
        Action.MAJOR_REVISION: Difficulty.MEDIUM,
    }.get(action, Difficulty.EASY)


@dataclass(frozen=True)
class GeneratedSample:
    """A candidate mask with its label and replay spec."""
    mask: BinaryMask
    label: QualityLabel
    spec: PerturbationSpec


@dataclass
class InstanceSamples:
    """Output of generating one instance on one frame."""
    samples: list[GeneratedSample] = field(default_factory=list)
    failures: list[GenerationFailure] = field(default_factory=list)

    @property
    def partial(self) -> bool:
        return bool(self.failures)


class _GrowthField:
    """Distance field whose thresholds reproduce morphology with square elements.

    ``candidate(r)`` equals ``dilate``/``erode`` of the ground truth (or the
    cutout hole grown around a seed) with a rectangle or ellipse element of
    half size ``r``: a square of half size r is chessboard distance <= r and
    the half-pixel-inflated disk is Euclidean distance <= r + 1/2.
    """

    def __init__(self, distances: np.ndarray, shape: ElementShape, inside: bool) -> None:
        self._distances = distances
        self._shape = shape
        self._inside = inside

    def _radius(self, r: int) -> float:
        return r + 0.5 if self._shape is ElementShape.ELLIPSE else float(r)

    def candidate(self, r: int) -> np.ndarray:
        if self._inside:
            return self._distances > self._radius(r)
        return self._distances <= self._radius(r)


def _distance(foreground: np.ndarray, shape: ElementShape) -> np.ndarray:
    """Distance from every pixel to the nearest zero of ``foreground``."""
    if shape is ElementShape.ELLIPSE:
        return ndimage.distance_transform_edt(foreground)
    return ndimage.distance_transform_cdt(foreground, metric="chessboard").astype(float)


class MaskPerturber:
    """Builds labeled candidate masks from a ground-truth mask."""

    def __init__(self, config: Optional[BuildConfig] = None) -> None:
        self.config = config or BuildConfig()

    def _label(self, kind: MaskType, iou: float, difficulty: Difficulty) -> QualityLabel:
        return QualityLabel(
            iou=iou,
            mask_type=kind,
            action=derive_action(kind, iou, self.config),
            difficulty=difficulty,
        )

    def gen_perfect(self, gt: BinaryMask) -> GeneratedSample:
        """The ground truth itself, labeled (1.0, perfect, accept)."""
        if gt.is_empty:
            raise EmptyGroundTruth("perfect mask of an empty ground truth")
        return GeneratedSample(
            mask=gt,
            label=QualityLabel(iou=1.0, mask_type=MaskType.PERFECT, action=Action.ACCEPT),
            spec=PerturbationSpec(kind=MaskType.PERFECT, slot=slot_name(MaskType.PERFECT)),
        )

    def _difficulty_of(self, target: IoUTarget) -> Difficulty:
        if target == self.config.hard_range:
            return Difficulty.HARD
        if target == self.config.medium_range:
            return Difficulty.MEDIUM
        raise ValueError(f"target {target} is neither the hard nor the medium interval")

    def gen_geometric(
        self, gt: BinaryMask, kind: MaskType, target: IoUTarget, rng_seed: int
    ) -> GeneratedSample:
        """Cutout, dilate or erode corruption with IoU inside ``target``.

        Binary-searches the element half size for the smallest size whose IoU
        drops below ``target.hi``. When that size overshoots below
        ``target.lo``, the previous size is fine-tuned by flipping randomly
        chosen pixels of the ring between the two sizes.
        """
        if kind not in GEOMETRIC_TYPES:
            raise ValueError(f"{kind.value} is not a geometric mask type")
        difficulty = self._difficulty_of(target)
        if gt.is_empty:
            raise EmptyGroundTruth("geometric corruption of an empty ground truth")
        gt_area = gt.area
        if gt_area < self.config.min_object_area:
            raise DegenerateObject(f"object area {gt_area} < {self.config.min_object_area}")

        rng = np.random.default_rng(rng_seed)
        shape = ElementShape.ELLIPSE if rng.integers(2) else ElementShape.RECTANGLE
        gt_bits = gt.bits
        seed_point: Optional[tuple[int, int]] = None

        if kind is MaskType.DILATE:
            growth = _GrowthField(_distance(~gt_bits, shape), shape, inside=False)
            interior = None
        elif kind is MaskType.ERODE:
            padded = np.pad(gt_bits, 1, constant_values=False)
            growth = _GrowthField(_distance(padded, shape)[1:-1, 1:-1], shape, inside=True)
            interior = None
        else:
            interior = erode(gt, _UNIT_ELEMENT).bits
            seed_point = self._draw_cutout_seed(interior, rng)
            ys, xs = np.mgrid[0:gt.height, 0:gt.width]
            dx, dy = np.abs(xs - seed_point[0]), np.abs(ys - seed_point[1])
            if shape is ElementShape.ELLIPSE:
                distances = np.sqrt(dx * dx + dy * dy)
            else:
                distances = np.maximum(dx, dy).astype(float)
            growth = _GrowthField(distances, shape, inside=False)

        def corrupted(r: int) -> np.ndarray:
            grown = growth.candidate(r)
            if interior is not None:
                return gt_bits & ~(grown & interior)
            return grown

        def counts(bits: np.ndarray) -> tuple[int, int]:
            return int(np.count_nonzero(bits & gt_bits)), int(np.count_nonzero(bits | gt_bits))

        r_max = max(gt.width, gt.height)
        inter, union = counts(corrupted(r_max))
        if inter / union >= target.hi:
            raise UnreachableTarget(f"{kind.value}: IoU stays at {inter / union:.4f} at the largest element")

        lo_r, hi_r = 1, r_max
        while lo_r < hi_r:
            mid = (lo_r + hi_r) // 2
            inter, union = counts(corrupted(mid))
            if inter / union < target.hi:
                hi_r = mid
            else:
                lo_r = mid + 1
        radius = lo_r
        result = corrupted(radius)
        inter, union = counts(result)
        flips = 0

        if not target.contains(inter / union):
            radius -= 1
            base = corrupted(radius)
            if kind is MaskType.DILATE:
                ring = result & ~base
            else:
                ring = base & ~result
            coords = np.argwhere(ring)
            order = rng.permutation(len(coords))
            inter, union = counts(base)
            base = base.copy()
            cap = FLIP_CAP_FACTOR * gt_area
            for index in order:
                if flips >= cap:
                    break
                y, x = coords[index]
                if kind is MaskType.DILATE:
                    base[y, x] = True
                    union += 1
                else:
                    base[y, x] = False
                    inter -= 1
                flips += 1
                if target.contains(inter / union):
                    break
            if not target.contains(inter / union):
                raise UnreachableTarget(f"{kind.value}: fine-tuning exhausted after {flips} flips")
            result = base

        mask = BinaryMask(result)
        iou = mask_iou(mask, gt)
        spec = PerturbationSpec(
            kind=kind,
            slot=slot_name(kind, difficulty),
            rng_seed=rng_seed,
            target=target,
            element=structuring_element(shape, radius),
            seed_point=seed_point,
            fine_tune_flips=flips,
        )
        logger.debug(
            "geometric sample generated",
            extra={"fields": {"kind": kind.value, "difficulty": difficulty.value, "iou": iou, "flips": flips}},
        )
        return GeneratedSample(mask=mask, label=self._label(kind, iou, difficulty), spec=spec)

    @staticmethod
    def _draw_cutout_seed(interior: np.ndarray, rng: np.random.Generator) -> tuple[int, int]:
        """Uniform draw among interior pixels at least half as deep as the deepest one."""
        if not interior.any():
            raise UnreachableTarget("cutout: object has no interior pixels")
        depth = ndimage.distance_transform_cdt(interior, metric="chessboard")
        threshold = max(1, math.ceil(depth.max() / 2))
        candidates = np.argwhere(depth >= threshold)
        y, x = candidates[rng.integers(len(candidates))]
        return int(x), int(y)

    def select_full_negs(
        self, gt: BinaryMask, candidates: Sequence[tuple[str, BinaryMask]], k: Optional[int] = None
    ) -> list[GeneratedSample]:
        """Top-k non-empty candidates disjoint from gt, ranked by bbox IoU with gt."""
        k = self.config.max_negatives if k is None else k
        gt_box = bbox(gt) if not gt.is_empty else None
        ranked: list[tuple[float, str, BinaryMask]] = []
        for negative_id, candidate in candidates:
            if candidate.shape != gt.shape:
                raise DimensionMismatch(candidate.shape, gt.shape)
            if candidate.is_empty or not candidate.isdisjoint(gt):
                continue
            score = bbox_iou(bbox(candidate), gt_box) if gt_box is not None else 0.0
            ranked.append((score, negative_id, candidate))
        ranked.sort(key=lambda item: (-item[0], item[1]))

        return [
            GeneratedSample(
                mask=candidate,
                label=QualityLabel(iou=0.0, mask_type=MaskType.FULL_NEG, action=Action.REJECT),
                spec=PerturbationSpec(
                    kind=MaskType.FULL_NEG,
                    slot=slot_name(MaskType.FULL_NEG, negative_id=negative_id),
                    negative_id=negative_id,
                ),
            )
            for _, negative_id, candidate in ranked[:k]
        ]

    def gen_merges(
        self, gt: BinaryMask, full_negs: Sequence[tuple[str, BinaryMask]]
    ) -> list[GeneratedSample]:
        """gt ∪ H for every disjoint negative H."""
        merges = []
        for negative_id, negative in full_negs:
            if not negative.isdisjoint(gt):
                raise OverlapViolation(f"negative {negative_id} overlaps the ground truth")
            mask = gt | negative
            iou = mask_iou(mask, gt)
            action = derive_action(MaskType.MERGE, iou, self.config)
            merges.append(
                GeneratedSample(
                    mask=mask,
                    label=QualityLabel(
                        iou=iou, mask_type=MaskType.MERGE, action=action, difficulty=merge_difficulty(action)
                    ),
                    spec=PerturbationSpec(
                        kind=MaskType.MERGE,
                        slot=slot_name(MaskType.MERGE, negative_id=negative_id),
                        negative_id=negative_id,
                    ),
                )
            )
        return merges

    def gen_instance(
        self,
        gt: BinaryMask,
        negatives: Sequence[tuple[str, BinaryMask]],
        rng_seed: int,
        instance_id: str = "",
        frame_index: Optional[int] = None,
    ) -> InstanceSamples:
        """1 perfect, 2 each of cutout/dilate/erode, up to k merge and k full_neg."""
        if gt.is_empty:
            raise EmptyGroundTruth(f"instance {instance_id}: empty ground truth")

        out = InstanceSamples(samples=[self.gen_perfect(gt)])
        for kind in GEOMETRIC_TYPES:
            for difficulty, target in (
                (Difficulty.HARD, self.config.hard_range),
                (Difficulty.MEDIUM, self.config.medium_range),
            ):
                seed = derive_seed(rng_seed, kind.value, difficulty.value)
                try:
                    out.samples.append(self.gen_geometric(gt, kind, target, seed))
                except GenerationError as exc:
                    slot = slot_name(kind, difficulty)
                    logger.warning(
                        "sample dropped",
                        extra={"fields": {"instance_id": instance_id, "slot": slot, "frame_index": frame_index, "reason": str(exc)}},
                    )
                    out.failures.append(
                        GenerationFailure(instance_id=instance_id, slot=slot, frame_index=frame_index, reason=str(exc))
                    )

        full_negs = self.select_full_negs(gt, negatives)
        out.samples.extend(
            self.gen_merges(gt, [(sample.spec.negative_id, sample.mask) for sample in full_negs])
        )
        out.samples.extend(full_negs)
        return out
