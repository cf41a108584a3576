"""Re-check a built benchmark against its labels and construction rules."""

import logging
from collections import defaultdict
from pathlib import Path
from typing import Optional

from errors import BothEmpty, MaskAuditError
from masks import BinaryMask, boundary, mask_iou
from models import (
    GEOMETRIC_TYPES,
    Difficulty,
    Manifest,
    MaskType,
    Protocol,
    SampleRecord,
    Split,
    VerificationReport,
    Violation,
)
from services.dataset_builder import compute_composition, instances_dir, resolve
from services.mask_io import load_mask
from services.perturbation import derive_action, merge_difficulty

logger = logging.getLogger(__name__)

IOU_TOLERANCE = 1e-12
BASE_SAMPLES_PER_INSTANCE = 7


class ManifestVerifier:
    """Recomputes every label from the mask files and reports violations."""

    def __init__(self, manifest: Manifest, manifest_root: Path | str) -> None:
        self.manifest = manifest
        self.root = Path(manifest_root)
        self.config = manifest.build_config
        self.instances = {instance.instance_id: instance for instance in manifest.instances}
        self._gt_cache: dict[tuple[str, int], BinaryMask] = {}
        self.report = VerificationReport()

    def _violation(self, kind: str, message: str, sample_id: Optional[str] = None) -> None:
        self.report.violations.append(Violation(kind=kind, sample_id=sample_id, message=message))

    def _gt(self, instance_id: str, frame_index: int) -> BinaryMask:
        key = (instance_id, frame_index)
        if key not in self._gt_cache:
            path = self.instances[instance_id].gt_mask_paths[frame_index]
            if path is None:
                raise MaskAuditError(f"no gt mask for frame {frame_index}")
            self._gt_cache[key] = load_mask(resolve(instances_dir(self.manifest, self.root), path))
        return self._gt_cache[key]

    def _structural(self, sample: SampleRecord, mask: BinaryMask, gt: BinaryMask) -> Optional[tuple[str, str]]:
        match sample.label.mask_type:
            case MaskType.PERFECT:
                if mask != gt:
                    return "perfect-identity", "perfect mask differs from gt"
            case MaskType.CUTOUT:
                if not mask.issubset(gt):
                    return "containment", "cutout mask is not a subset of gt"
                if not boundary(gt).issubset(mask):
                    return "cutout-boundary", "cutout hole touches the gt boundary"
            case MaskType.ERODE:
                if not mask.issubset(gt):
                    return "containment", "erode mask is not a subset of gt"
            case MaskType.DILATE | MaskType.MERGE:
                if not mask.issuperset(gt):
                    return "containment", f"{sample.label.mask_type.value} mask is not a superset of gt"
            case MaskType.FULL_NEG:
                if mask.is_empty or not mask.isdisjoint(gt):
                    return "full-neg-overlap", "full_neg mask is empty or overlaps gt"
        return None

    def _label_checks(self, sample: SampleRecord, iou: float) -> None:
        label = sample.label
        sid = sample.sample_id
        if abs(iou - label.iou) > IOU_TOLERANCE:
            self._violation("iou-mismatch", f"label iou {label.iou} != recomputed {iou}", sid)
        expected_action = derive_action(label.mask_type, iou, self.config)
        if label.action is not expected_action:
            self._violation("action-mismatch", f"label action {label.action.value} != {expected_action.value}", sid)
        if sample.spec.kind is not label.mask_type:
            self._violation("label-invariant", "spec kind differs from label mask type", sid)

        if label.mask_type in GEOMETRIC_TYPES:
            if self.config.hard_range.contains(iou):
                expected = Difficulty.HARD
            elif self.config.medium_range.contains(iou):
                expected = Difficulty.MEDIUM
            else:
                self._violation("interval", f"iou {iou} outside the hard and medium intervals", sid)
                return
            if label.difficulty is not expected:
                self._violation("label-invariant", f"difficulty {label.difficulty.value} for iou {iou}", sid)
        elif label.mask_type is MaskType.MERGE:
            if not 0.0 < iou < 1.0:
                self._violation("label-invariant", f"merge iou {iou} outside (0, 1)", sid)
            elif label.difficulty is not merge_difficulty(expected_action):
                self._violation("label-invariant", f"merge difficulty {label.difficulty.value} for iou {iou}", sid)
        elif label.difficulty is not Difficulty.NA:
            self._violation("label-invariant", f"{label.mask_type.value} sample carries a difficulty", sid)

    def _check_sample(self, sample: SampleRecord) -> None:
        sid = sample.sample_id
        try:
            mask = load_mask(resolve(self.root, sample.mask_path))
            gt = self._gt(sample.instance_id, sample.frame_index)
        except MaskAuditError as exc:
            self._violation("unreadable-mask", str(exc), sid)
            return
        if mask.shape != gt.shape:
            self._violation("dimension-mismatch", f"mask {mask.shape} vs gt {gt.shape}", sid)
            return

        # A corrupt mask makes its recomputed IoU meaningless.
        structural = self._structural(sample, mask, gt)
        if structural is not None:
            self._violation(structural[0], structural[1], sid)
            return
        try:
            iou = mask_iou(mask, gt)
        except BothEmpty:
            self._violation("label-invariant", "mask and gt are both empty", sid)
            return
        self._label_checks(sample, iou)

    def _check_videos(self) -> None:
        types_by_video: dict[str, set[MaskType]] = defaultdict(set)
        for sample in self.manifest.samples:
            if Protocol.VIDEO_BASED in sample.protocol_membership:
                types_by_video[sample.video_sample_id].add(sample.label.mask_type)
        for video_id, types in sorted(types_by_video.items()):
            if len(types) > 1:
                self._violation("video-type-mix", f"video sample {video_id} mixes {sorted(t.value for t in types)}")

    def _check_instance_sizes(self) -> None:
        counts: dict[str, int] = defaultdict(int)
        for sample in self.manifest.samples:
            if Protocol.IMAGE_BASED in sample.protocol_membership:
                counts[sample.instance_id] += 1
        if Protocol.IMAGE_BASED not in self.config.protocols:
            return
        upper = BASE_SAMPLES_PER_INSTANCE + 2 * self.config.max_negatives
        for instance in self.manifest.instances:
            if instance.partial:
                continue
            count = counts.get(instance.instance_id, 0)
            if not BASE_SAMPLES_PER_INSTANCE <= count <= upper:
                self._violation(
                    "instance-size",
                    f"instance {instance.instance_id} has {count} image-based samples, expected 7..{upper}",
                )

    def _check_splits(self) -> None:
        train_categories = {i.object_category for i in self.manifest.instances if i.split is Split.TRAIN}
        for instance in self.manifest.instances:
            if instance.split is Split.TEST_UNSEEN and instance.object_category in train_categories:
                self._violation(
                    "split-category",
                    f"unseen instance {instance.instance_id} uses train category {instance.object_category!r}",
                )

    def _check_composition(self) -> None:
        recomputed = compute_composition(self.manifest.instances, self.manifest.samples)
        self.report.composition = recomputed.rows
        stale_histograms = recomputed.iou_histograms != self.manifest.composition.iou_histograms
        if recomputed.rows != self.manifest.composition.rows or stale_histograms:
            self._violation("composition", "composition summary does not match the samples")
        for row in recomputed.rows:
            if not row.identity_holds():
                self._violation("composition", f"{row.protocol.value}/{row.split.value}: type counts do not sum to total")
            if row.merge != row.full_neg:
                self.report.notes.append(
                    f"{row.protocol.value}/{row.split.value}: merge ({row.merge}) and full_neg ({row.full_neg}) counts differ"
                )

    def verify(self) -> VerificationReport:
        for sample in self.manifest.samples:
            self._check_sample(sample)
            self.report.checked_samples += 1
        self._check_videos()
        self._check_instance_sizes()
        self._check_splits()
        self._check_composition()
        logger.info(
            "manifest verified",
            extra={"fields": {"samples": self.report.checked_samples, "violations": len(self.report.violations)}},
        )
        return self.report


def verify_manifest(manifest: Manifest, manifest_root: Path | str) -> VerificationReport:
    return ManifestVerifier(manifest, manifest_root).verify()
