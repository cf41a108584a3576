"""Audit-triggered refinement: regenerate flagged masks and measure J and F before and after."""

import logging
import math
from collections import defaultdict
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Iterable, Optional, Sequence

from errors import MaskAuditError, RegenerationFailure, UnscoredSample
from masks import BinaryMask, jaccard_and_boundary_f
from models import (
    Action,
    AuditPrediction,
    JFScores,
    Manifest,
    MaskType,
    PredictionRecord,
    RefineGroupReport,
    RefineReport,
    SampleRecord,
)
from services.audit_parser import extract_target_hint
from services.auditors import Auditor, RegenerationRequest, Regenerator, audit_request
from services.dataset_builder import instances_dir, resolve
from services.evaluator import to_audit_prediction
from services.mask_io import load_mask, store_mask

logger = logging.getLogger(__name__)

REFINED_DIR = "refined"
DEFAULT_TRIGGER_TYPES = (MaskType.FULL_NEG,)


@dataclass
class _Tracked:
    sample: SampleRecord
    gt: BinaryMask
    mask: BinaryMask
    before: tuple[float, float]
    after: tuple[float, float]
    prediction: AuditPrediction
    flagged: bool = False
    regenerated: bool = False
    failed: bool = False
    refined_path: Optional[str] = None


def _mean_scores(pairs: Sequence[tuple[float, float]]) -> JFScores:
    if not pairs:
        return JFScores()
    count = len(pairs)
    j = math.fsum(p[0] for p in pairs) / count
    f = math.fsum(p[1] for p in pairs) / count
    return JFScores(count=count, j=j, f=f, jf=(j + f) / 2)


def _group(tracked: Iterable[_Tracked]) -> RefineGroupReport:
    items = list(tracked)
    return RefineGroupReport(
        before=_mean_scores([t.before for t in items]),
        after=_mean_scores([t.after for t in items]),
        flagged=sum(t.flagged for t in items),
        regenerated=sum(t.regenerated for t in items),
        failed=sum(t.failed for t in items),
    )


class RefineLoop:
    """Runs the flag, regenerate, re-audit cycle over one manifest."""

    def __init__(
        self,
        manifest: Manifest,
        manifest_root: Path | str,
        regenerator: Regenerator,
        trigger_types: Iterable[MaskType] = DEFAULT_TRIGGER_TYPES,
        include_reject: bool = False,
        iterations: int = 1,
        auditor: Optional[Auditor] = None,
        out_dir: Optional[Path | str] = None,
        tolerance: Optional[int] = None,
    ) -> None:
        if iterations < 1:
            raise ValueError("iterations must be at least 1")
        if iterations > 1 and auditor is None:
            raise ValueError("more than one iteration needs an auditor to re-audit regenerated masks")
        self.manifest = manifest
        self.root = Path(manifest_root)
        self.regenerator = regenerator
        self.trigger_types = sorted(set(trigger_types), key=lambda t: t.value)
        self.include_reject = include_reject
        self.iterations = iterations
        self.auditor = auditor
        self.out_dir = Path(out_dir) if out_dir is not None else None
        self.tolerance = tolerance
        self.instances = {instance.instance_id: instance for instance in manifest.instances}

    def _triggers(self, prediction: AuditPrediction) -> bool:
        if prediction.mask_type in self.trigger_types:
            return True
        return self.include_reject and prediction.action is Action.REJECT

    def _load(self, sample: SampleRecord, prediction: AuditPrediction) -> _Tracked:
        gt_path = self.instances[sample.instance_id].gt_mask_paths[sample.frame_index]
        if gt_path is None:
            raise UnscoredSample(f"{sample.sample_id}: no gt mask")
        gt = load_mask(resolve(instances_dir(self.manifest, self.root), gt_path))
        mask = load_mask(resolve(self.root, sample.mask_path))
        scores = jaccard_and_boundary_f(mask, gt, self.tolerance)
        return _Tracked(sample=sample, gt=gt, mask=mask, before=scores, after=scores, prediction=prediction)

    def _regenerate(self, item: _Tracked) -> None:
        sample = item.sample
        instance = self.instances[sample.instance_id]
        request = RegenerationRequest(
            sample_id=sample.sample_id,
            instance_id=instance.instance_id,
            video_id=instance.video_id,
            frame_index=sample.frame_index,
            reference_text=instance.reference_text,
            hint=extract_target_hint(item.prediction),
            mask_path=str(self._current_path(item)),
            width=item.gt.width,
            height=item.gt.height,
        )
        try:
            mask = self.regenerator.regenerate(request)
            if mask.shape != item.gt.shape:
                raise RegenerationFailure(f"{sample.sample_id}: regenerated mask is {mask.shape}, gt is {item.gt.shape}")
        except MaskAuditError as exc:
            logger.warning(
                "regeneration failed", extra={"fields": {"sample_id": sample.sample_id, "reason": str(exc)}}
            )
            item.failed = True
            return
        item.mask = mask
        item.after = jaccard_and_boundary_f(mask, item.gt, self.tolerance)
        item.regenerated = True
        item.failed = False
        if self.out_dir is not None:
            item.refined_path = f"{REFINED_DIR}/{sample.mask_path}"
            store_mask(mask, self.out_dir / item.refined_path)

    def _current_path(self, item: _Tracked) -> Path:
        if item.refined_path is not None and self.out_dir is not None:
            return self.out_dir / item.refined_path
        return resolve(self.root, item.sample.mask_path)

    def _reaudit(self, item: _Tracked) -> None:
        request = replace(
            audit_request(item.sample, self.instances[item.sample.instance_id], self.root),
            mask_path=str(self._current_path(item)),
        )
        item.prediction = self.auditor.audit(request)

    def run(self, predictions: Sequence[PredictionRecord]) -> RefineReport:
        by_id = {record.sample_id: record for record in predictions}
        known = {sample.sample_id for sample in self.manifest.samples}
        unknown = sorted(set(by_id) - known)
        if unknown:
            raise UnscoredSample(f"{len(unknown)} predictions for unknown samples, e.g. {unknown[0]}")
        missing = sorted(known - set(by_id))
        if missing:
            raise UnscoredSample(f"no prediction for {len(missing)} samples, e.g. {missing[0]}")

        tracked = [
            self._load(sample, to_audit_prediction(by_id[sample.sample_id])) for sample in self.manifest.samples
        ]
        pending = [item for item in tracked if self._triggers(item.prediction)]
        for item in pending:
            item.flagged = True

        for iteration in range(1, self.iterations + 1):
            for item in pending:
                self._regenerate(item)
            logger.info(
                "refinement pass finished",
                extra={"fields": {"iteration": iteration, "regenerated": sum(i.regenerated for i in pending)}},
            )
            if iteration == self.iterations:
                break
            still_flagged = []
            for item in pending:
                if not item.regenerated:
                    continue
                self._reaudit(item)
                if self._triggers(item.prediction):
                    still_flagged.append(item)
            if not still_flagged:
                break
            pending = still_flagged

        split_of = {instance.instance_id: instance.split.value for instance in self.manifest.instances}
        by_split: dict[str, list[_Tracked]] = defaultdict(list)
        for item in tracked:
            by_split[split_of[item.sample.instance_id]].append(item)

        return RefineReport(
            trigger_types=self.trigger_types,
            include_reject=self.include_reject,
            iterations=self.iterations,
            overall=_group(tracked),
            splits={split: _group(by_split[split]) for split in sorted(by_split)},
            refined_masks={t.sample.sample_id: t.refined_path for t in tracked if t.refined_path is not None},
        )


def refine_loop(
    manifest: Manifest,
    manifest_root: Path | str,
    predictions: Sequence[PredictionRecord],
    regenerator: Regenerator,
    trigger_types: Iterable[MaskType] = DEFAULT_TRIGGER_TYPES,
    include_reject: bool = False,
    iterations: int = 1,
    auditor: Optional[Auditor] = None,
    out_dir: Optional[Path | str] = None,
    tolerance: Optional[int] = None,
) -> RefineReport:
    """Regenerate samples whose audit is in ``trigger_types`` (or Reject) and report J and F."""
    loop = RefineLoop(
        manifest,
        manifest_root,
        regenerator,
        trigger_types=trigger_types,
        include_reject=include_reject,
        iterations=iterations,
        auditor=auditor,
        out_dir=out_dir,
        tolerance=tolerance,
    )
    return loop.run(predictions)
