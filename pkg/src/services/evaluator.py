"""RMSE and macro-F2 scoring under the image-based and video-based protocols."""

import json
import logging
import math
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Hashable, Iterable, Optional, Sequence

from errors import EmptyVideo, UnscoredSample
from models import (
    Action,
    AuditPrediction,
    CellResult,
    Difficulty,
    EvaluationOptions,
    Manifest,
    MaskType,
    MetricReport,
    ParseStatus,
    PredictionRecord,
    Protocol,
    QualityLabel,
    SplitReport,
)
from services.audit_parser import parse_audit

logger = logging.getLogger(__name__)

FAILED_PARSE_IOU = 0.5
FAILED = "failed"
ALL_SPLITS = "all"

REPORT_COLUMNS: tuple[tuple[str, str, MaskType, Optional[Difficulty]], ...] = (
    ("perfect", "Perfect", MaskType.PERFECT, None),
    ("cutout-hard", "Cutout H", MaskType.CUTOUT, Difficulty.HARD),
    ("cutout-medium", "Cutout M", MaskType.CUTOUT, Difficulty.MEDIUM),
    ("dilate-hard", "Dilate H", MaskType.DILATE, Difficulty.HARD),
    ("dilate-medium", "Dilate M", MaskType.DILATE, Difficulty.MEDIUM),
    ("erode-hard", "Erode H", MaskType.ERODE, Difficulty.HARD),
    ("erode-medium", "Erode M", MaskType.ERODE, Difficulty.MEDIUM),
    ("merge", "Merge", MaskType.MERGE, None),
    ("full_neg", "Full_neg", MaskType.FULL_NEG, None),
)


def column_of(label: QualityLabel) -> str:
    for key, _, mask_type, difficulty in REPORT_COLUMNS:
        if label.mask_type is mask_type and (difficulty is None or label.difficulty is difficulty):
            return key
    return label.mask_type.value


def f_beta(tp: int, fp: int, fn: int, beta: float = 2.0) -> float:
    """F-beta from counts; zero denominators give zero."""
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    if precision == 0.0 and recall == 0.0:
        return 0.0
    b2 = beta * beta
    return (1 + b2) * precision * recall / (b2 * precision + recall)


@dataclass
class ClassCounts:
    tp: int = 0
    fp: int = 0
    fn: int = 0

    @property
    def support(self) -> int:
        return self.tp + self.fp + self.fn

    def __add__(self, other: "ClassCounts") -> "ClassCounts":
        return ClassCounts(self.tp + other.tp, self.fp + other.fp, self.fn + other.fn)


@dataclass
class ConfusionCounts:
    """One-vs-rest TP/FP/FN per class; partial counts merge by addition."""
    classes: dict[Hashable, ClassCounts] = field(default_factory=dict)

    def _get(self, cls: Hashable) -> ClassCounts:
        return self.classes.setdefault(cls, ClassCounts())

    def add(self, gt: Hashable, pred: Optional[Hashable]) -> None:
        """A ``None`` prediction is a miss for ``gt`` and a false alarm for nothing."""
        if pred == gt:
            self._get(gt).tp += 1
            return
        self._get(gt).fn += 1
        if pred is not None:
            self._get(pred).fp += 1

    def __add__(self, other: "ConfusionCounts") -> "ConfusionCounts":
        merged = ConfusionCounts({cls: ClassCounts() + counts for cls, counts in self.classes.items()})
        for cls, counts in other.classes.items():
            merged.classes[cls] = merged._get(cls) + counts
        return merged

    def macro_f2(self, classes: Optional[Iterable[Hashable]] = None) -> Optional[float]:
        """Mean per-class F2 over ``classes`` (default: every class with support)."""
        if classes is None:
            classes = [cls for cls, counts in self.classes.items() if counts.support]
        scores = [f_beta(c.tp, c.fp, c.fn) for c in (self.classes.get(cls, ClassCounts()) for cls in classes)]
        return math.fsum(scores) / len(scores) if scores else None


@dataclass(frozen=True)
class ScoredSample:
    """A label paired with the numbers the scorer uses from its prediction."""
    label: QualityLabel
    pred_iou: float
    pred_type: Optional[MaskType]
    pred_action: Optional[Action]
    status: ParseStatus

    @property
    def column(self) -> str:
        return column_of(self.label)


def score_prediction(label: QualityLabel, prediction: AuditPrediction, strict_parse: bool = False) -> ScoredSample:
    """Failed (or, when strict, recovered) parses score IoU 0.5 and no class."""
    status = prediction.parse_status
    if strict_parse and status is ParseStatus.RECOVERED:
        status = ParseStatus.FAILED
    if status is ParseStatus.FAILED:
        return ScoredSample(label, FAILED_PARSE_IOU, None, None, status)
    iou = FAILED_PARSE_IOU if prediction.iou is None else prediction.iou
    return ScoredSample(label, iou, prediction.mask_type, prediction.action, status)


def _as_scored(items: Iterable, strict_parse: bool) -> list[ScoredSample]:
    scored = []
    for item in items:
        if isinstance(item, ScoredSample):
            scored.append(item)
        else:
            label, prediction = item
            scored.append(score_prediction(label, prediction, strict_parse))
    return scored


def _percent(value: Optional[float]) -> Optional[float]:
    return None if value is None else 100.0 * value


def _rmse(residuals: Sequence[float]) -> Optional[float]:
    if not residuals:
        return None
    return math.sqrt(math.fsum(r * r for r in residuals) / len(residuals))


def _confusions(samples: Iterable[ScoredSample]) -> tuple[ConfusionCounts, ConfusionCounts]:
    types, actions = ConfusionCounts(), ConfusionCounts()
    for sample in samples:
        types.add(sample.label.mask_type, sample.pred_type)
        actions.add(sample.label.action, sample.pred_action)
    return types, actions


def _cell_f2(
    cell: Sequence[ScoredSample], split_counts: ConfusionCounts, attr: str, subset_precision: bool
) -> Optional[float]:
    """Macro F2 over the gt classes of a cell; TP/FN from the cell, FP from the split or the cell."""
    gt_attr = "mask_type" if attr == "pred_type" else "action"
    gt_classes = sorted({getattr(s.label, gt_attr) for s in cell}, key=lambda c: c.value)
    scores = []
    for cls in gt_classes:
        tp = sum(1 for s in cell if getattr(s.label, gt_attr) is cls and getattr(s, attr) is cls)
        fn = sum(1 for s in cell if getattr(s.label, gt_attr) is cls and getattr(s, attr) is not cls)
        if subset_precision:
            fp = sum(1 for s in cell if getattr(s.label, gt_attr) is not cls and getattr(s, attr) is cls)
        else:
            fp = split_counts.classes.get(cls, ClassCounts()).fp
        scores.append(f_beta(tp, fp, fn))
    return math.fsum(scores) / len(scores) if scores else None


def _confusion_matrix(pairs: Iterable[tuple[str, Optional[str]]]) -> dict[str, dict[str, int]]:
    matrix: dict[str, dict[str, int]] = defaultdict(lambda: defaultdict(int))
    for gt, pred in pairs:
        matrix[gt][pred if pred is not None else FAILED] += 1
    return {gt: dict(sorted(row.items())) for gt, row in sorted(matrix.items())}


def _average(columns: dict[str, CellResult]) -> CellResult:
    filled = [cell for cell in columns.values() if cell.count]

    def mean(attr: str) -> Optional[float]:
        values = [getattr(cell, attr) for cell in filled if getattr(cell, attr) is not None]
        return math.fsum(values) / len(values) if values else None

    return CellResult(
        count=sum(cell.count for cell in filled),
        rmse=mean("rmse"),
        f2_mask_type=mean("f2_mask_type"),
        f2_action=mean("f2_action"),
    )


def _common_split_fields(samples: Sequence[ScoredSample]) -> dict:
    parse_counts: dict[str, int] = defaultdict(int)
    for sample in samples:
        parse_counts[sample.status.value] += 1
    return {
        "mask_type_confusion": _confusion_matrix(
            (s.label.mask_type.value, s.pred_type.value if s.pred_type else None) for s in samples
        ),
        "action_confusion": _confusion_matrix(
            (s.label.action.value, s.pred_action.value if s.pred_action else None) for s in samples
        ),
        "parse_counts": dict(sorted(parse_counts.items())),
    }


def image_split_report(samples: Sequence[ScoredSample], subset_precision: bool = False) -> SplitReport:
    """Scores over all samples of one split; cells follow the reporting columns."""
    type_counts, action_counts = _confusions(samples)
    columns: dict[str, CellResult] = {}
    for key, _, _, _ in REPORT_COLUMNS:
        cell = [s for s in samples if s.column == key]
        if not cell:
            columns[key] = CellResult()
            continue
        columns[key] = CellResult(
            count=len(cell),
            rmse=_rmse([s.pred_iou - s.label.iou for s in cell]),
            f2_mask_type=_percent(_cell_f2(cell, type_counts, "pred_type", subset_precision)),
            f2_action=_percent(_cell_f2(cell, action_counts, "pred_action", subset_precision)),
        )
    overall = CellResult(
        count=len(samples),
        rmse=_rmse([s.pred_iou - s.label.iou for s in samples]),
        f2_mask_type=_percent(type_counts.macro_f2()),
        f2_action=_percent(action_counts.macro_f2()),
    )
    return SplitReport(columns=columns, overall=overall, average=_average(columns), **_common_split_fields(samples))


@dataclass(frozen=True)
class _VideoScore:
    column: str
    residual: float
    f2_mask_type: Optional[float]
    f2_action: Optional[float]


def _score_video(frames: Sequence[ScoredSample]) -> _VideoScore:
    if not frames:
        raise EmptyVideo("video sample without scored frames")
    mean_pred = math.fsum(f.pred_iou for f in frames) / len(frames)
    mean_gt = math.fsum(f.label.iou for f in frames) / len(frames)
    types, actions = _confusions(frames)
    return _VideoScore(
        column=frames[0].column,
        residual=mean_pred - mean_gt,
        f2_mask_type=types.macro_f2(),
        f2_action=actions.macro_f2(),
    )


def _video_cell(scores: Sequence[_VideoScore], frame_count: int) -> CellResult:
    if not scores:
        return CellResult()

    def mean(values: list[Optional[float]]) -> Optional[float]:
        present = [v for v in values if v is not None]
        return _percent(math.fsum(present) / len(present)) if present else None

    return CellResult(
        count=frame_count,
        rmse=_rmse([s.residual for s in scores]),
        f2_mask_type=mean([s.f2_mask_type for s in scores]),
        f2_action=mean([s.f2_action for s in scores]),
    )


def video_split_report(videos: Sequence[Sequence[ScoredSample]]) -> SplitReport:
    """Per-video means and per-video macro F2, then averaged across videos."""
    scores = [_score_video(frames) for frames in videos]
    frames_by_column: dict[str, int] = defaultdict(int)
    for frames, score in zip(videos, scores):
        frames_by_column[score.column] += len(frames)
    columns = {
        key: _video_cell([s for s in scores if s.column == key], frames_by_column.get(key, 0))
        for key, _, _, _ in REPORT_COLUMNS
    }
    all_frames = [frame for frames in videos for frame in frames]
    overall = _video_cell(scores, len(all_frames))
    return SplitReport(columns=columns, overall=overall, average=_average(columns), **_common_split_fields(all_frames))


def evaluate_image_based(
    samples: Sequence,
    *,
    split: str = ALL_SPLITS,
    subset_precision: bool = False,
    strict_parse: bool = False,
) -> MetricReport:
    """Image-based scoring of (QualityLabel, AuditPrediction) pairs."""
    scored = _as_scored(samples, strict_parse)
    return MetricReport(
        protocol=Protocol.IMAGE_BASED,
        subset_precision=subset_precision,
        strict_parse=strict_parse,
        splits={split: image_split_report(scored, subset_precision)},
    )


def evaluate_video_based(
    videos: Sequence[Sequence], *, split: str = ALL_SPLITS, strict_parse: bool = False
) -> MetricReport:
    """Video-based scoring; each video is a sequence of per-frame pairs."""
    scored = [_as_scored(frames, strict_parse) for frames in videos]
    return MetricReport(
        protocol=Protocol.VIDEO_BASED,
        strict_parse=strict_parse,
        splits={split: video_split_report(scored)},
    )


def to_audit_prediction(record: PredictionRecord) -> AuditPrediction:
    """Structured fields win over raw text; out-of-range IoUs are clamped (recovered)."""
    if record.is_structured:
        iou = min(1.0, max(0.0, record.iou))
        status = ParseStatus.CLEAN if iou == record.iou else ParseStatus.RECOVERED
        return AuditPrediction(
            raw_text=record.raw_text or "",
            iou=iou,
            mask_type=record.mask_type,
            action=record.action,
            reasoning=record.reasoning or "",
            parse_status=status,
            target=record.target,
        )
    prediction = parse_audit(record.raw_text or "")
    if record.target:
        prediction.target = record.target
    return prediction


def match_predictions(
    manifest: Manifest, predictions: Sequence[PredictionRecord], protocol: Protocol
) -> dict[str, AuditPrediction]:
    """Map every sample of ``protocol`` to exactly one prediction."""
    wanted = {s.sample_id for s in manifest.samples if protocol in s.protocol_membership}
    by_id: dict[str, AuditPrediction] = {}
    duplicates = set()
    for record in predictions:
        if record.sample_id in by_id:
            duplicates.add(record.sample_id)
        by_id[record.sample_id] = to_audit_prediction(record)
    if duplicates:
        raise UnscoredSample(f"{len(duplicates)} samples predicted more than once, e.g. {sorted(duplicates)[0]}")
    unknown = sorted(set(by_id) - {s.sample_id for s in manifest.samples})
    if unknown:
        raise UnscoredSample(f"{len(unknown)} predictions for unknown samples, e.g. {unknown[0]}")
    missing = sorted(wanted - set(by_id))
    if missing:
        raise UnscoredSample(f"{len(missing)} samples have no prediction, e.g. {missing[0]}")
    return {sample_id: by_id[sample_id] for sample_id in wanted}


def evaluate_manifest(
    manifest: Manifest, predictions: Sequence[PredictionRecord], options: Optional[EvaluationOptions] = None
) -> MetricReport:
    """Score predictions for one protocol, one report section per split."""
    options = options or EvaluationOptions()
    matched = match_predictions(manifest, predictions, options.protocol)
    split_of = {instance.instance_id: instance.split.value for instance in manifest.instances}

    by_split: dict[str, list[tuple[str, ScoredSample]]] = defaultdict(list)
    for sample in manifest.samples:
        if sample.sample_id not in matched:
            continue
        scored = score_prediction(sample.label, matched[sample.sample_id], options.strict_parse)
        group = sample.video_sample_id if options.protocol is Protocol.VIDEO_BASED else sample.sample_id
        by_split[split_of[sample.instance_id]].append((group, scored))

    splits: dict[str, SplitReport] = {}
    for split in sorted(by_split):
        entries = by_split[split]
        if options.protocol is Protocol.IMAGE_BASED:
            splits[split] = image_split_report([s for _, s in entries], options.subset_precision)
        else:
            videos: dict[str, list[ScoredSample]] = defaultdict(list)
            for group, scored in entries:
                videos[group].append(scored)
            splits[split] = video_split_report([videos[v] for v in sorted(videos)])
    logger.info(
        "predictions evaluated",
        extra={"fields": {"protocol": options.protocol.value, "samples": len(matched), "splits": sorted(splits)}},
    )
    return MetricReport(
        protocol=options.protocol,
        subset_precision=options.subset_precision,
        strict_parse=options.strict_parse,
        splits=splits,
    )


_METRIC_ROWS = (("rmse", "RMSE", 3), ("f2_mask_type", "F2-M", 2), ("f2_action", "F2-A", 2))


def _rounded(value: Optional[float], digits: int) -> Optional[float]:
    return None if value is None else round(value, digits)


def report_tables(report: MetricReport, format: str = "markdown") -> str:
    """Render the reporting columns per split; RMSE to 3 decimals, F2 to 2."""
    titles = [title for _, title, _, _ in REPORT_COLUMNS] + ["Avg"]
    keys = [key for key, _, _, _ in REPORT_COLUMNS]

    if format == "json":
        tables = {}
        for split, section in report.splits.items():
            cells = [section.columns.get(key, CellResult()) for key in keys] + [section.average]
            tables[split] = {
                label: dict(zip(titles, (_rounded(getattr(cell, attr), digits) for cell in cells)))
                for attr, label, digits in _METRIC_ROWS
            }
            tables[split]["Overall"] = {
                label: _rounded(getattr(section.overall, attr), digits) for attr, label, digits in _METRIC_ROWS
            }
        return json.dumps({"protocol": report.protocol.value, "tables": tables}, sort_keys=True, indent=2) + "\n"
    if format != "markdown":
        raise ValueError(f"unknown table format {format!r}")

    lines = [
        "| Split | Metric | " + " | ".join(titles) + " |",
        "|" + "---|" * (len(titles) + 2),
    ]
    for split, section in report.splits.items():
        cells = [section.columns.get(key, CellResult()) for key in keys] + [section.average]
        for attr, label, digits in _METRIC_ROWS:
            values = []
            for cell in cells:
                value = getattr(cell, attr)
                values.append("-" if value is None else f"{value:.{digits}f}")
            lines.append(f"| {split} | {label} | " + " | ".join(values) + " |")
    return "\n".join(lines) + "\n"
