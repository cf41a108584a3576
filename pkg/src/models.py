"""Pydantic models for the mask audit benchmark."""

from enum import Enum
from typing import Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

SCHEMA_VERSION = 1
IOU_HISTOGRAM_BINS = 10


class MaskType(str, Enum):
    """The six candidate-mask categories."""
    PERFECT = "perfect"
    CUTOUT = "cutout"
    DILATE = "dilate"
    ERODE = "erode"
    MERGE = "merge"
    FULL_NEG = "full_neg"


GEOMETRIC_TYPES = (MaskType.CUTOUT, MaskType.DILATE, MaskType.ERODE)


class Action(str, Enum):
    """Quality-control recommendations."""
    ACCEPT = "accept"
    MINOR_REVISION = "minor_revision"
    MAJOR_REVISION = "major_revision"
    REJECT = "reject"

    @property
    def display(self) -> str:
        """Title-case form used in audit text, e.g. ``Minor Revision``."""
        return self.value.replace("_", " ").title()


class Difficulty(str, Enum):
    """Sample difficulty tiers."""
    HARD = "hard"
    MEDIUM = "medium"
    EASY = "easy"
    NA = "n/a"


class Split(str, Enum):
    """Benchmark splits."""
    TRAIN = "train"
    TEST_SEEN = "test_seen"
    TEST_UNSEEN = "test_unseen"


class Protocol(str, Enum):
    """Evaluation protocols."""
    IMAGE_BASED = "image_based"
    VIDEO_BASED = "video_based"


class ParseStatus(str, Enum):
    """Outcome of parsing raw auditor text."""
    CLEAN = "clean"
    RECOVERED = "recovered"
    FAILED = "failed"


class ElementShape(str, Enum):
    """Structuring element footprints."""
    RECTANGLE = "rectangle"
    ELLIPSE = "ellipse"


class StructuringElement(BaseModel):
    """Morphological structuring element centred on the origin."""
    model_config = ConfigDict(frozen=True)

    shape: ElementShape = ElementShape.RECTANGLE
    half_width: int = Field(default=0, ge=0)
    half_height: int = Field(default=0, ge=0)

    @property
    def is_identity(self) -> bool:
        return self.half_width == 0 and self.half_height == 0

    def footprint(self) -> np.ndarray:
        """Boolean offset grid of shape (2*half_height+1, 2*half_width+1).

        Ellipse axes are inflated by half a pixel so that every element
        contains its centre and size (0, 0) is the identity.
        """
        hw, hh = self.half_width, self.half_height
        if self.shape is ElementShape.RECTANGLE:
            return np.ones((2 * hh + 1, 2 * hw + 1), dtype=bool)
        dy, dx = np.mgrid[-hh:hh + 1, -hw:hw + 1]
        return (dx / (hw + 0.5)) ** 2 + (dy / (hh + 0.5)) ** 2 <= 1.0


class BoundingBox(BaseModel):
    """Inclusive pixel bounding box."""
    model_config = ConfigDict(frozen=True)

    x_min: int
    y_min: int
    x_max: int
    y_max: int

    @model_validator(mode="after")
    def _check_order(self) -> "BoundingBox":
        if self.x_min > self.x_max or self.y_min > self.y_max:
            raise ValueError("bounding box corners out of order")
        return self

    @property
    def area(self) -> int:
        return (self.x_max - self.x_min + 1) * (self.y_max - self.y_min + 1)


class IoUTarget(BaseModel):
    """Half-open IoU interval [lo, hi)."""
    model_config = ConfigDict(frozen=True)

    lo: float
    hi: float

    @model_validator(mode="after")
    def _check_bounds(self) -> "IoUTarget":
        if not 0.0 < self.lo < self.hi <= 1.0:
            raise ValueError(f"IoU target must satisfy 0 < lo < hi <= 1, got [{self.lo}, {self.hi})")
        return self

    def contains(self, iou: float) -> bool:
        return self.lo <= iou < self.hi


HARD = IoUTarget(lo=0.85, hi=0.90)
MEDIUM = IoUTarget(lo=0.75, hi=0.80)


class QualityLabel(BaseModel):
    """Ground-truth (IoU, mask type, action) triple with difficulty."""
    iou: float = Field(ge=0.0, le=1.0)
    mask_type: MaskType
    action: Action
    difficulty: Difficulty = Difficulty.NA


class PerturbationSpec(BaseModel):
    """Everything needed to replay a generated mask from its ground truth."""
    kind: MaskType
    slot: str
    rng_seed: Optional[int] = None
    target: Optional[IoUTarget] = None
    element: Optional[StructuringElement] = None
    seed_point: Optional[tuple[int, int]] = None
    fine_tune_flips: int = 0
    negative_id: Optional[str] = None


class BuildConfig(BaseModel):
    """Benchmark build parameters; recorded in the manifest for provenance."""
    protocols: list[Protocol] = Field(default_factory=lambda: [Protocol.IMAGE_BASED])
    hard_range: IoUTarget = HARD
    medium_range: IoUTarget = MEDIUM
    merge_minor_threshold: float = 0.9
    merge_major_threshold: float = 0.75
    max_negatives: int = Field(default=3, ge=0)
    min_object_area: int = Field(default=20, ge=1)
    global_seed: int = 0
    output_dir: Optional[str] = Field(default=None, exclude=True)
    jobs: int = Field(default=1, ge=1, exclude=True)

    @field_validator("protocols")
    @classmethod
    def _canonical_protocols(cls, value: list[Protocol]) -> list[Protocol]:
        if not value:
            raise ValueError("at least one protocol is required")
        return sorted(set(value), key=lambda p: p.value)

    @model_validator(mode="after")
    def _check_thresholds(self) -> "BuildConfig":
        if self.medium_range.hi > self.hard_range.lo:
            raise ValueError("medium interval must lie below the hard interval")
        if not 0.0 < self.merge_major_threshold < self.merge_minor_threshold < 1.0:
            raise ValueError("merge thresholds must satisfy 0 < major < minor < 1")
        return self


class NegativeRef(BaseModel):
    """A candidate distractor object with one mask path per frame."""
    negative_id: str
    mask_paths: list[Optional[str]]


class InstanceRecord(BaseModel):
    """One <video, reference> pair and its source files."""
    instance_id: str
    video_id: str
    reference_text: str = ""
    object_category: str = ""
    split: Split = Split.TRAIN
    key_frame_index: Optional[int] = Field(default=None, ge=0)
    key_frame_heuristic: bool = False
    frame_count: int = Field(default=10, ge=1)
    video_path: Optional[str] = None
    audio_path: Optional[str] = None
    frame_paths: list[Optional[str]] = Field(default_factory=list)
    gt_mask_paths: list[Optional[str]]
    negatives: list[NegativeRef] = Field(default_factory=list)
    partial: bool = False

    @model_validator(mode="after")
    def _check_frames(self) -> "InstanceRecord":
        if len(self.gt_mask_paths) != self.frame_count:
            raise ValueError(
                f"instance {self.instance_id}: {len(self.gt_mask_paths)} gt paths for {self.frame_count} frames"
            )
        if self.key_frame_index is not None and self.key_frame_index >= self.frame_count:
            raise ValueError(f"instance {self.instance_id}: key frame {self.key_frame_index} out of range")
        for negative in self.negatives:
            if len(negative.mask_paths) != self.frame_count:
                raise ValueError(
                    f"instance {self.instance_id}: negative {negative.negative_id} does not cover every frame"
                )
        if self.frame_paths and len(self.frame_paths) != self.frame_count:
            raise ValueError(f"instance {self.instance_id}: frame paths do not cover every frame")
        return self


class InstancesFile(BaseModel):
    """Top-level document of an instances input file."""
    instances: list[InstanceRecord]


class SampleRecord(BaseModel):
    """One generated candidate mask with its label."""
    sample_id: str
    instance_id: str
    slot: str
    frame_index: int = Field(ge=0)
    mask_path: str
    label: QualityLabel
    spec: PerturbationSpec
    protocol_membership: list[Protocol]

    @field_validator("protocol_membership")
    @classmethod
    def _canonical_membership(cls, value: list[Protocol]) -> list[Protocol]:
        return sorted(set(value), key=lambda p: p.value)

    @property
    def video_sample_id(self) -> str:
        return f"{self.instance_id}:{self.slot}"


class GenerationFailure(BaseModel):
    """A dropped sample, kept in the manifest for traceability."""
    instance_id: str
    slot: str
    frame_index: Optional[int] = None
    reason: str


class CompositionRow(BaseModel):
    """Per protocol x split counts, laid out like the dataset statistics table."""
    protocol: Protocol
    split: Split
    video_count: int = 0
    reference_count: int = 0
    total: int = 0
    perfect: int = 0
    cutout: int = 0
    dilate: int = 0
    erode: int = 0
    merge: int = 0
    full_neg: int = 0

    def type_count(self, mask_type: MaskType) -> int:
        return getattr(self, mask_type.value)

    def identity_holds(self) -> bool:
        return self.total == sum(self.type_count(t) for t in MaskType)


class Composition(BaseModel):
    """Composition summary of a built benchmark."""
    rows: list[CompositionRow] = Field(default_factory=list)
    difficulty_counts: dict[str, int] = Field(default_factory=dict)
    # "<protocol>/<mask_type>" -> sample counts over IOU_HISTOGRAM_BINS equal-width bins of [0, 1].
    iou_histograms: dict[str, list[int]] = Field(default_factory=dict)


class Manifest(BaseModel):
    """The benchmark as written to ``manifest.json``."""
    schema_version: int = SCHEMA_VERSION
    global_seed: int
    build_config: BuildConfig
    instances_root: str = "."
    instances: list[InstanceRecord] = Field(default_factory=list)
    samples: list[SampleRecord] = Field(default_factory=list)
    composition: Composition = Field(default_factory=Composition)
    failures: list[GenerationFailure] = Field(default_factory=list)


class Violation(BaseModel):
    """A single verification finding."""
    kind: str
    sample_id: Optional[str] = None
    message: str


class VerificationReport(BaseModel):
    """Result of re-checking a built benchmark."""
    checked_samples: int = 0
    violations: list[Violation] = Field(default_factory=list)
    notes: list[str] = Field(default_factory=list)
    composition: list[CompositionRow] = Field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations


class AuditPrediction(BaseModel):
    """A parsed auditor output."""
    raw_text: str = ""
    iou: Optional[float] = None
    mask_type: Optional[MaskType] = None
    action: Optional[Action] = None
    reasoning: str = ""
    parse_status: ParseStatus = ParseStatus.CLEAN
    target: Optional[str] = None


class PredictionRecord(BaseModel):
    """One line of a predictions file: raw text, structured fields, or both."""
    sample_id: str
    raw_text: Optional[str] = None
    iou: Optional[float] = None
    mask_type: Optional[MaskType] = None
    action: Optional[Action] = None
    reasoning: Optional[str] = None
    target: Optional[str] = None

    @property
    def is_structured(self) -> bool:
        return self.iou is not None and self.mask_type is not None and self.action is not None


class EvaluationOptions(BaseModel):
    """Evaluator switches."""
    protocol: Protocol = Protocol.IMAGE_BASED
    subset_precision: bool = False
    strict_parse: bool = False


class CellResult(BaseModel):
    """Scores of one reporting cell; F2 in percent, ``None`` when undefined."""
    count: int = 0
    rmse: Optional[float] = None
    f2_mask_type: Optional[float] = None
    f2_action: Optional[float] = None


class SplitReport(BaseModel):
    """All reporting cells of one split."""
    columns: dict[str, CellResult] = Field(default_factory=dict)
    overall: CellResult = Field(default_factory=CellResult)
    average: CellResult = Field(default_factory=CellResult)
    mask_type_confusion: dict[str, dict[str, int]] = Field(default_factory=dict)
    action_confusion: dict[str, dict[str, int]] = Field(default_factory=dict)
    parse_counts: dict[str, int] = Field(default_factory=dict)


class MetricReport(BaseModel):
    """Evaluation results of one protocol."""
    protocol: Protocol
    subset_precision: bool = False
    strict_parse: bool = False
    splits: dict[str, SplitReport] = Field(default_factory=dict)


class JFScores(BaseModel):
    """Mean region (J) and boundary (F) scores over a set of samples."""
    count: int = 0
    j: float = 0.0
    f: float = 0.0
    jf: float = 0.0


class RefineGroupReport(BaseModel):
    """Before/after scores of a group of samples."""
    before: JFScores = Field(default_factory=JFScores)
    after: JFScores = Field(default_factory=JFScores)
    flagged: int = 0
    regenerated: int = 0
    failed: int = 0


class RefineReport(BaseModel):
    """Outcome of the audit-then-refine loop."""
    trigger_types: list[MaskType]
    include_reject: bool = False
    iterations: int = 1
    overall: RefineGroupReport = Field(default_factory=RefineGroupReport)
    splits: dict[str, RefineGroupReport] = Field(default_factory=dict)
    refined_masks: dict[str, str] = Field(default_factory=dict)


class ParseRequest(BaseModel):
    """Request model for parsing raw auditor text."""
    text: str


class SerializeRequest(BaseModel):
    """Request model for rendering an audit block."""
    iou: float = Field(ge=0.0, le=1.0)
    mask_type: MaskType
    action: Action
    reasoning: Optional[str] = None
    target: Optional[str] = None
    negative: Optional[str] = None


class SerializeResponse(BaseModel):
    """Rendered audit block."""
    text: str


class EvaluationRequest(BaseModel):
    """Request model for scoring predictions against the served manifest."""
    predictions: list[PredictionRecord]
    protocol: Protocol = Protocol.IMAGE_BASED
    subset_precision: bool = False
    strict_parse: bool = False


class Evaluation(BaseModel):
    """Stored evaluation."""
    evaluation_id: str
    prediction_count: int
    report: MetricReport
