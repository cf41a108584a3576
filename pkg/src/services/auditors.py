"""Auditor and regenerator interfaces with built-in baselines and subprocess adapters."""

import json
import logging
import subprocess
from dataclasses import asdict, dataclass
from enum import Enum
from pathlib import Path
from typing import Iterable, Optional, Protocol, Sequence

import numpy as np

from errors import MaskAuditError, RegenerationFailure
from masks import BinaryMask
from models import (
    Action,
    AuditPrediction,
    InstanceRecord,
    Manifest,
    MaskType,
    ParseStatus,
    PredictionRecord,
    SampleRecord,
)
from services.audit_parser import parse_audit, serialize_audit
from services.dataset_builder import instances_dir, resolve
from services.mask_io import load_mask
from services.perturbation import derive_seed

logger = logging.getLogger(__name__)

DEFAULT_COMMAND_TIMEOUT = 300.0


@dataclass(frozen=True)
class AuditRequest:
    """Everything an auditor may look at for one candidate mask."""
    sample: SampleRecord
    instance: InstanceRecord
    mask_path: str

    def to_payload(self) -> dict:
        return {
            "sample_id": self.sample.sample_id,
            "instance_id": self.instance.instance_id,
            "video_id": self.instance.video_id,
            "reference_text": self.instance.reference_text,
            "video_path": self.instance.video_path,
            "audio_path": self.instance.audio_path,
            "frame_index": self.sample.frame_index,
            "frame_path": self.instance.frame_paths[self.sample.frame_index] if self.instance.frame_paths else None,
            "mask_path": self.mask_path,
        }


class Auditor(Protocol):
    """Maps (video, audio, reference, frame, mask) to an audit prediction."""

    def audit(self, request: AuditRequest) -> AuditPrediction: ...


@dataclass(frozen=True)
class RegenerationRequest:
    """What the external segmenter is told about a rejected mask."""
    sample_id: str
    instance_id: str
    video_id: str
    frame_index: int
    reference_text: str
    hint: Optional[str]
    mask_path: str
    width: int
    height: int


class Regenerator(Protocol):
    """Produces a replacement mask for a flagged sample."""

    def regenerate(self, request: RegenerationRequest) -> BinaryMask: ...


def _prediction(iou: float, mask_type: MaskType, action: Action, target: Optional[str]) -> AuditPrediction:
    text = serialize_audit(iou, mask_type, action, target=target)
    prediction = parse_audit(text)
    return prediction.model_copy(update={"iou": iou, "target": target})


class OracleAuditor:
    """Emits the ground-truth triple of every sample."""

    def audit(self, request: AuditRequest) -> AuditPrediction:
        label = request.sample.label
        target = request.instance.object_category or None
        return _prediction(label.iou, label.mask_type, label.action, target)


class NoisyOracleAuditor:
    """Ground truth with Gaussian IoU noise and uniform label flips.

    Each sample draws from its own generator seeded by (seed, sample_id),
    so results do not depend on audit order.
    """

    def __init__(
        self, iou_sigma: float = 0.0, type_flip_prob: float = 0.0, action_flip_prob: float = 0.0, seed: int = 0
    ) -> None:
        if iou_sigma < 0:
            raise ValueError("iou_sigma must be non-negative")
        for name, value in (("type_flip_prob", type_flip_prob), ("action_flip_prob", action_flip_prob)):
            if not 0.0 <= value <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1]")
        self.iou_sigma = iou_sigma
        self.type_flip_prob = type_flip_prob
        self.action_flip_prob = action_flip_prob
        self.seed = seed

    @staticmethod
    def _flip(value: Enum, choices: Sequence[Enum], rng: np.random.Generator) -> Enum:
        others = [choice for choice in choices if choice is not value]
        return others[int(rng.integers(len(others)))]

    def audit(self, request: AuditRequest) -> AuditPrediction:
        label = request.sample.label
        rng = np.random.default_rng(derive_seed(self.seed, request.sample.sample_id))
        iou = float(np.clip(label.iou + rng.normal(0.0, self.iou_sigma), 0.0, 1.0))
        mask_type = label.mask_type
        if rng.random() < self.type_flip_prob:
            mask_type = self._flip(mask_type, list(MaskType), rng)
        action = label.action
        if rng.random() < self.action_flip_prob:
            action = self._flip(action, list(Action), rng)
        return _prediction(iou, mask_type, action, request.instance.object_category or None)


class ConstantPolicy(str, Enum):
    """Fixed answers of the constant baselines."""
    ACCEPT = "accept"
    REJECT = "reject"

    @classmethod
    def _missing_(cls, value: object) -> Optional["ConstantPolicy"]:
        # "always_accept" and "always_reject" are accepted as aliases.
        if isinstance(value, str) and value.startswith("always_"):
            return cls.__members__.get(value.removeprefix("always_").upper())
        return None


class ConstantAuditor:
    """Answers the same triple for every sample."""

    def __init__(self, policy: ConstantPolicy | str) -> None:
        self.policy = ConstantPolicy(policy)

    def audit(self, request: AuditRequest) -> AuditPrediction:
        if self.policy is ConstantPolicy.ACCEPT:
            return _prediction(1.0, MaskType.PERFECT, Action.ACCEPT, None)
        return _prediction(0.0, MaskType.FULL_NEG, Action.REJECT, None)


class CommandAuditor:
    """Runs an external auditor: request JSON on stdin, raw audit text on stdout."""

    def __init__(self, command: Sequence[str], timeout: float = DEFAULT_COMMAND_TIMEOUT) -> None:
        self.command = list(command)
        self.timeout = timeout

    def audit(self, request: AuditRequest) -> AuditPrediction:
        try:
            completed = subprocess.run(
                self.command,
                input=json.dumps(request.to_payload(), sort_keys=True),
                capture_output=True,
                text=True,
                timeout=self.timeout,
                check=True,
            )
        except (OSError, subprocess.SubprocessError) as exc:
            logger.warning(
                "auditor command failed",
                extra={"fields": {"sample_id": request.sample.sample_id, "reason": str(exc)}},
            )
            return AuditPrediction(raw_text="", parse_status=ParseStatus.FAILED)
        return parse_audit(completed.stdout)


class GroundTruthRegenerator:
    """Returns the ground-truth mask of the requested frame."""

    def __init__(self, manifest: Manifest, manifest_root: Path | str = ".") -> None:
        self._instances = {instance.instance_id: instance for instance in manifest.instances}
        self._root = instances_dir(manifest, manifest_root)

    def regenerate(self, request: RegenerationRequest) -> BinaryMask:
        path = self._instances[request.instance_id].gt_mask_paths[request.frame_index]
        if path is None:
            raise RegenerationFailure(f"no gt mask for {request.sample_id}")
        return load_mask(resolve(self._root, path))


class FailingRegenerator:
    """Always fails."""

    def regenerate(self, request: RegenerationRequest) -> BinaryMask:
        raise RegenerationFailure(f"regeneration unavailable for {request.sample_id}")


class CommandRegenerator:
    """Runs an external segmenter: request JSON on stdin, a mask path on stdout."""

    def __init__(self, command: Sequence[str], timeout: float = DEFAULT_COMMAND_TIMEOUT) -> None:
        self.command = list(command)
        self.timeout = timeout

    def regenerate(self, request: RegenerationRequest) -> BinaryMask:
        try:
            completed = subprocess.run(
                self.command,
                input=json.dumps(asdict(request), sort_keys=True),
                capture_output=True,
                text=True,
                timeout=self.timeout,
                check=True,
            )
        except (OSError, subprocess.SubprocessError) as exc:
            raise RegenerationFailure(f"{request.sample_id}: {exc}") from exc
        lines = [line.strip() for line in completed.stdout.splitlines() if line.strip()]
        if not lines:
            raise RegenerationFailure(f"{request.sample_id}: regenerator printed no mask path")
        try:
            return load_mask(Path(lines[-1]))
        except MaskAuditError as exc:
            raise RegenerationFailure(f"{request.sample_id}: {exc}") from exc


def audit_request(sample: SampleRecord, instance: InstanceRecord, manifest_root: Path | str) -> AuditRequest:
    return AuditRequest(sample=sample, instance=instance, mask_path=str(resolve(manifest_root, sample.mask_path)))


def to_prediction_record(sample_id: str, prediction: AuditPrediction) -> PredictionRecord:
    """Keep structured fields only for parsed predictions so failures stay failures."""
    if prediction.parse_status is ParseStatus.FAILED:
        return PredictionRecord(sample_id=sample_id, raw_text=prediction.raw_text)
    return PredictionRecord(
        sample_id=sample_id,
        raw_text=prediction.raw_text,
        iou=prediction.iou,
        mask_type=prediction.mask_type,
        action=prediction.action,
        reasoning=prediction.reasoning or None,
        target=prediction.target,
    )


def run_auditor(
    manifest: Manifest, manifest_root: Path | str, auditor: Auditor, samples: Optional[Iterable[SampleRecord]] = None
) -> list[PredictionRecord]:
    """Audit every sample (or the given subset) and return prediction records."""
    instances = {instance.instance_id: instance for instance in manifest.instances}
    records = []
    for sample in manifest.samples if samples is None else samples:
        prediction = auditor.audit(audit_request(sample, instances[sample.instance_id], manifest_root))
        records.append(to_prediction_record(sample.sample_id, prediction))
    return records
