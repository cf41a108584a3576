"""Benchmark construction: instances in, masks and manifest out."""

import logging
import os
from collections import Counter, defaultdict
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from errors import DimensionMismatch, EmptyGroundTruth, ManifestError, MaskAuditError, UnreadableMask
from masks import BinaryMask, bbox, bbox_iou
from models import (
    IOU_HISTOGRAM_BINS,
    BuildConfig,
    Composition,
    CompositionRow,
    GenerationFailure,
    InstanceRecord,
    Manifest,
    MaskType,
    Protocol,
    SampleRecord,
    Split,
)
from services.mask_io import load_frame, load_mask, render_masked_frame, store_frame, store_mask
from services.perturbation import GeneratedSample, MaskPerturber, derive_seed, slot_name
from services.storage import write_manifest

logger = logging.getLogger(__name__)

MASKS_DIR = "masks"


def sample_id_for(instance_id: str, slot: str, frame_index: int) -> str:
    return f"{instance_id}:{slot}:f{frame_index:03d}"


def mask_path_for(instance_id: str, slot: str, frame_index: int) -> str:
    """Manifest-relative path; every instance writes under its own directory."""
    return f"{MASKS_DIR}/{instance_id}/{slot}/f{frame_index:03d}.png"


def resolve(root: Path | str, path: str) -> Path:
    return Path(root) / path


def instances_dir(manifest: Manifest, manifest_root: Path | str) -> Path:
    """Directory the manifest's gt, negative and frame paths are relative to."""
    return Path(manifest_root) / manifest.instances_root


@dataclass
class _InstanceTask:
    instance: InstanceRecord
    config: BuildConfig
    instances_root: str
    out_dir: str


@dataclass
class _InstanceResult:
    instance: InstanceRecord
    samples: list[SampleRecord] = field(default_factory=list)
    failures: list[GenerationFailure] = field(default_factory=list)


class _InstanceBuilder:
    """Generates every sample of one instance; runs inside a worker."""

    def __init__(self, task: _InstanceTask) -> None:
        self.task = task
        self.instance = task.instance
        self.config = task.config
        self.perturber = MaskPerturber(task.config)
        self._gt_cache: dict[int, BinaryMask] = {}
        self.records: dict[str, SampleRecord] = {}
        self.failures: list[GenerationFailure] = []

    def _gt(self, frame_index: int) -> BinaryMask:
        if frame_index not in self._gt_cache:
            path = self.instance.gt_mask_paths[frame_index]
            if path is None:
                raise ManifestError(
                    f"instance {self.instance.instance_id}: no gt mask for frame {frame_index}"
                )
            self._gt_cache[frame_index] = load_mask(resolve(self.task.instances_root, path))
        return self._gt_cache[frame_index]

    def _fail(self, slot: str, frame_index: Optional[int], reason: str) -> None:
        failure = GenerationFailure(
            instance_id=self.instance.instance_id, slot=slot, frame_index=frame_index, reason=reason
        )
        if failure in self.failures:
            return
        logger.warning(
            "sample dropped",
            extra={"fields": {"instance_id": failure.instance_id, "slot": slot, "frame_index": frame_index, "reason": reason}},
        )
        self.failures.append(failure)

    def _negative(self, negative_index: int, frame_index: int) -> Optional[BinaryMask]:
        """The negative's mask on a frame; None when absent or not the gt's size."""
        negative = self.instance.negatives[negative_index]
        path = negative.mask_paths[frame_index]
        if path is None:
            return None
        mask = load_mask(resolve(self.task.instances_root, path))
        gt = self._gt(frame_index)
        if mask.shape != gt.shape:
            slot = slot_name(MaskType.FULL_NEG, negative_id=negative.negative_id)
            self._fail(slot, frame_index, str(DimensionMismatch(mask.shape, gt.shape)))
            return None
        return mask

    def _key_frame(self) -> int:
        """Declared key frame, else the frame with the largest gt area."""
        if self.instance.key_frame_index is not None:
            return self.instance.key_frame_index
        areas = [
            (self._gt(t).area if path is not None else -1, -t)
            for t, path in enumerate(self.instance.gt_mask_paths)
        ]
        key = -max(areas)[1]
        self.instance = self.instance.model_copy(update={"key_frame_index": key, "key_frame_heuristic": True})
        logger.debug(
            "key frame chosen by gt area",
            extra={"fields": {"instance_id": self.instance.instance_id, "key_frame_index": key}},
        )
        return key

    def _record(self, sample: GeneratedSample, frame_index: int, protocol: Protocol) -> None:
        instance_id = self.instance.instance_id
        slot = sample.spec.slot
        sample_id = sample_id_for(instance_id, slot, frame_index)
        existing = self.records.get(sample_id)
        if existing is not None:
            self.records[sample_id] = existing.model_copy(
                update={"protocol_membership": sorted({*existing.protocol_membership, protocol}, key=lambda p: p.value)}
            )
            return
        mask_path = mask_path_for(instance_id, slot, frame_index)
        store_mask(sample.mask, resolve(self.task.out_dir, mask_path))
        self.records[sample_id] = SampleRecord(
            sample_id=sample_id,
            instance_id=instance_id,
            slot=slot,
            frame_index=frame_index,
            mask_path=mask_path,
            label=sample.label,
            spec=sample.spec,
            protocol_membership=[protocol],
        )

    def _generate_frame(
        self, frame_index: int, negatives: Sequence[tuple[str, BinaryMask]], protocol: Protocol
    ) -> None:
        instance_id = self.instance.instance_id
        gt = self._gt(frame_index)
        seed = derive_seed(self.config.global_seed, instance_id, frame_index)
        try:
            generated = self.perturber.gen_instance(gt, negatives, seed, instance_id, frame_index)
        except EmptyGroundTruth as exc:
            self._fail("*", frame_index, str(exc))
            return
        for sample in generated.samples:
            self._record(sample, frame_index, protocol)
        self.failures.extend(generated.failures)

    def _image_based(self, key: int) -> None:
        negatives = []
        for index, negative in enumerate(self.instance.negatives):
            mask = self._negative(index, key)
            if mask is not None:
                negatives.append((negative.negative_id, mask))
        self._generate_frame(key, negatives, Protocol.IMAGE_BASED)

    def _video_based(self, key: int) -> None:
        frames = [t for t in range(self.instance.frame_count) if not self._gt(t).is_empty]
        if not frames:
            return
        rank_frame = key if key in frames else frames[0]

        # A video-level negative must be usable on every frame.
        eligible: list[tuple[float, str, dict[int, BinaryMask]]] = []
        for index, negative in enumerate(self.instance.negatives):
            per_frame: dict[int, BinaryMask] = {}
            for t in frames:
                mask = self._negative(index, t)
                if mask is None or mask.is_empty or not mask.isdisjoint(self._gt(t)):
                    break
                per_frame[t] = mask
            else:
                score = bbox_iou(bbox(per_frame[rank_frame]), bbox(self._gt(rank_frame)))
                eligible.append((score, negative.negative_id, per_frame))
        eligible.sort(key=lambda item: (-item[0], item[1]))
        chosen = eligible[: self.config.max_negatives]

        for t in frames:
            self._generate_frame(t, [(negative_id, masks[t]) for _, negative_id, masks in chosen], Protocol.VIDEO_BASED)

    def run(self) -> _InstanceResult:
        try:
            key = self._key_frame()
            if Protocol.IMAGE_BASED in self.config.protocols:
                self._image_based(key)
            if Protocol.VIDEO_BASED in self.config.protocols:
                self._video_based(key)
        except UnreadableMask:
            raise
        except MaskAuditError as exc:
            self._fail("*", None, str(exc))
        instance = self.instance.model_copy(update={"partial": bool(self.failures)})
        samples = [self.records[sample_id] for sample_id in sorted(self.records)]
        return _InstanceResult(instance=instance, samples=samples, failures=self.failures)


def _run_task(task: _InstanceTask) -> _InstanceResult:
    return _InstanceBuilder(task).run()


def compute_composition(manifest_instances: Iterable[InstanceRecord], samples: Iterable[SampleRecord]) -> Composition:
    """Counts per protocol x split x type, videos and references per row, and IoU histograms."""
    instances = {instance.instance_id: instance for instance in manifest_instances}
    rows: dict[tuple[Protocol, Split], Counter] = {}
    videos: dict[tuple[Protocol, Split], set[str]] = defaultdict(set)
    references: dict[tuple[Protocol, Split], set[str]] = defaultdict(set)
    ious: dict[str, list[float]] = defaultdict(list)
    difficulty_counts: Counter = Counter()
    for sample in samples:
        instance = instances[sample.instance_id]
        split = instance.split
        mask_type = sample.label.mask_type
        for protocol in sample.protocol_membership:
            key = (protocol, split)
            rows.setdefault(key, Counter())[mask_type] += 1
            videos[key].add(instance.video_id)
            references[key].add(instance.instance_id)
            ious[f"{protocol.value}/{mask_type.value}"].append(sample.label.iou)
            difficulty_counts[f"{protocol.value}/{split.value}/{mask_type.value}/{sample.label.difficulty.value}"] += 1

    composition_rows = []
    for key, counter in sorted(rows.items(), key=lambda item: (item[0][0].value, item[0][1].value)):
        protocol, split = key
        row = CompositionRow(
            protocol=protocol,
            split=split,
            video_count=len(videos[key]),
            reference_count=len(references[key]),
            total=sum(counter.values()),
        )
        for mask_type in MaskType:
            setattr(row, mask_type.value, counter.get(mask_type, 0))
        composition_rows.append(row)
    histograms = {
        name: np.histogram(values, bins=IOU_HISTOGRAM_BINS, range=(0.0, 1.0))[0].tolist()
        for name, values in sorted(ious.items())
    }
    return Composition(
        rows=composition_rows,
        difficulty_counts=dict(sorted(difficulty_counts.items())),
        iou_histograms=histograms,
    )


def build_benchmark(
    instances: Sequence[InstanceRecord],
    config: BuildConfig,
    global_seed: int,
    out_dir: Path | str,
    instances_root: Path | str = ".",
) -> Manifest:
    """Generate every instance, write masks and ``manifest.json`` under ``out_dir``.

    Output is independent of ``config.jobs``: each instance is seeded from
    (global_seed, instance_id, frame) and results are assembled in
    instance-id order.
    """
    config = config.model_copy(update={"global_seed": global_seed})
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    root = str(Path(instances_root).resolve())
    relative_root = Path(os.path.relpath(root, out_dir.resolve())).as_posix()

    ordered = sorted(instances, key=lambda instance: instance.instance_id)
    tasks = [_InstanceTask(instance, config, root, str(out_dir)) for instance in ordered]
    if config.jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=config.jobs) as executor:
            results = list(executor.map(_run_task, tasks))
    else:
        results = [_run_task(task) for task in tasks]

    built_instances = [result.instance for result in results]
    samples = [sample for result in results for sample in result.samples]
    failures = [failure for result in results for failure in result.failures]
    manifest = Manifest(
        global_seed=global_seed,
        build_config=config,
        instances_root=relative_root,
        instances=built_instances,
        samples=samples,
        composition=compute_composition(built_instances, samples),
        failures=failures,
    )
    write_manifest(manifest, out_dir)
    logger.info(
        "benchmark built",
        extra={"fields": {"instances": len(built_instances), "samples": len(samples), "failures": len(failures)}},
    )
    return manifest


def render_masked_frames(manifest: Manifest, manifest_root: Path | str, out_dir: Path | str) -> int:
    """Write the masked frame of every sample whose instance lists frame images."""
    instances = {instance.instance_id: instance for instance in manifest.instances}
    rendered = 0
    for sample in manifest.samples:
        instance = instances[sample.instance_id]
        if not instance.frame_paths or instance.frame_paths[sample.frame_index] is None:
            continue
        frame = load_frame(resolve(instances_dir(manifest, manifest_root), instance.frame_paths[sample.frame_index]))
        mask = load_mask(resolve(manifest_root, sample.mask_path))
        store_frame(render_masked_frame(frame, mask), resolve(out_dir, sample.mask_path))
        rendered += 1
    logger.info("masked frames rendered", extra={"fields": {"count": rendered}})
    return rendered
