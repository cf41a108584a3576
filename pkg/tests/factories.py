"""Mask and benchmark factories shared by the test modules."""

import json
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from masks import BinaryMask
from models import Action, AuditPrediction, Difficulty, MaskType, ParseStatus, QualityLabel
from services.mask_io import store_mask

CANVAS = 96


def square(size: int, x: int = 0, y: int = 0, width: int = 32, height: int = 32) -> BinaryMask:
    return rect(x, y, x + size - 1, y + size - 1, width, height)


def rect(x0: int, y0: int, x1: int, y1: int, width: int = CANVAS, height: int = CANVAS) -> BinaryMask:
    """Filled rectangle with inclusive corners."""
    bits = np.zeros((height, width), dtype=bool)
    bits[y0:y1 + 1, x0:x1 + 1] = True
    return BinaryMask(bits)


def disk(cx: int, cy: int, radius: float, width: int = CANVAS, height: int = CANVAS) -> BinaryMask:
    ys, xs = np.mgrid[0:height, 0:width]
    return BinaryMask((xs - cx) ** 2 + (ys - cy) ** 2 <= radius * radius)


def label(
    mask_type: MaskType,
    iou: float,
    action: Action,
    difficulty: Difficulty = Difficulty.NA,
) -> QualityLabel:
    return QualityLabel(iou=iou, mask_type=mask_type, action=action, difficulty=difficulty)


def prediction(
    iou: Optional[float], mask_type: Optional[MaskType], action: Optional[Action], status: ParseStatus = ParseStatus.CLEAN
) -> AuditPrediction:
    return AuditPrediction(iou=iou, mask_type=mask_type, action=action, parse_status=status)


# Negatives sit right of x=60; ground-truth disks never reach past x=48.
NEGATIVE_BOXES = {
    "neg-a": (60, 10, 71, 21),
    "neg-b": (60, 40, 75, 55),
    "neg-c": (70, 75, 79, 84),
}


def write_instances(
    root: Path,
    instance_ids: Sequence[str] = ("inst-0", "inst-1"),
    frame_count: int = 1,
    negatives: Sequence[str] = tuple(NEGATIVE_BOXES),
    splits: Optional[Sequence[str]] = None,
    categories: Optional[Sequence[str]] = None,
) -> Path:
    """Write gt and negative PNGs plus ``instances.json``; returns the instances file."""
    root.mkdir(parents=True, exist_ok=True)
    records = []
    for index, instance_id in enumerate(instance_ids):
        gt_paths = []
        for t in range(frame_count):
            path = f"gt/{instance_id}/f{t:03d}.png"
            store_mask(disk(30 + 2 * t, 48, 14 - index), root / path)
            gt_paths.append(path)
        refs = []
        for negative_id in negatives:
            paths = []
            for t in range(frame_count):
                path = f"neg/{instance_id}/{negative_id}/f{t:03d}.png"
                store_mask(rect(*NEGATIVE_BOXES[negative_id]), root / path)
                paths.append(path)
            refs.append({"negative_id": negative_id, "mask_paths": paths})
        records.append(
            {
                "instance_id": instance_id,
                "video_id": f"video-{index}",
                "reference_text": f"the ball number {index}",
                "object_category": categories[index] if categories else "ball",
                "split": splits[index] if splits else "train",
                "frame_count": frame_count,
                "gt_mask_paths": gt_paths,
                "negatives": refs,
            }
        )
    path = root / "instances.json"
    path.write_text(json.dumps({"instances": records}, indent=2), encoding="utf-8")
    return path


# A 64x32 canvas: the disk stays left of x=38 on every frame, negatives start at x=44.
POPULATION_SIZE = (64, 32)
POPULATION_NEGATIVES = {
    "neg-a": (44, 2, 53, 11),
    "neg-b": (44, 20, 53, 29),
    "neg-c": (56, 8, 62, 20),
}


def write_population(root: Path, negative_counts: Sequence[int], frame_count: int = 1) -> Path:
    """Many instances sharing one set of mask files; instance i gets ``negative_counts[i]`` negatives."""
    width, height = POPULATION_SIZE
    root.mkdir(parents=True, exist_ok=True)
    gt_paths = []
    for t in range(frame_count):
        path = f"gt/f{t:03d}.png"
        store_mask(disk(16 + t, 16, 12, width, height), root / path)
        gt_paths.append(path)
    negative_paths = {}
    for negative_id, box in POPULATION_NEGATIVES.items():
        path = f"neg/{negative_id}.png"
        store_mask(rect(*box, width, height), root / path)
        negative_paths[negative_id] = [path] * frame_count
    records = [
        {
            "instance_id": f"inst-{index:04d}",
            "video_id": f"video-{index:04d}",
            "reference_text": f"the ball number {index}",
            "object_category": "ball",
            "split": "train",
            "frame_count": frame_count,
            "gt_mask_paths": gt_paths,
            "negatives": [
                {"negative_id": negative_id, "mask_paths": negative_paths[negative_id]}
                for negative_id in list(POPULATION_NEGATIVES)[:count]
            ],
        }
        for index, count in enumerate(negative_counts)
    ]
    path = root / "instances.json"
    path.write_text(json.dumps({"instances": records}), encoding="utf-8")
    return path
