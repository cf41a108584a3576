"""Manifest, instances and predictions files, plus in-memory evaluation storage."""

import json
import logging
import re
from collections import OrderedDict
from pathlib import Path
from typing import Iterable, Optional

from pydantic import ValidationError

from errors import ManifestError
from models import Evaluation, InstancesFile, Manifest, PredictionRecord

logger = logging.getLogger(__name__)

MANIFEST_NAME = "manifest.json"

_SAMPLE_ID_PATTERN = re.compile(r'"sample_id"\s*:\s*"([^"]+)"')


def dump_canonical(payload: object) -> str:
    """Canonical JSON text: sorted keys, two-space indent, trailing newline."""
    return json.dumps(payload, sort_keys=True, indent=2, ensure_ascii=False) + "\n"


def manifest_to_text(manifest: Manifest) -> str:
    return dump_canonical(manifest.model_dump(mode="json"))


def write_manifest(manifest: Manifest, path: Path | str) -> Path:
    """Write ``manifest.json``; ``path`` may be the file or its directory."""
    path = Path(path)
    if path.is_dir() or path.suffix != ".json":
        path = path / MANIFEST_NAME
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(manifest_to_text(manifest), encoding="utf-8")
    return path


def read_manifest(path: Path | str) -> Manifest:
    path = Path(path)
    if path.is_dir():
        path = path / MANIFEST_NAME
    try:
        return Manifest.model_validate_json(path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise ManifestError(f"cannot read manifest {path}: {exc}") from exc
    except ValidationError as exc:
        raise ManifestError(f"malformed manifest {path}: {exc}") from exc


def read_instances(path: Path | str) -> InstancesFile:
    path = Path(path)
    try:
        return InstancesFile.model_validate_json(path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise ManifestError(f"cannot read instances file {path}: {exc}") from exc
    except ValidationError as exc:
        raise ManifestError(f"malformed instances file {path}: {exc}") from exc


def write_predictions(records: Iterable[PredictionRecord], path: Path | str) -> Path:
    """JSON lines in sample-id order, sorted keys, unset fields omitted."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = [
        json.dumps(record.model_dump(mode="json", exclude_none=True), sort_keys=True, ensure_ascii=False)
        for record in sorted(records, key=lambda r: r.sample_id)
    ]
    path.write_text("".join(line + "\n" for line in lines), encoding="utf-8")
    return path


def read_predictions(path: Path | str) -> tuple[list[PredictionRecord], int]:
    """Parse a predictions file.

    Lines that are not valid records become raw-text-only records (scored as
    failed parses) when a sample id can still be found; otherwise they are
    skipped. Returns the records and the number of skipped lines.
    """
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ManifestError(f"cannot read predictions {path}: {exc}") from exc

    records: list[PredictionRecord] = []
    skipped = 0
    for line_number, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            records.append(PredictionRecord.model_validate_json(line))
            continue
        except ValidationError:
            pass
        match = _SAMPLE_ID_PATTERN.search(line)
        if match:
            logger.warning(
                "malformed prediction line scored as failed parse",
                extra={"fields": {"line": line_number, "sample_id": match.group(1)}},
            )
            records.append(PredictionRecord(sample_id=match.group(1), raw_text=""))
        else:
            logger.warning("unattributable prediction line skipped", extra={"fields": {"line": line_number}})
            skipped += 1
    return records, skipped


class EvaluationStore:
    """In-memory storage for evaluations served over HTTP.

    Uses OrderedDict to keep insertion order for listing.
    """

    def __init__(self) -> None:
        self._evaluations: OrderedDict[str, Evaluation] = OrderedDict()

    def add(self, evaluation: Evaluation) -> None:
        """Add or replace an evaluation."""
        self._evaluations[evaluation.evaluation_id] = evaluation

    def get(self, evaluation_id: str) -> Optional[Evaluation]:
        return self._evaluations.get(evaluation_id)

    def get_all(self) -> list[Evaluation]:
        """All evaluations in insertion order."""
        return list(self._evaluations.values())

    def delete(self, evaluation_id: str) -> bool:
        """Delete an evaluation by ID. Returns True if deleted."""
        if evaluation_id in self._evaluations:
            del self._evaluations[evaluation_id]
            return True
        return False

    def clear(self) -> None:
        self._evaluations.clear()


class ManifestStore:
    """Holds the manifest the HTTP service scores against."""

    def __init__(self) -> None:
        self._manifest: Optional[Manifest] = None
        self._root: Optional[Path] = None

    def load(self, path: Path | str) -> Manifest:
        path = Path(path)
        self._manifest = read_manifest(path)
        self._root = path if path.is_dir() else path.parent
        return self._manifest

    def set(self, manifest: Manifest, root: Path | str) -> None:
        self._manifest = manifest
        self._root = Path(root)

    def get(self) -> Optional[Manifest]:
        return self._manifest

    @property
    def root(self) -> Optional[Path]:
        return self._root

    def clear(self) -> None:
        self._manifest = None
        self._root = None


# Global store instances
evaluation_store = EvaluationStore()
manifest_store = ManifestStore()
