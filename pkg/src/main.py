"""FastAPI application serving the audit grammar and the benchmark evaluator."""

import os
import uuid
from contextlib import asynccontextmanager
from pathlib import Path
from typing import AsyncIterator, Literal

from fastapi import FastAPI, HTTPException, Response, status

from errors import MaskAuditError
from models import (
    AuditPrediction,
    Evaluation,
    EvaluationOptions,
    EvaluationRequest,
    Manifest,
    ParseRequest,
    SampleRecord,
    SerializeRequest,
    SerializeResponse,
)
from services.audit_parser import parse_audit, serialize_audit
from services.evaluator import evaluate_manifest, report_tables
from services.storage import evaluation_store, manifest_store

MANIFEST_ENV_VAR = "MASKAUDIT_MANIFEST"


def load_service_manifest(path: Path | str) -> Manifest:
    """Load the manifest every request is scored against."""
    return manifest_store.load(path)


@asynccontextmanager
async def lifespan(_: FastAPI) -> AsyncIterator[None]:
    path = os.environ.get(MANIFEST_ENV_VAR)
    if path and manifest_store.get() is None:
        load_service_manifest(path)
    yield


app = FastAPI(
    title="Mask Audit Service",
    description="Scores mask-quality audits against a built benchmark manifest",
    version="0.1.0",
    lifespan=lifespan,
)


def _require_manifest() -> Manifest:
    manifest = manifest_store.get()
    if manifest is None:
        raise HTTPException(
            status_code=status.HTTP_503_SERVICE_UNAVAILABLE,
            detail="No manifest loaded",
        )
    return manifest


@app.post("/audits/parse", response_model=AuditPrediction)
def parse(request: ParseRequest) -> AuditPrediction:
    """Parse raw auditor text; malformed text comes back with status ``failed``."""
    return parse_audit(request.text)


@app.post("/audits/serialize", response_model=SerializeResponse)
def serialize(request: SerializeRequest) -> SerializeResponse:
    text = serialize_audit(
        request.iou,
        request.mask_type,
        request.action,
        reasoning=request.reasoning,
        target=request.target,
        negative=request.negative,
    )
    return SerializeResponse(text=text)


@app.get("/samples/{sample_id}", response_model=SampleRecord)
def get_sample(sample_id: str) -> SampleRecord:
    """Retrieve one sample record of the loaded manifest."""
    manifest = _require_manifest()
    for sample in manifest.samples:
        if sample.sample_id == sample_id:
            return sample
    raise HTTPException(
        status_code=status.HTTP_404_NOT_FOUND,
        detail=f"Sample {sample_id} not found",
    )


@app.post(
    "/evaluations",
    response_model=Evaluation,
    status_code=status.HTTP_201_CREATED,
)
def create_evaluation(request: EvaluationRequest) -> Evaluation:
    """Score a batch of predictions against the loaded manifest.

    Every sample of the requested protocol needs exactly one prediction;
    otherwise the request is rejected with 422.
    """
    manifest = _require_manifest()
    options = EvaluationOptions(
        protocol=request.protocol,
        subset_precision=request.subset_precision,
        strict_parse=request.strict_parse,
    )
    try:
        report = evaluate_manifest(manifest, request.predictions, options)
    except MaskAuditError as exc:
        raise HTTPException(
            status_code=status.HTTP_422_UNPROCESSABLE_ENTITY,
            detail=str(exc),
        ) from exc
    evaluation = Evaluation(
        evaluation_id=str(uuid.uuid4()),
        prediction_count=len(request.predictions),
        report=report,
    )
    evaluation_store.add(evaluation)
    return evaluation


@app.get("/evaluations", response_model=list[Evaluation])
def list_evaluations() -> list[Evaluation]:
    """List all evaluations in insertion order."""
    return evaluation_store.get_all()


def _get_evaluation(evaluation_id: str) -> Evaluation:
    evaluation = evaluation_store.get(evaluation_id)
    if not evaluation:
        raise HTTPException(
            status_code=status.HTTP_404_NOT_FOUND,
            detail=f"Evaluation {evaluation_id} not found",
        )
    return evaluation


@app.get("/evaluations/{evaluation_id}", response_model=Evaluation)
def get_evaluation(evaluation_id: str) -> Evaluation:
    return _get_evaluation(evaluation_id)


@app.get("/evaluations/{evaluation_id}/table")
def get_evaluation_table(evaluation_id: str, format: Literal["markdown", "json"] = "markdown") -> Response:
    """Result tables of one evaluation, rounded for display."""
    evaluation = _get_evaluation(evaluation_id)
    media_type = "application/json" if format == "json" else "text/markdown"
    return Response(content=report_tables(evaluation.report, format), media_type=media_type)


@app.delete("/evaluations/{evaluation_id}", status_code=status.HTTP_204_NO_CONTENT)
def delete_evaluation(evaluation_id: str) -> None:
    """Delete an evaluation by ID."""
    if not evaluation_store.delete(evaluation_id):
        raise HTTPException(
            status_code=status.HTTP_404_NOT_FOUND,
            detail=f"Evaluation {evaluation_id} not found",
        )


if __name__ == "__main__":
    import uvicorn

    uvicorn.run(app, host="0.0.0.0", port=8000)
