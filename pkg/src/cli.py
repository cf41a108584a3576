"""Command-line entry point: build, verify, evaluate, baseline, refine, render, serve."""

import argparse
import json
import logging
import shlex
import sys
from pathlib import Path
from typing import Sequence

from pydantic import ValidationError

from errors import MaskAuditError
from log import configure_logging
from models import BuildConfig, EvaluationOptions, IoUTarget, MaskType, Protocol
from services.auditors import (
    CommandAuditor,
    CommandRegenerator,
    ConstantAuditor,
    NoisyOracleAuditor,
    OracleAuditor,
    run_auditor,
)
from services.dataset_builder import build_benchmark, render_masked_frames
from services.evaluator import evaluate_manifest, report_tables
from services.refiner import DEFAULT_TRIGGER_TYPES, refine_loop
from services.storage import MANIFEST_NAME, dump_canonical, read_instances, read_manifest, read_predictions, write_predictions
from services.verifier import verify_manifest

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_FAILED = 1
EXIT_INPUT_ERROR = 2

_PROTOCOL_CHOICES = {
    "image": [Protocol.IMAGE_BASED],
    "video": [Protocol.VIDEO_BASED],
    "both": [Protocol.IMAGE_BASED, Protocol.VIDEO_BASED],
}
BASELINE_KINDS = ("oracle", "noisy", "accept", "reject", "always_accept", "always_reject", "command")


def _float_pair(text: str) -> tuple[float, float]:
    parts = text.split(",")
    if len(parts) != 2:
        raise argparse.ArgumentTypeError(f"expected two comma-separated numbers, got {text!r}")
    try:
        return float(parts[0]), float(parts[1])
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from exc


def _manifest_root(path: Path) -> Path:
    return path if path.is_dir() else path.parent


def _build_config(args: argparse.Namespace) -> BuildConfig:
    overrides: dict = {"protocols": _PROTOCOL_CHOICES[args.protocol], "jobs": args.jobs, "output_dir": str(args.out)}
    if args.hard_range:
        overrides["hard_range"] = IoUTarget(lo=args.hard_range[0], hi=args.hard_range[1])
    if args.medium_range:
        overrides["medium_range"] = IoUTarget(lo=args.medium_range[0], hi=args.medium_range[1])
    if args.merge_thresholds:
        overrides["merge_minor_threshold"], overrides["merge_major_threshold"] = args.merge_thresholds
    if args.max_neg is not None:
        overrides["max_negatives"] = args.max_neg
    return BuildConfig(**overrides)


def cmd_build(args: argparse.Namespace) -> int:
    config = _build_config(args)
    instances = read_instances(args.instances)
    manifest = build_benchmark(
        instances.instances, config, args.seed, args.out, instances_root=Path(args.instances).parent
    )
    print(dump_canonical(manifest.composition.model_dump(mode="json")), end="")
    return EXIT_OK


def cmd_verify(args: argparse.Namespace) -> int:
    manifest = read_manifest(args.manifest)
    report = verify_manifest(manifest, _manifest_root(args.manifest))
    print(dump_canonical(report.model_dump(mode="json")), end="")
    return EXIT_OK if report.ok else EXIT_FAILED


def cmd_evaluate(args: argparse.Namespace) -> int:
    manifest = read_manifest(args.manifest)
    predictions, skipped = read_predictions(args.predictions)
    if skipped:
        logger.warning("prediction lines skipped", extra={"fields": {"count": skipped}})
    options = EvaluationOptions(
        protocol=Protocol.VIDEO_BASED if args.protocol == "video" else Protocol.IMAGE_BASED,
        subset_precision=args.subset_precision,
        strict_parse=args.strict_parse,
    )
    report = evaluate_manifest(manifest, predictions, options)
    out = Path(args.out) if args.out else Path(args.predictions).parent
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.json").write_text(dump_canonical(report.model_dump(mode="json")), encoding="utf-8")
    tables = report_tables(report, "markdown")
    (out / "report.md").write_text(tables, encoding="utf-8")
    print(tables, end="")
    return EXIT_OK


def _auditor(args: argparse.Namespace):
    match args.kind:
        case "oracle":
            return OracleAuditor()
        case "noisy":
            type_flip = args.type_flip_prob if args.type_flip_prob is not None else args.flip_prob
            action_flip = args.action_flip_prob if args.action_flip_prob is not None else args.flip_prob
            return NoisyOracleAuditor(args.iou_sigma, type_flip, action_flip, seed=args.seed)
        case "accept" | "reject" | "always_accept" | "always_reject":
            return ConstantAuditor(args.kind)
        case "command":
            if not args.audit_cmd:
                raise MaskAuditError("--kind command needs --audit-cmd")
            return CommandAuditor(shlex.split(args.audit_cmd))
    raise MaskAuditError(f"unknown baseline kind {args.kind!r}")


def cmd_baseline(args: argparse.Namespace) -> int:
    manifest = read_manifest(args.manifest)
    records = run_auditor(manifest, _manifest_root(args.manifest), _auditor(args))
    write_predictions(records, args.out)
    logger.info("baseline predictions written", extra={"fields": {"kind": args.kind, "count": len(records)}})
    return EXIT_OK


def cmd_refine(args: argparse.Namespace) -> int:
    manifest = read_manifest(args.manifest)
    predictions, _ = read_predictions(args.predictions)
    root = _manifest_root(args.manifest)
    out = Path(args.out) if args.out else root
    auditor = CommandAuditor(shlex.split(args.audit_cmd)) if args.audit_cmd else None
    trigger_types = [MaskType(value) for value in args.trigger] if args.trigger else DEFAULT_TRIGGER_TYPES
    report = refine_loop(
        manifest,
        root,
        predictions,
        CommandRegenerator(shlex.split(args.regen_cmd)),
        trigger_types=trigger_types,
        include_reject=args.include_reject,
        iterations=args.iterations,
        auditor=auditor,
        out_dir=out,
    )
    text = dump_canonical(report.model_dump(mode="json"))
    out.mkdir(parents=True, exist_ok=True)
    (out / "refine_report.json").write_text(text, encoding="utf-8")
    print(text, end="")
    return EXIT_OK


def cmd_render(args: argparse.Namespace) -> int:
    manifest = read_manifest(args.manifest)
    count = render_masked_frames(manifest, _manifest_root(args.manifest), args.out)
    print(json.dumps({"rendered": count}))
    return EXIT_OK


def cmd_serve(args: argparse.Namespace) -> int:
    import uvicorn

    from main import app, load_service_manifest

    load_service_manifest(args.manifest)
    uvicorn.run(app, host=args.host, port=args.port)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="maskaudit", description="Mask quality assessment benchmark toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    build = sub.add_parser("build", help="generate benchmark masks and manifest")
    build.add_argument("--instances", type=Path, required=True, help="instances JSON file")
    build.add_argument("--out", type=Path, required=True, help="output directory")
    build.add_argument("--seed", type=int, default=0)
    build.add_argument("--protocol", choices=sorted(_PROTOCOL_CHOICES), default="image")
    build.add_argument("--jobs", type=int, default=1)
    build.add_argument("--hard-range", type=_float_pair, help="lo,hi of the hard IoU interval")
    build.add_argument("--medium-range", type=_float_pair, help="lo,hi of the medium IoU interval")
    build.add_argument("--merge-thresholds", type=_float_pair, help="minor,major merge IoU thresholds")
    build.add_argument("--max-neg", type=int)
    build.set_defaults(handler=cmd_build)

    verify = sub.add_parser("verify", help="re-check a built benchmark")
    verify.add_argument("manifest", type=Path)
    verify.set_defaults(handler=cmd_verify)

    evaluate = sub.add_parser("evaluate", help="score predictions against a manifest")
    evaluate.add_argument("manifest", type=Path)
    evaluate.add_argument("predictions", type=Path)
    evaluate.add_argument("--protocol", choices=("image", "video"), default="image")
    evaluate.add_argument("--subset-precision", action="store_true")
    evaluate.add_argument("--strict-parse", action="store_true")
    evaluate.add_argument("--out", type=Path, help="report directory (default: next to predictions)")
    evaluate.set_defaults(handler=cmd_evaluate)

    baseline = sub.add_parser("baseline", help="write predictions of a built-in auditor")
    baseline.add_argument("manifest", type=Path)
    baseline.add_argument("--kind", choices=BASELINE_KINDS, required=True)
    baseline.add_argument("--iou-sigma", type=float, default=0.0)
    baseline.add_argument("--flip-prob", type=float, default=0.0, help="label flip probability for type and action")
    baseline.add_argument("--type-flip-prob", type=float)
    baseline.add_argument("--action-flip-prob", type=float)
    baseline.add_argument("--seed", type=int, default=0)
    baseline.add_argument("--audit-cmd", help="external auditor command for --kind command")
    baseline.add_argument("--out", type=Path, required=True)
    baseline.set_defaults(handler=cmd_baseline)

    refine = sub.add_parser("refine", help="regenerate flagged masks and report J and F")
    refine.add_argument("manifest", type=Path)
    refine.add_argument("predictions", type=Path)
    refine.add_argument("--regen-cmd", required=True, help="external segmenter command")
    refine.add_argument("--audit-cmd", help="external auditor used to re-audit between iterations")
    refine.add_argument("--iterations", type=int, default=1)
    refine.add_argument("--trigger", action="append", choices=[t.value for t in MaskType])
    refine.add_argument("--include-reject", action="store_true")
    refine.add_argument("--out", type=Path)
    refine.set_defaults(handler=cmd_refine)

    render = sub.add_parser("render", help="write masked frames for samples with frame images")
    render.add_argument("manifest", type=Path)
    render.add_argument("--out", type=Path, required=True)
    render.set_defaults(handler=cmd_render)

    serve = sub.add_parser("serve", help="start the HTTP evaluation service")
    serve.add_argument("--manifest", type=Path, default=Path(MANIFEST_NAME))
    serve.add_argument("--host", default="127.0.0.1")
    serve.add_argument("--port", type=int, default=8000)
    serve.set_defaults(handler=cmd_serve)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    configure_logging()
    args = build_parser().parse_args(argv)
    try:
        return args.handler(args)
    except (MaskAuditError, ValidationError, ValueError) as exc:
        logger.error("command failed", extra={"fields": {"command": args.command, "reason": str(exc)}})
        return EXIT_INPUT_ERROR


if __name__ == "__main__":
    sys.exit(main())
