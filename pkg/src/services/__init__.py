"""Services package for benchmark synthesis, verification and evaluation."""

from .auditors import ConstantAuditor, NoisyOracleAuditor, OracleAuditor
from .dataset_builder import build_benchmark
from .evaluator import evaluate_manifest
from .perturbation import MaskPerturber
from .refiner import refine_loop
from .storage import EvaluationStore, ManifestStore
from .verifier import verify_manifest

__all__ = [
    "ConstantAuditor",
    "EvaluationStore",
    "ManifestStore",
    "MaskPerturber",
    "NoisyOracleAuditor",
    "OracleAuditor",
    "build_benchmark",
    "evaluate_manifest",
    "refine_loop",
    "verify_manifest",
]
