"""Dual-layer factuality evaluation for procedural video captions."""

__version__ = "0.1.0"

from .facts import (
    ConceptualFact,
    ConceptualRole,
    ContextualFact,
    ContextualRelation,
    FactBundle,
    FactLayer,
    normalize_entity,
    parse_fact_list,
    render_conceptual,
    render_contextual,
)
from .dataset import Dataset, load_dataset, save_dataset, stats, validate
from .scoring import EvalMode, decompose_errors, grounding_eval, multifact_score
from .stats import LabelPairs, PairedScores, cohen_kappa, correlate
from .verification import (
    Evidence,
    EvidenceMode,
    VerdictLabel,
    assign_gold_label,
    classifier_metrics,
    per_video_accuracy,
    verify,
)

__all__ = [
    "__version__",
    "ConceptualFact",
    "ConceptualRole",
    "ContextualFact",
    "ContextualRelation",
    "FactBundle",
    "FactLayer",
    "normalize_entity",
    "parse_fact_list",
    "render_conceptual",
    "render_contextual",
    "Dataset",
    "load_dataset",
    "save_dataset",
    "stats",
    "validate",
    "EvalMode",
    "decompose_errors",
    "grounding_eval",
    "multifact_score",
    "LabelPairs",
    "PairedScores",
    "cohen_kappa",
    "correlate",
    "Evidence",
    "EvidenceMode",
    "VerdictLabel",
    "assign_gold_label",
    "classifier_metrics",
    "per_video_accuracy",
    "verify",
]
