"""Catalog, labeling, and link-analysis toolkit for handwritten tusk markings.

The pipeline turns raw detector output over seizure photographs into a
curated marking catalog, propagates human group labels through
embedding-space classifiers, orchestrates a vision-language annotation
protocol, and reports cross-seizure links via shared signature
markings.
"""

from .analysis import (
    LinkReport,
    SignatureGroup,
    build_signature_index,
    cross_seizure_links,
    find_xo_sequences,
    frequency_stats,
    normalize_key,
    search_descriptions,
)
from .annotate import AnnotationResult, Annotator, ScriptedBackend, annotate_batch
from .catalog import (
    Catalog,
    ImageRecord,
    LabelAssignment,
    LogicalClock,
    Marking,
    MarkingFilter,
    ReviewTask,
    marking_id_for,
)
from .config import PipelineConfig, Thresholds, load_config
from .detection_eval import EvalResult, evaluate, evaluate_corpus
from .geometry import (
    BoundingBox,
    Detection,
    area,
    dedup,
    iou,
    merge_fragments,
    postprocess,
    suppress_exteriors,
    union_coverage,
)
from .metrics import RatingMatrix, cer, corpus_cer, krippendorff_alpha, sample_precision
from .propagation import (
    EmbeddingSet,
    LabelModel,
    Projection,
    eligible_labels,
    fit_projection,
    project,
    propagate,
    train_label_models,
)

__version__ = "0.1.0"

__all__ = [
    "AnnotationResult",
    "Annotator",
    "BoundingBox",
    "Catalog",
    "Detection",
    "EmbeddingSet",
    "EvalResult",
    "ImageRecord",
    "LabelAssignment",
    "LabelModel",
    "LinkReport",
    "LogicalClock",
    "Marking",
    "MarkingFilter",
    "PipelineConfig",
    "Projection",
    "RatingMatrix",
    "ReviewTask",
    "ScriptedBackend",
    "SignatureGroup",
    "Thresholds",
    "annotate_batch",
    "area",
    "build_signature_index",
    "cer",
    "corpus_cer",
    "cross_seizure_links",
    "dedup",
    "eligible_labels",
    "evaluate",
    "evaluate_corpus",
    "find_xo_sequences",
    "fit_projection",
    "frequency_stats",
    "iou",
    "krippendorff_alpha",
    "load_config",
    "marking_id_for",
    "merge_fragments",
    "normalize_key",
    "postprocess",
    "project",
    "propagate",
    "sample_precision",
    "search_descriptions",
    "suppress_exteriors",
    "train_label_models",
    "union_coverage",
]
