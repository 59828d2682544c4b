"""Garment detection dataset cleaning, proposal labeling and evaluation."""

from .annotations import (
    ATTRIBUTE_TYPES,
    AttributeRemap,
    AttributeVocabulary,
    CategoryVocabulary,
    CleaningConfig,
    Dataset,
    GroundTruthObject,
    ImageRecord,
    RemovalLog,
    clean_attributes,
    clean_boxes,
    load_cleaning_config,
    load_dataset,
    remap_groundtruth,
)
from .errors import ValidationError
from .evaluate import ProtocolConfig, evaluate_detections
from .geometry import Box, area_fraction, aspect_ratio, ioa, iou
from .metrics import (
    AttributePR,
    CorLocResult,
    MatchOutcome,
    attribute_pr,
    average_precision,
    corloc,
    match_detections,
    per_class_ap,
    weighted_map,
)
from .postprocess import (
    Detection,
    DetectionSet,
    filter_by_score,
    merge_attributes,
    top_k,
)
from .proposals import (
    AssignmentConfig,
    Proposal,
    ProposalLabel,
    PruningConfig,
    assign_labels,
    generate_anchor_grid,
    prune,
)
from .report import EvaluationReport, ReportRow, read_report, render_text, write_report
from .simulate import SyntheticNoiseSpec, simulate_detections

__version__ = "0.1.0"

__all__ = [
    "ATTRIBUTE_TYPES",
    "AssignmentConfig",
    "AttributePR",
    "AttributeRemap",
    "AttributeVocabulary",
    "Box",
    "CategoryVocabulary",
    "CleaningConfig",
    "CorLocResult",
    "Dataset",
    "Detection",
    "DetectionSet",
    "EvaluationReport",
    "GroundTruthObject",
    "ImageRecord",
    "MatchOutcome",
    "Proposal",
    "ProposalLabel",
    "ProtocolConfig",
    "PruningConfig",
    "RemovalLog",
    "ReportRow",
    "SyntheticNoiseSpec",
    "ValidationError",
    "area_fraction",
    "aspect_ratio",
    "assign_labels",
    "attribute_pr",
    "average_precision",
    "clean_attributes",
    "clean_boxes",
    "corloc",
    "evaluate_detections",
    "filter_by_score",
    "generate_anchor_grid",
    "ioa",
    "iou",
    "load_cleaning_config",
    "load_dataset",
    "match_detections",
    "merge_attributes",
    "per_class_ap",
    "prune",
    "read_report",
    "remap_groundtruth",
    "render_text",
    "simulate_detections",
    "top_k",
    "weighted_map",
    "write_report",
]
