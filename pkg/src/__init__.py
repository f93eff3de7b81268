"""
Defect triage: weakly supervised, augmented and rebalanced training data for
multi-label team classifiers built on a from-scratch transformer encoder.
"""
from .config import AugmentConfig, HeadKind, PipelineConfig, Precision, Stage, TrainingConfig, Variant
from .corpus import Dataset, Defect, DatasetError, Provenance, TeamLabelRegistry

__version__ = "1.0.0"

__all__ = [
    "AugmentConfig",
    "Dataset",
    "DatasetError",
    "Defect",
    "HeadKind",
    "PipelineConfig",
    "Precision",
    "Provenance",
    "Stage",
    "TeamLabelRegistry",
    "TrainingConfig",
    "Variant",
]
