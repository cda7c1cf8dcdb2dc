"""Micro-calcification detection in mammograms.

Pixel cascade over Haar windows, candidate classification with a
boosted ensemble over shape, texture and Haar features, proximity
clustering, and FROC / ROC evaluation.
"""

from .boosting import CascadeModel, TrainingError, train_cascade, train_single_stage
from .data import Annotation, AnnotationSet, DataError, Mammogram
from .phantom import PhantomDatasetSpec, PhantomSpec, generate_phantom_dataset
from .pipeline import (
    CandidateDetection,
    classify_candidates,
    cluster_candidates,
    detect_candidates,
    score_candidates,
)
from .preprocess import NoiseModel, preprocess

__version__ = "0.1.0"

__all__ = [
    "Annotation",
    "AnnotationSet",
    "CandidateDetection",
    "CascadeModel",
    "DataError",
    "Mammogram",
    "NoiseModel",
    "PhantomDatasetSpec",
    "PhantomSpec",
    "TrainingError",
    "classify_candidates",
    "cluster_candidates",
    "detect_candidates",
    "generate_phantom_dataset",
    "preprocess",
    "score_candidates",
    "train_cascade",
    "train_single_stage",
]
