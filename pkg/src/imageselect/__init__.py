"""Catalog image selection: perceptual descriptors, near-duplicate removal,
quality gating, type-aware ordering, threshold calibration and effect estimation."""

from __future__ import annotations

__version__ = "0.1.0"

from .comparator import ComparatorConfig, ComparatorReport, compare
from .descriptor import BitHash64, ImageDescriptor, compute_descriptor, decode_image
from .imagetypes import CategoryProfile, ImageType, TypeClassifierModel, train_centroid_classifier
from .quality import QualityConfig, quality_gate
from .selection import CategoryEntry, Item, PipelineDeps, SelectionResult, run_pipeline

__all__ = [
    "__version__", "ComparatorConfig", "ComparatorReport", "compare", "BitHash64", "ImageDescriptor",
    "compute_descriptor", "decode_image", "CategoryProfile", "ImageType", "TypeClassifierModel",
    "train_centroid_classifier", "QualityConfig", "quality_gate", "CategoryEntry", "Item", "PipelineDeps",
    "SelectionResult", "run_pipeline",
]
