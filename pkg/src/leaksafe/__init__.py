"""Leakage-safe experimentation: provenance-tracked datasets, audited pipelines
and synthetic reproductions of common evaluation pitfalls."""

from .dataset import Dataset, class_counts, derive_sample, load_dataset, write_dataset
from .metrics import Metrics, classification_metrics, dice, iou, wilcoxon_ranksum
from .splitting import AuditReport, audit_trace, group_split, nested_cv, stratified_split

__version__ = "0.1.0"

__all__ = [
    "AuditReport", "Dataset", "Metrics", "audit_trace", "class_counts", "classification_metrics",
    "derive_sample", "dice", "group_split", "iou", "load_dataset", "nested_cv", "stratified_split",
    "wilcoxon_ranksum", "write_dataset",
]
