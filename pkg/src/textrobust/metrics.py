"""Error rates, relative error difference, F1, confidence splits and histograms.

Predictions are passed as integer class indices (plus confidences where
needed) so the same functions serve single models and ensembles.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .corpus import TaskSchema
from .errors import UndefinedBaselineError

DEFAULT_THRESHOLD = 0.90
DEFAULT_BINS = 20


def _as_index_arrays(predictions, labels) -> tuple[np.ndarray, np.ndarray]:
    p = np.asarray(predictions, dtype=np.int64).reshape(-1)
    y = np.asarray(labels, dtype=np.int64).reshape(-1)
    if p.shape != y.shape:
        raise ValueError(f"predictions ({p.size}) and labels ({y.size}) differ in length")
    return p, y


def error_rate(predictions, labels) -> float:
    p, y = _as_index_arrays(predictions, labels)
    if p.size == 0:
        raise ValueError("error rate of an empty prediction set is undefined")
    return int(np.count_nonzero(p != y)) / p.size


def relative_difference(err_perturbed: float, err_clean: float) -> float:
    """``(err_perturbed - err_clean) / err_clean``; positive means more errors under attack."""
    if err_clean <= 0:
        raise UndefinedBaselineError("relative difference is undefined for a zero clean error rate")
    return (err_perturbed - err_clean) / err_clean


def confusion_matrix(predictions, labels, n_classes: int) -> np.ndarray:
    """Counts with rows = true class, columns = predicted class."""
    p, y = _as_index_arrays(predictions, labels)
    if p.size and (p.min() < 0 or y.min() < 0 or p.max() >= n_classes or y.max() >= n_classes):
        raise ValueError("class index out of range")
    return kernels.confusion_counts(y, p, n_classes)


@dataclass(frozen=True)
class F1Scores:
    precision: tuple[float, ...]
    recall: tuple[float, ...]
    per_class_f1: tuple[float, ...]
    macro_f1: float


def f1_from_confusion(cm: np.ndarray) -> F1Scores:
    tp = np.diag(cm).astype(np.float64)
    pred_tot = cm.sum(axis=0).astype(np.float64)
    true_tot = cm.sum(axis=1).astype(np.float64)
    precision = np.divide(tp, pred_tot, out=np.zeros_like(tp), where=pred_tot > 0)
    recall = np.divide(tp, true_tot, out=np.zeros_like(tp), where=true_tot > 0)
    denom = precision + recall
    f1 = np.divide(2 * precision * recall, denom, out=np.zeros_like(tp), where=denom > 0)
    return F1Scores(tuple(precision.tolist()), tuple(recall.tolist()), tuple(f1.tolist()), float(f1.mean()))


def f1_scores(predictions, labels, schema: TaskSchema | int) -> F1Scores:
    """Per-class F1 and their unweighted mean over every schema class (0/0 -> 0)."""
    n_classes = schema if isinstance(schema, int) else schema.n_classes
    p, _ = _as_index_arrays(predictions, labels)
    if p.size == 0:
        raise ValueError("F1 of an empty prediction set is undefined")
    return f1_from_confusion(confusion_matrix(predictions, labels, n_classes))


@dataclass(frozen=True)
class ConfidenceSplit:
    high_conf_errors: int
    low_conf_errors: int
    high_conf_correct: int
    low_conf_correct: int

    @property
    def total(self) -> int:
        return self.high_conf_errors + self.low_conf_errors + self.high_conf_correct + self.low_conf_correct


def high_confidence_split(predictions, labels, confidences, threshold: float = DEFAULT_THRESHOLD) -> ConfidenceSplit:
    """Partition predictions by correctness and ``confidence > threshold``."""
    if not 0.0 < threshold < 1.0:
        raise ValueError("threshold must lie in (0, 1)")
    p, y = _as_index_arrays(predictions, labels)
    c = np.asarray(confidences, dtype=np.float64).reshape(-1)
    if c.shape != p.shape:
        raise ValueError("confidences and predictions differ in length")
    wrong = p != y
    high = c > threshold
    return ConfidenceSplit(
        high_conf_errors=int(np.count_nonzero(wrong & high)),
        low_conf_errors=int(np.count_nonzero(wrong & ~high)),
        high_conf_correct=int(np.count_nonzero(~wrong & high)),
        low_conf_correct=int(np.count_nonzero(~wrong & ~high)),
    )


def confidence_histogram(confidences, bins: int = DEFAULT_BINS) -> np.ndarray:
    """Counts over equal-width bins of [0, 1]; the last bin is closed on the right."""
    if bins < 2:
        raise ValueError("need at least two bins")
    c = np.asarray(confidences, dtype=np.float64).reshape(-1)
    if c.size and (c.min() < 0.0 or c.max() > 1.0):
        raise ValueError("confidences must lie in [0, 1]")
    return kernels.histogram_counts(c, bins)


def collapse_indices(indices, schema: TaskSchema) -> np.ndarray:
    return schema.binary_index_map()[np.asarray(indices, dtype=np.int64)]


@dataclass(frozen=True)
class ImpactScores:
    multiclass_f1: float
    binary_f1: float
    multiclass_error: float
    binary_error: float


def high_impact_scores(predictions, labels, schema: TaskSchema) -> ImpactScores:
    """Multiclass vs collapsed-binary macro F1, mapping both sides through the schema."""
    p, y = _as_index_arrays(predictions, labels)
    bschema = schema.binary_schema()
    bp, by = collapse_indices(p, schema), collapse_indices(y, schema)
    return ImpactScores(
        multiclass_f1=f1_scores(p, y, schema).macro_f1,
        binary_f1=f1_scores(bp, by, bschema).macro_f1,
        multiclass_error=error_rate(p, y),
        binary_error=error_rate(bp, by),
    )


def high_impact_compare(model, test, schema: TaskSchema, store) -> ImpactScores:
    """Evaluate ``model`` on a dataset for the multiclass task and its binary collapse.

    No retraining: the binary answer is the multiclass prediction mapped
    through the schema's collapse.
    """
    from .harness import predict_dataset

    labels, _ = predict_dataset(model, test, store)
    return high_impact_scores(labels, test.label_indices(), schema)
