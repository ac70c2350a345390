"""Metrics and model evaluation.

F1 conventions: precision = TP/(TP+FP), recall = TP/(TP+FN), and any division
by zero yields 0.0 rather than NaN. The binary score reports the positive
class only; the six-way score is the unweighted mean of per-class F1 values,
counting classes that never appear in predictions or golds as 0.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field

import numpy as np
import torch

from .data import CLASS_NAMES, NUM_CLASSES, LabeledImage, normalise


class LengthMismatch(ValueError):
    pass


class EmptyInput(ValueError):
    pass


def _as_int_array(values, name: str) -> np.ndarray:
    arr = np.asarray(values)
    if arr.size == 0:
        raise EmptyInput(f"{name} is empty")
    if arr.ndim != 1:
        raise ValueError(f"{name} must be one-dimensional, got shape {arr.shape}")
    if not np.issubdtype(arr.dtype, np.integer):
        if np.issubdtype(arr.dtype, np.floating) and np.allclose(arr, np.round(arr)):
            arr = arr.astype(np.int64)
        else:
            raise ValueError(f"{name} must contain integer labels")
    return arr.astype(np.int64)


def _checked_pair(preds, golds) -> tuple[np.ndarray, np.ndarray]:
    p = _as_int_array(preds, "preds")
    g = _as_int_array(golds, "golds")
    if len(p) != len(g):
        raise LengthMismatch(f"{len(p)} predictions vs {len(g)} golds")
    return p, g


def _f1_from_counts(tp: int, fp: int, fn: int) -> float:
    # Single correctly-rounded division of exact integer counts; identical
    # to 2PR/(P+R) wherever that is defined and 0.0 on zero division.
    denom = 2 * tp + fp + fn
    if denom == 0:
        return 0.0
    return 2 * tp / denom


def f1_binary(preds, golds, positive: int = 1) -> float:
    """F1 of the positive class for binary labels."""
    p, g = _checked_pair(preds, golds)
    tp = int(np.sum((p == positive) & (g == positive)))
    fp = int(np.sum((p == positive) & (g != positive)))
    fn = int(np.sum((p != positive) & (g == positive)))
    return _f1_from_counts(tp, fp, fn)


def per_class_f1(preds, golds, num_classes: int = NUM_CLASSES) -> np.ndarray:
    p, g = _checked_pair(preds, golds)
    if p.min() < 0 or g.min() < 0 or p.max() >= num_classes or g.max() >= num_classes:
        raise ValueError(f"labels must lie in [0, {num_classes})")
    scores = np.zeros(num_classes, dtype=np.float64)
    for cls in range(num_classes):
        tp = int(np.sum((p == cls) & (g == cls)))
        fp = int(np.sum((p == cls) & (g != cls)))
        fn = int(np.sum((p != cls) & (g == cls)))
        scores[cls] = _f1_from_counts(tp, fp, fn)
    return scores


def f1_macro(preds, golds, num_classes: int = NUM_CLASSES) -> tuple[float, np.ndarray]:
    """Unweighted mean of per-class F1 plus the per-class vector."""
    scores = per_class_f1(preds, golds, num_classes)
    return float(scores.mean()), scores


def f1_score(preds, golds, num_classes: int = NUM_CLASSES,
             average: str = "macro") -> float:
    """General multi-class F1 with a selectable averaging rule.

    "macro" matches f1_macro; "micro" computes a single F1 over pooled
    counts; "weighted" weights per-class scores by gold support.
    """
    p, g = _checked_pair(preds, golds)
    if average == "macro":
        return f1_macro(p, g, num_classes)[0]
    if average == "micro":
        tp = int(np.sum(p == g))
        # pooled FP and FN are both the count of misclassified samples
        wrong = int(np.sum(p != g))
        return _f1_from_counts(tp, wrong, wrong)
    if average == "weighted":
        scores = per_class_f1(p, g, num_classes)
        support = np.bincount(g, minlength=num_classes).astype(np.float64)
        if support.sum() == 0:
            return 0.0
        return float(np.sum(scores * support) / support.sum())
    raise ValueError(f"unknown average {average!r}")


def confusion_matrix(preds, golds, num_classes: int = NUM_CLASSES) -> np.ndarray:
    """Counts with gold labels as rows and predictions as columns."""
    p, g = _checked_pair(preds, golds)
    matrix = np.zeros((num_classes, num_classes), dtype=np.int64)
    np.add.at(matrix, (g, p), 1)
    return matrix


_CONVENTIONS = {
    "f1_zero_division": 0.0,
    "task_a_positive": "AI",
    "task_b_average": "macro",
    "argmax_tie_break": "lowest-class-id",
    "classes": list(CLASS_NAMES),
}

CONFIG_DIGEST = hashlib.sha256(
    json.dumps(_CONVENTIONS, sort_keys=True).encode("utf-8")).hexdigest()[:16]


@dataclass(frozen=True)
class EvalReport:
    f1_task_a: float
    f1_task_b: float
    per_class_f1: tuple[float, ...]
    confusion: tuple[tuple[int, ...], ...]
    n_samples: int
    config_digest: str = CONFIG_DIGEST
    extras: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        payload = {
            "f1_task_a": self.f1_task_a,
            "f1_task_b": self.f1_task_b,
            "per_class_f1": {name: score for name, score
                             in zip(CLASS_NAMES, self.per_class_f1)},
            "confusion": [list(row) for row in self.confusion],
            "n_samples": self.n_samples,
            "config_digest": self.config_digest,
        }
        if self.extras:
            payload["extras"] = self.extras
        return payload

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def predict(model: torch.nn.Module, rasters: np.ndarray,
            batch_size: int = 64) -> np.ndarray:
    """Argmax class ids for a stack of normalised (N, H, W, 3) rasters.

    Ties go to the lowest class id (numpy argmax takes the first maximum).
    """
    if rasters.ndim != 4 or rasters.shape[-1] != 3:
        raise ValueError(f"expected (N, H, W, 3), got {rasters.shape}")
    model.eval()
    out = []
    with torch.no_grad():
        for start in range(0, len(rasters), batch_size):
            chunk = rasters[start:start + batch_size]
            tensor = torch.from_numpy(
                np.ascontiguousarray(chunk.transpose(0, 3, 1, 2))).float()
            logits = model(tensor).numpy()
            out.append(np.argmax(logits, axis=1))
    return np.concatenate(out).astype(np.int64)


def score_report(preds, golds, extras: dict | None = None) -> EvalReport:
    preds, golds = _checked_pair(preds, golds)
    macro, per_cls = f1_macro(preds, golds)
    binary = f1_binary((preds != 0).astype(np.int64), (golds != 0).astype(np.int64))
    matrix = confusion_matrix(preds, golds)
    return EvalReport(
        f1_task_a=binary,
        f1_task_b=macro,
        per_class_f1=tuple(float(s) for s in per_cls),
        confusion=tuple(tuple(int(v) for v in row) for row in matrix),
        n_samples=int(len(golds)),
        extras=extras or {},
    )


def evaluate(model: torch.nn.Module, images: list[LabeledImage],
             batch_size: int = 64, extras: dict | None = None) -> EvalReport:
    """Normalise, predict, and score a labelled image list on both tasks."""
    if not images:
        raise EmptyInput("no images to evaluate")
    rasters = np.stack([normalise(img.pixels) for img in images])
    golds = np.array([int(img.label) for img in images], dtype=np.int64)
    preds = predict(model, rasters, batch_size=batch_size)
    return score_report(preds, golds, extras=extras)
