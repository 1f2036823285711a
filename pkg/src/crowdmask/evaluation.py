"""Instance-mask evaluation: IoU, optimal one-to-one matching, precision/recall/F1."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import sparse
from scipy.optimize import linear_sum_assignment

from .core import RasterMask
from .errors import EmptyGroundTruth, SizeMismatch


@dataclass(frozen=True)
class ConfusionMatrix:
    tp: int = 0
    fp: int = 0
    fn: int = 0

    def __post_init__(self) -> None:
        if min(self.tp, self.fp, self.fn) < 0:
            raise ValueError("confusion counts must be non-negative")

    def __add__(self, other: "ConfusionMatrix") -> "ConfusionMatrix":
        return ConfusionMatrix(self.tp + other.tp, self.fp + other.fp, self.fn + other.fn)


def iou(a: RasterMask, b: RasterMask) -> float:
    """Intersection over union; two empty masks score 0."""
    if a.shape != b.shape:
        raise SizeMismatch(f"mask shapes differ: {a.shape} vs {b.shape}")
    inter = a.intersection_count(b)
    union = a.population + b.population - inter
    return inter / union if union else 0.0


def _stack(masks: Sequence[RasterMask]) -> sparse.csr_matrix:
    cols = [np.flatnonzero(m.bits.ravel()) for m in masks]
    indptr = np.concatenate(([0], np.cumsum([c.size for c in cols])))
    data = np.ones(int(indptr[-1]), dtype=np.int64)
    size = masks[0].bits.size
    return sparse.csr_matrix((data, np.concatenate(cols), indptr), shape=(len(masks), size))


def iou_matrix(preds: Sequence[RasterMask], gts: Sequence[RasterMask]) -> np.ndarray:
    """``out[i, j] = iou(preds[i], gts[j])``, computed through sparse products."""
    m, n = len(preds), len(gts)
    if m == 0 or n == 0:
        return np.zeros((m, n))
    shape = preds[0].shape
    for mask in list(preds) + list(gts):
        if mask.shape != shape:
            raise SizeMismatch("all masks must share one shape")
    P, G = _stack(preds), _stack(gts)
    inter = (P @ G.T).toarray().astype(np.float64)
    pop_p = np.array([p.population for p in preds], dtype=np.float64)
    pop_g = np.array([g.population for g in gts], dtype=np.float64)
    union = pop_p[:, None] + pop_g[None, :] - inter
    with np.errstate(invalid="ignore", divide="ignore"):
        out = np.where(union > 0, inter / union, 0.0)
    return out


def hungarian_match(scores: np.ndarray) -> list[tuple[int, int]]:
    """Maximum-total-score one-to-one assignment of ``min(m, n)`` pairs.

    Pairs are returned sorted by (pred, gt).
    """
    scores = np.asarray(scores, dtype=np.float64)
    if scores.ndim != 2:
        raise ValueError("score matrix must be 2-D")
    if scores.size == 0:
        return []
    rows, cols = linear_sum_assignment(scores, maximize=True)
    return sorted((int(r), int(c)) for r, c in zip(rows, cols))


def matched_total(scores: np.ndarray, pairs: Sequence[tuple[int, int]]) -> float:
    return math.fsum(float(scores[i, j]) for i, j in pairs)


def mean_matched_iou(preds: Sequence[RasterMask], gts: Sequence[RasterMask]) -> float:
    if len(gts) == 0:
        raise EmptyGroundTruth("no ground-truth masks")
    mat = iou_matrix(preds, gts)
    pairs = hungarian_match(mat)
    if not pairs:
        return 0.0
    return matched_total(mat, pairs) / len(pairs)


def confusion_from_matrix(mat: np.ndarray, iou_threshold: float = 0.5) -> ConfusionMatrix:
    if not 0.0 < iou_threshold <= 1.0:
        raise ValueError("iou_threshold must lie in (0, 1]")
    m, n = mat.shape
    pairs = hungarian_match(mat)
    tp = sum(1 for i, j in pairs if mat[i, j] >= iou_threshold)
    return ConfusionMatrix(tp=tp, fp=m - tp, fn=n - tp)


def confusion(preds, gts, iou_threshold: float = 0.5) -> ConfusionMatrix:
    return confusion_from_matrix(iou_matrix(preds, gts), iou_threshold)


def prf1(cm: ConfusionMatrix) -> tuple[float, float, float]:
    precision = cm.tp / (cm.tp + cm.fp) if cm.tp + cm.fp else 0.0
    recall = cm.tp / (cm.tp + cm.fn) if cm.tp + cm.fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return precision, recall, f1


@dataclass
class ImageEvaluation:
    image_id: str
    iou: float
    cm: ConfusionMatrix
    n_pred: int
    n_gt: int

    def to_dict(self) -> dict:
        p, r, f1 = prf1(self.cm)
        return {
            "image_id": self.image_id,
            "iou": self.iou,
            "precision": p,
            "recall": r,
            "f1": f1,
            "tp": self.cm.tp,
            "fp": self.cm.fp,
            "fn": self.cm.fn,
            "n_pred": self.n_pred,
            "n_gt": self.n_gt,
        }


def evaluate_image(preds, gts, iou_threshold: float = 0.5, image_id: str = "image") -> ImageEvaluation:
    if len(gts) == 0:
        raise EmptyGroundTruth(f"{image_id}: no ground-truth masks")
    mat = iou_matrix(preds, gts)
    pairs = hungarian_match(mat)
    mean = matched_total(mat, pairs) / len(pairs) if pairs else 0.0
    return ImageEvaluation(image_id, mean, confusion_from_matrix(mat, iou_threshold), len(preds), len(gts))


@dataclass
class EvaluationReport:
    per_image: list[ImageEvaluation] = field(default_factory=list)
    iou_threshold: float = 0.5

    def summary(self) -> tuple[float, ConfusionMatrix]:
        # Unweighted mean IoU over images; confusion counts pooled before P/R/F1.
        if not self.per_image:
            return 0.0, ConfusionMatrix()
        mean_iou = math.fsum(e.iou for e in self.per_image) / len(self.per_image)
        cm = ConfusionMatrix()
        for e in self.per_image:
            cm = cm + e.cm
        return mean_iou, cm

    def to_dict(self) -> dict:
        mean_iou, cm = self.summary()
        p, r, f1 = prf1(cm)
        return {
            "iou": mean_iou,
            "precision": p,
            "recall": r,
            "f1": f1,
            "iou_threshold": self.iou_threshold,
            "per_image": [e.to_dict() for e in self.per_image],
        }


def evaluate_dataset(pairs, iou_threshold: float = 0.5) -> EvaluationReport:
    """``pairs`` yields ``(image_id, preds, gts)`` triples."""
    report = EvaluationReport(iou_threshold=iou_threshold)
    for image_id, preds, gts in pairs:
        report.per_image.append(evaluate_image(preds, gts, iou_threshold, image_id))
    return report
