"""Binary change-detection accuracy and error-map rendering.

"Changed" is the positive class throughout.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import ContractError, ShapeError

WHITE = (255, 255, 255)  # hit on a changed pixel
BLACK = (0, 0, 0)  # correct rejection
RED = (255, 0, 0)  # false alarm
GREEN = (0, 255, 0)  # omission


@dataclass(frozen=True)
class ConfusionMatrix:
    tp: int
    tn: int
    fp: int
    fn: int

    @property
    def total(self) -> int:
        return self.tp + self.tn + self.fp + self.fn


@dataclass
class MetricsReport:
    oa: float
    kappa: float
    f1: float
    precision: float
    recall: float
    confusion: ConfusionMatrix
    undefined: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "oa": self.oa,
            "kappa": self.kappa,
            "f1": self.f1,
            "recall": self.recall,
            "precision": self.precision,
            "confusion": asdict(self.confusion),
            "undefined": list(self.undefined),
        }

    def to_json(self, **extra) -> str:
        return json.dumps({**self.to_dict(), **extra}, indent=2, sort_keys=True)


def confusion_matrix(prediction, reference) -> ConfusionMatrix:
    pred = np.asarray(prediction) != 0
    ref = np.asarray(reference) != 0
    if pred.shape != ref.shape:
        raise ShapeError(f"prediction {pred.shape} and reference {ref.shape} differ")
    return ConfusionMatrix(
        tp=int(np.sum(pred & ref)),
        tn=int(np.sum(~pred & ~ref)),
        fp=int(np.sum(pred & ~ref)),
        fn=int(np.sum(~pred & ref)),
    )


def _ratio(num, den, name, undefined):
    if den == 0:
        undefined.append(name)
        return 0.0
    return num / den


def compute_metrics(cm: ConfusionMatrix) -> MetricsReport:
    """OA, Cohen's kappa, F1, precision and recall.

    Ratios with a zero denominator are reported as 0 and their names are
    listed in ``undefined``.
    """
    n = cm.total
    if n <= 0:
        raise ContractError("confusion matrix is empty")
    undefined: list = []
    oa = (cm.tp + cm.tn) / n
    precision = _ratio(cm.tp, cm.tp + cm.fp, "precision", undefined)
    recall = _ratio(cm.tp, cm.tp + cm.fn, "recall", undefined)
    f1 = _ratio(2 * precision * recall, precision + recall, "f1", undefined)
    pe = ((cm.tp + cm.fp) * (cm.tp + cm.fn) + (cm.fn + cm.tn) * (cm.fp + cm.tn)) / (n * n)
    kappa = _ratio(oa - pe, 1.0 - pe, "kappa", undefined)
    return MetricsReport(oa, kappa, f1, precision, recall, cm, undefined)


def evaluate(prediction, reference, mask=None) -> MetricsReport:
    """Metrics over all pixels, or only where ``mask`` is true."""
    pred, ref = np.asarray(prediction), np.asarray(reference)
    if mask is not None:
        pred, ref = pred[mask], ref[mask]
    return compute_metrics(confusion_matrix(pred, ref))


def render_error_map(binary, reference) -> np.ndarray:
    """``(H, W, 3)`` uint8 image: TP white, TN black, FP red, FN green."""
    pred = np.asarray(binary) != 0
    ref = np.asarray(reference) != 0
    if pred.shape != ref.shape:
        raise ShapeError(f"prediction {pred.shape} and reference {ref.shape} differ")
    rgb = np.zeros(pred.shape + (3,), dtype=np.uint8)
    rgb[pred & ref] = WHITE
    rgb[pred & ~ref] = RED
    rgb[~pred & ref] = GREEN
    return rgb


def color_counts(rgb: np.ndarray) -> dict[str, int]:
    rgb = np.asarray(rgb)
    counts = {}
    for name, color in (("white", WHITE), ("black", BLACK), ("red", RED), ("green", GREEN)):
        counts[name] = int(np.sum(np.all(rgb == color, axis=-1)))
    return counts
