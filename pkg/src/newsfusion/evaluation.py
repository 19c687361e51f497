"""Classification metrics with fake news as the positive class, plus
threshold-swept ROC points and the trapezoidal AUC."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from typing import Sequence

__all__ = ["Metrics", "confusion_metrics", "roc_curve", "auc", "metrics_table", "metrics_json", "roc_csv"]


@dataclass
class Metrics:
    accuracy: float
    precision: float
    recall: float
    f1: float
    tp: int
    fp: int
    tn: int
    fn: int


def _predicted_label(p) -> int:
    if isinstance(p, int):
        return p
    return p.label_pred


def confusion_metrics(predictions: Sequence, labels: Sequence[int]) -> Metrics:
    """Counts at the argmax threshold; ratios with a zero denominator are 0."""
    if len(predictions) != len(labels):
        raise ValueError(f"{len(predictions)} predictions vs {len(labels)} labels")
    if not predictions:
        raise ValueError("no predictions")
    tp = fp = tn = fn = 0
    for p, y in zip(predictions, labels):
        pred = _predicted_label(p)
        if pred == 1 and y == 1:
            tp += 1
        elif pred == 1 and y == 0:
            fp += 1
        elif pred == 0 and y == 0:
            tn += 1
        else:
            fn += 1
    total = tp + fp + tn + fn
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return Metrics(
        accuracy=(tp + tn) / total,
        precision=precision,
        recall=recall,
        f1=f1,
        tp=tp, fp=fp, tn=tn, fn=fn,
    )


def roc_curve(scores: Sequence[float], labels: Sequence[int]) -> list[tuple[float, float, float]]:
    """(fpr, tpr, threshold) points from (0,0) to (1,1), thresholds
    descending, equal scores grouped into a single step."""
    if len(scores) != len(labels):
        raise ValueError(f"{len(scores)} scores vs {len(labels)} labels")
    n_pos = sum(1 for y in labels if y == 1)
    n_neg = len(labels) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("ROC needs both classes present")

    pairs = sorted(zip(scores, labels), key=lambda sy: -sy[0])
    points = [(0.0, 0.0, math.inf)]
    tp = fp = 0
    i = 0
    while i < len(pairs):
        threshold = pairs[i][0]
        while i < len(pairs) and pairs[i][0] == threshold:
            if pairs[i][1] == 1:
                tp += 1
            else:
                fp += 1
            i += 1
        points.append((fp / n_neg, tp / n_pos, threshold))
    return points


def auc(points: Sequence[tuple]) -> float:
    """Trapezoidal area under (fpr, tpr) points ordered along the curve."""
    area = 0.0
    for (x1, y1, *_), (x2, y2, *_) in zip(points, points[1:]):
        area += (x2 - x1) * (y1 + y2) / 2.0
    return area


def metrics_table(m: Metrics, title: str = "metrics") -> str:
    lines = [
        title,
        f"  accuracy   {m.accuracy:.4f}",
        f"  precision  {m.precision:.4f}",
        f"  recall     {m.recall:.4f}",
        f"  f1         {m.f1:.4f}",
        f"  counts     tp={m.tp} fp={m.fp} tn={m.tn} fn={m.fn}",
    ]
    return "\n".join(lines)


def metrics_json(m: Metrics) -> str:
    return json.dumps(asdict(m), sort_keys=True)


def roc_csv(points: Sequence[tuple[float, float, float]]) -> str:
    lines = ["fpr,tpr,threshold"]
    for fpr, tpr, threshold in points:
        lines.append(f"{fpr:.9g},{tpr:.9g},{threshold:.9g}")
    return "\n".join(lines) + "\n"
