"""Evaluation metrics over generated outputs."""

from __future__ import annotations

from typing import Callable

from .errors import UnknownMetric
from .modality.box import BoundingBox


def exact_match(prediction: str, target: str) -> float:
    return 1.0 if prediction.strip() == target.strip() else 0.0


def accuracy(prediction: str, target: str) -> float:
    return exact_match(prediction, target)


def rouge_l(prediction: str, target: str) -> float:
    """Token-level longest-common-subsequence F1."""
    pred = prediction.split()
    ref = target.split()
    if not pred or not ref:
        return 1.0 if pred == ref else 0.0
    dp = [[0] * (len(ref) + 1) for _ in range(len(pred) + 1)]
    for i, p in enumerate(pred):
        for j, r in enumerate(ref):
            dp[i + 1][j + 1] = dp[i][j] + 1 if p == r else max(dp[i][j + 1], dp[i + 1][j])
    lcs = dp[-1][-1]
    if lcs == 0:
        return 0.0
    precision = lcs / len(pred)
    recall = lcs / len(ref)
    return 2 * precision * recall / (precision + recall)


def iou_at_0_5(prediction, target) -> float:
    pred = prediction if isinstance(prediction, BoundingBox) else BoundingBox.from_text(str(prediction))
    ref = target if isinstance(target, BoundingBox) else BoundingBox.from_text(str(target))
    return 1.0 if pred.iou(ref) >= 0.5 else 0.0


METRICS: dict[str, Callable] = {
    "exact_match": exact_match,
    "accuracy": accuracy,
    "rouge_l": rouge_l,
    "iou_at_0_5": iou_at_0_5,
}

# accepted in configs but needing corpus statistics / learned scorers we
# deliberately do not ship
UNSUPPORTED = {"cider", "bleu", "clipsim"}


def get_metric(name: str) -> Callable:
    if name in METRICS:
        return METRICS[name]
    if name in UNSUPPORTED:
        raise UnknownMetric(
            f"metric '{name}' is recognized but not implemented at desk scale")
    raise UnknownMetric(f"unknown metric '{name}'")
