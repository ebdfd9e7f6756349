"""IoU metrics, per-episode evaluation records and confidence-interval summaries."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np

from . import nn
from . import tensor as T
from .model import stack_samples

THRESHOLDS = (0.5, 0.35)


def iou(pred, target) -> float:
    """Soft IoU ``sum(p*t) / (sum(p) + sum(t) - sum(p*t))``; 1.0 when both masks are empty."""
    p = np.asarray(pred, dtype=np.float64)
    t = np.asarray(target, dtype=np.float64)
    if p.shape != t.shape:
        raise ValueError(f"shape mismatch {p.shape} vs {t.shape}")
    if p.size and (p.min() < 0.0 or p.max() > 1.0):
        raise ValueError("predictions must lie in [0, 1]")
    inter = float((p * t).sum())
    denom = float(p.sum() + t.sum()) - inter
    if denom <= 0.0:
        return 1.0
    return inter / denom


def thresholded_iou(prob, target, thresh: float) -> float:
    if not 0.0 < thresh < 1.0:
        raise ValueError("threshold must lie in (0, 1)")
    p = np.asarray(prob, dtype=np.float64)
    if p.size and (p.min() < 0.0 or p.max() > 1.0):
        raise ValueError("probabilities must lie in [0, 1]")
    return iou((p >= thresh).astype(np.float64), target)


@dataclass
class EvalRecord:
    episode_id: str
    soft_iou: float
    iou_at_0_5: float
    iou_at_0_35: float
    query_loss: float
    class_id: str = ""

    def as_dict(self) -> dict:
        return asdict(self)


@dataclass
class Summary:
    mean: float
    ci95_half_width: float | None
    n: int

    def format(self, scale: float = 100.0, digits: int = 2) -> str:
        if self.ci95_half_width is None:
            return f"{self.mean * scale:.{digits}f} ± n/a"
        return f"{self.mean * scale:.{digits}f} ± {self.ci95_half_width * scale:.{digits}f}"


def summarize_values(values: Sequence[float]) -> Summary:
    """Mean with a normal-approximation 95% half-width ``1.96 * s / sqrt(n)``."""
    v = np.asarray(values, dtype=np.float64)
    if v.size == 0:
        raise ValueError("cannot summarize zero values")
    if v.size < 2:
        return Summary(float(v.mean()), None, int(v.size))
    return Summary(float(v.mean()), float(1.96 * v.std(ddof=1) / math.sqrt(v.size)), int(v.size))


def summarize(records: Sequence[EvalRecord], field: str) -> Summary:
    return summarize_values([getattr(r, field) for r in records])


def summarize_by_class(records: Sequence[EvalRecord], field: str) -> Summary:
    """Average within each class first, then across classes."""
    groups: dict[str, list[float]] = {}
    for r in records:
        groups.setdefault(r.class_id, []).append(getattr(r, field))
    return summarize_values([float(np.mean(v)) for _, v in sorted(groups.items())])


def constant_foreground_iou(masks) -> float:
    """Mean IoU of predicting every pixel as foreground."""
    return float(np.mean([iou(np.ones_like(m, dtype=np.float64), m) for m in masks]))


def records_from_probs(episode_id: str, class_id: str, probs: np.ndarray, masks: np.ndarray,
                       loss: float, thresholds=THRESHOLDS) -> EvalRecord:
    soft = np.mean([iou(p, m) for p, m in zip(probs, masks)])
    at = [np.mean([thresholded_iou(p, m, th) for p, m in zip(probs, masks)]) for th in thresholds]
    return EvalRecord(episode_id, float(soft), float(at[0]), float(at[1]), float(loss), class_id)


def episode_eval(model, params, episode, thresholds=THRESHOLDS) -> EvalRecord:
    """Score adapted ``params`` on the query set: IoUs averaged over query images.

    Query images are forwarded one at a time: batch norm uses current-batch
    statistics, so batching them would let one query influence another's
    prediction.
    """
    probs, masks, losses = [], [], []
    with T.no_grad():
        for sample in episode.query:
            image, mask = stack_samples([sample], params)
            logits = model.forward(params, image)
            losses.append(nn.softmax_cross_entropy(logits, mask).item())
            probs.append(nn.softmax(logits, axis=1).data[0, 1].astype(np.float64))
            masks.append(mask[0])
    probs = np.clip(np.stack(probs), 0.0, 1.0)
    return records_from_probs(episode.episode_id, episode.class_id, probs, np.stack(masks),
                              float(np.mean(losses)), thresholds)
