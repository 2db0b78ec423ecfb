"""Losses, class-imbalance weighting, and evaluation metrics."""

import json
import logging
from dataclasses import dataclass

import numpy as np

from .errors import ShapeError
from .tensor import Tensor

log = logging.getLogger("aunet.head")

PROB_CLAMP = 1e-7


def class_weights(labels):
    """Per-AU loss weights inversely proportional to occurrence rate.

    Normalized so the weights average to 1 across AUs. An AU that never
    occurs gets its rate floored at 1/(2N) with a warning.
    """
    labels = np.asarray(labels, dtype=np.float64)
    if labels.ndim != 2 or labels.shape[0] == 0:
        raise ShapeError(f"label matrix must be [N,n], got {labels.shape}")
    rates = labels.mean(axis=0)
    floor = 1.0 / (2.0 * labels.shape[0])
    if np.any(rates == 0.0):
        log.warning("AU(s) %s never occur; rate floored at %g",
                    np.flatnonzero(rates == 0.0).tolist(), floor)
        rates = np.maximum(rates, floor)
    inv = 1.0 / rates
    return inv / inv.sum() * rates.size


def detection_loss(probs, labels, weights):
    """Weighted sigmoid cross entropy, averaged over the batch.

    probs: Tensor [B,n] in (0,1); labels: 0/1 array [B,n]; weights:
    per-AU array [n]. Probabilities are clamped to [1e-7, 1-1e-7].
    """
    labels = np.asarray(labels, dtype=np.float64)
    if probs.shape != labels.shape:
        raise ShapeError(f"probs {probs.shape} vs labels {labels.shape}")
    p = probs.clip(PROB_CLAMP, 1.0 - PROB_CLAMP)
    ce = labels * p.log() + (1.0 - labels) * (1.0 - p).log()
    return -((ce * np.asarray(weights, dtype=np.float64)).sum(axis=1)).mean()


def total_loss(det, crf_terms, crf_loss_weight=1.0):
    """Detection loss plus the weighted sum of per-AU CRF energy terms."""
    out = det
    for term in crf_terms:
        out = out + term * crf_loss_weight
    return out


@dataclass
class MetricsReport:
    tp: np.ndarray
    fp: np.ndarray
    fn: np.ndarray
    tn: np.ndarray
    f1: np.ndarray
    accuracy: np.ndarray
    avg_f1: float
    avg_accuracy: float
    threshold: float

    def to_dict(self):
        return {
            "threshold": self.threshold,
            "per_au": [
                {
                    "tp": int(self.tp[i]), "fp": int(self.fp[i]),
                    "fn": int(self.fn[i]), "tn": int(self.tn[i]),
                    "f1": float(self.f1[i]), "accuracy": float(self.accuracy[i]),
                }
                for i in range(self.f1.size)
            ],
            "avg_f1": self.avg_f1,
            "avg_accuracy": self.avg_accuracy,
        }

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"


def evaluate_metrics(probs, labels, threshold=0.5):
    """Per-AU F1 = 2PR/(P+R) and accuracy from thresholded probabilities.

    Degenerate precision or recall (empty denominator) counts as 0, so
    an AU with no true and no predicted positives scores F1 = 0.
    """
    probs = np.asarray(probs, dtype=np.float64)
    labels = np.asarray(labels)
    if probs.ndim != 2 or probs.shape[0] == 0:
        raise ShapeError(f"need a non-empty [N,n] prediction matrix, got {probs.shape}")
    if probs.shape != labels.shape:
        raise ShapeError(f"probs {probs.shape} vs labels {labels.shape}")
    if not 0.0 < threshold < 1.0:
        raise ShapeError(f"threshold must be in (0,1), got {threshold}")
    pred = probs >= threshold
    truth = labels.astype(bool)
    tp = (pred & truth).sum(axis=0)
    fp = (pred & ~truth).sum(axis=0)
    fn = (~pred & truth).sum(axis=0)
    tn = (~pred & ~truth).sum(axis=0)
    # 2TP/(2TP+FP+FN) is 2PR/(P+R) rewritten over integer counts, which
    # keeps the division exact; empty denominator (no positives at all)
    # scores 0.
    denom = 2 * tp + fp + fn
    f1 = np.where(denom > 0, 2.0 * tp / np.maximum(denom, 1), 0.0)
    accuracy = (tp + tn) / probs.shape[0]
    return MetricsReport(
        tp=tp, fp=fp, fn=fn, tn=tn, f1=f1, accuracy=accuracy,
        avg_f1=float(f1.mean()), avg_accuracy=float(accuracy.mean()),
        threshold=threshold,
    )
