"""Evaluation metrics: confusion counts, F1, accuracy, and ROC AUC.

Scores are probabilities in [0, 1]; predictions threshold at 0.5. When a
field-of-view mask is supplied only pixels inside it are counted. AUC comes
in two modes: a 256-bin histogram sweep (O(N), the default) and an exact
rank-based computation used to verify the histogram's quantization error.
All three headline numbers are reported as percentages.
"""

import json
from dataclasses import dataclass

import numpy as np

from .errors import DataError, DimensionError

AUC_BINS = 256


@dataclass
class MetricReport:
    f1: float
    auc: float | None
    acc: float
    tp: int
    fp: int
    tn: int
    fn: int
    pixels: int
    degenerate_f1: bool = False

    def to_text(self) -> str:
        lines = [
            f"f1={self.f1:.2f}",
            f"auc={'nan' if self.auc is None else f'{self.auc:.2f}'}",
            f"acc={self.acc:.2f}",
            f"tp={self.tp}",
            f"fp={self.fp}",
            f"tn={self.tn}",
            f"fn={self.fn}",
            f"pixels={self.pixels}",
            f"degenerate_f1={int(self.degenerate_f1)}",
        ]
        return "\n".join(lines)

    def to_dict(self) -> dict:
        return {
            "f1": self.f1, "auc": self.auc, "acc": self.acc,
            "tp": self.tp, "fp": self.fp, "tn": self.tn, "fn": self.fn,
            "pixels": self.pixels, "degenerate_f1": self.degenerate_f1,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


def _select(scores, labels, mask):
    scores = np.asarray(scores).reshape(-1)
    labels = np.asarray(labels).reshape(-1)
    if scores.shape != labels.shape:
        raise DimensionError(f"scores/labels length mismatch: {scores.shape} vs {labels.shape}")
    if mask is not None:
        m = np.asarray(mask).reshape(-1)
        if m.shape != scores.shape:
            raise DimensionError(f"mask length mismatch: {m.shape} vs {scores.shape}")
        keep = m > 0.5
        scores, labels = scores[keep], labels[keep]
    if scores.size == 0:
        raise DataError("no pixels to evaluate (mask excludes everything)")
    return scores, labels > 0.5


def confusion_metrics(scores, labels, mask=None, threshold: float = 0.5) -> MetricReport:
    """F1/ACC report from thresholded predictions (prediction = score >= t)."""
    s, pos = _select(scores, labels, mask)
    pred = s >= threshold
    tp = int(np.sum(pred & pos))
    fp = int(np.sum(pred & ~pos))
    fn = int(np.sum(~pred & pos))
    tn = int(np.sum(~pred & ~pos))
    total = tp + fp + tn + fn
    acc = 100.0 * (tp + tn) / total
    f1_den = 2 * tp + fp + fn
    degenerate = f1_den == 0
    f1 = 0.0 if degenerate else 100.0 * 2 * tp / f1_den
    return MetricReport(f1=f1, auc=None, acc=acc, tp=tp, fp=fp, tn=tn, fn=fn,
                        pixels=total, degenerate_f1=degenerate)


def auc(scores, labels, mask=None, method: str = "histogram") -> float:
    """ROC area as a percentage. 'histogram' sweeps 256 score bins and
    integrates trapezoidally; 'exact' is the rank statistic with averaged
    ranks on ties."""
    s, pos = _select(scores, labels, mask)
    n_pos = int(pos.sum())
    n_neg = int((~pos).sum())
    if n_pos == 0 or n_neg == 0:
        raise DataError("AUC undefined: ground truth has a single class")
    if method == "exact":
        return _auc_exact(s, pos, n_pos, n_neg)
    if method != "histogram":
        raise ValueError(f"unknown AUC method {method!r}")
    bins = np.clip((s * AUC_BINS).astype(np.int64), 0, AUC_BINS - 1)
    hist_pos = np.bincount(bins[pos], minlength=AUC_BINS)
    hist_neg = np.bincount(bins[~pos], minlength=AUC_BINS)
    # Cumulate from the top bin down: point i = rates at threshold bin i.
    tpr = np.concatenate([[0], np.cumsum(hist_pos[::-1])]) / n_pos
    fpr = np.concatenate([[0], np.cumsum(hist_neg[::-1])]) / n_neg
    return 100.0 * float(np.trapezoid(tpr, fpr))


def _auc_exact(s, pos, n_pos, n_neg):
    order = np.argsort(s, kind="mergesort")
    ranks = np.empty(s.size, dtype=np.float64)
    sorted_s = s[order]
    i = 0
    while i < s.size:
        j = i
        while j + 1 < s.size and sorted_s[j + 1] == sorted_s[i]:
            j += 1
        ranks[order[i:j + 1]] = 0.5 * (i + j) + 1.0  # average rank, 1-based
        i = j + 1
    rank_sum = float(ranks[pos].sum())
    u = rank_sum - n_pos * (n_pos + 1) / 2.0
    return 100.0 * u / (n_pos * n_neg)


def evaluate(scores, labels, mask=None, threshold: float = 0.5) -> MetricReport:
    """Confusion metrics plus AUC in one report. AUC is None when the
    evaluated ground truth has one class only."""
    report = confusion_metrics(scores, labels, mask, threshold)
    try:
        report.auc = auc(scores, labels, mask)
    except DataError:
        report.auc = None
    return report
