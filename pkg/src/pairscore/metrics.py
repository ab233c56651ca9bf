"""Ranking and threshold metrics for binary pair labels."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
from scipy.stats import rankdata

from .errors import NoPositives, ShapeMismatch, SingleClass

__all__ = ["auroc", "aupr", "f1", "MetricsReport", "metrics_report"]


def _prepare(scores, labels) -> tuple[np.ndarray, np.ndarray]:
    s = np.asarray(scores, dtype=np.float64).reshape(-1)
    y = np.asarray(labels, dtype=np.float64).reshape(-1)
    if s.shape != y.shape:
        raise ShapeMismatch(f"{s.shape[0]} scores for {y.shape[0]} labels")
    # real-valued labels are read as positive from 0.5 up
    return s, y >= 0.5


def auroc(scores, labels) -> float:
    """Mann-Whitney AUROC; tied scores count one half (midranks)."""
    s, pos = _prepare(scores, labels)
    n_pos = int(pos.sum())
    n_neg = pos.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise SingleClass("AUROC needs both positive and negative labels")
    ranks = rankdata(s, method="average")
    u = ranks[pos].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def aupr(scores, labels) -> float:
    """Average precision: sum over distinct thresholds of recall gain times precision."""
    s, pos = _prepare(scores, labels)
    n_pos = int(pos.sum())
    if n_pos == 0:
        raise NoPositives("AUPR needs at least one positive label")
    order = np.argsort(-s, kind="mergesort")
    s_sorted, pos_sorted = s[order], pos[order]
    tp = np.cumsum(pos_sorted)
    fp = np.cumsum(~pos_sorted)
    # keep the last index of each block of tied scores
    last = np.r_[np.flatnonzero(np.diff(s_sorted) != 0), s_sorted.size - 1]
    tp, fp = tp[last], fp[last]
    precision = tp / (tp + fp)
    recall = tp / n_pos
    gains = np.diff(np.r_[0.0, recall])
    return float(np.sum(gains * precision))


def _confusion(s: np.ndarray, pos: np.ndarray, threshold: float) -> tuple[int, int, int, int]:
    pred = s >= threshold
    tp = int(np.sum(pred & pos))
    fp = int(np.sum(pred & ~pos))
    fn = int(np.sum(~pred & pos))
    tn = int(np.sum(~pred & ~pos))
    return tp, fp, fn, tn


def f1(scores, labels, threshold: float = 0.5) -> float:
    """Positive-class F1 with ``score >= threshold`` as a positive call; 0 when TP is 0."""
    s, pos = _prepare(scores, labels)
    tp, fp, fn, _ = _confusion(s, pos, threshold)
    if tp == 0:
        return 0.0
    return 2.0 * tp / (2.0 * tp + fp + fn)


@dataclass(frozen=True)
class MetricsReport:
    auroc: float
    aupr: float
    f1: float
    threshold: float
    tp: int
    fp: int
    fn: int
    tn: int

    def as_dict(self) -> dict:
        return asdict(self)


def metrics_report(scores, labels, threshold: float = 0.5) -> MetricsReport:
    s, pos = _prepare(scores, labels)
    tp, fp, fn, tn = _confusion(s, pos, threshold)
    return MetricsReport(
        auroc=auroc(s, pos),
        aupr=aupr(s, pos),
        f1=f1(s, pos, threshold),
        threshold=threshold,
        tp=tp,
        fp=fp,
        fn=fn,
        tn=tn,
    )
