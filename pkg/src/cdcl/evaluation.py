"""Per-tick scoring, point adjustment, best-F1 threshold search and ROC-AUC."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.stats import rankdata

from .data import TimeSeries, WindowSpec, make_windows
from .model import Detector


class DegenerateLabels(ValueError):
    """Labels need at least one anomalous and one normal tick."""


@dataclass
class ScoreSeries:
    scores: np.ndarray
    first_scored: int  # ticks before this index repeat the first computed score
    fill: str = "first"


def score_series(detector: Detector, test: TimeSeries, spec: WindowSpec) -> ScoreSeries:
    """Score every tick: the window ending at ``t`` scores ``t``; leading ticks are back-filled."""
    if spec.stride != 1:
        spec = WindowSpec(spec.window_length, spec.suspect_offset, 1)
    if test.channels != detector.encoder.config.in_channels:
        raise ValueError(f"test has {test.channels} channels, model expects {detector.encoder.config.in_channels}")
    windows = make_windows(test, spec)
    per_window = detector.sample_scores(windows.suspect, windows.context)
    scores = np.empty(test.ticks)
    first = int(windows.end_ticks[0])
    scores[first:] = per_window
    scores[:first] = per_window[0]
    if not np.isfinite(scores).all():
        raise FloatingPointError("non-finite anomaly score")
    return ScoreSeries(scores, first)


def segments(labels) -> list[tuple[int, int]]:
    """Maximal runs of 1s as half-open ``(start, end)`` pairs."""
    lab = np.asarray(labels).astype(np.int8)
    edges = np.diff(np.concatenate([[0], lab, [0]]))
    return list(zip(np.flatnonzero(edges == 1).tolist(), np.flatnonzero(edges == -1).tolist()))


def point_adjust(preds, labels) -> np.ndarray:
    """Mark a whole labeled segment as detected when any tick inside it is predicted."""
    preds, labels = np.asarray(preds).astype(np.int64), np.asarray(labels)
    if preds.shape != labels.shape:
        raise ValueError(f"length mismatch: preds {preds.shape} vs labels {labels.shape}")
    out = preds.copy()
    for lo, hi in segments(labels):
        if out[lo:hi].any():
            out[lo:hi] = 1
    return out


def f1_from_counts(tp: int, fp: int, fn: int) -> tuple[float, float, float]:
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return precision, recall, f1


def _check_labels(scores, labels) -> tuple[np.ndarray, np.ndarray]:
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels).astype(np.int64)
    if scores.shape != labels.shape or scores.ndim != 1:
        raise ValueError(f"scores {scores.shape} and labels {labels.shape} must be equal-length 1-D")
    if labels.min() == labels.max():
        raise DegenerateLabels("labels must contain both 0 and 1")
    return scores, labels


@dataclass
class EvalReport:
    precision: float
    recall: float
    f1: float
    threshold: float
    roc_auc: float
    point_adjusted: bool
    segments: list[dict] = field(default_factory=list)
    sweep: np.ndarray | None = field(default=None, repr=False)  # rows: threshold, precision, recall, f1

    def to_text(self) -> str:
        keys = ("precision", "recall", "f1", "threshold", "roc_auc", "point_adjusted")
        lines = [f"{k} = {getattr(self, k)!r}" for k in keys]
        lines.append(f"segments = {len(self.segments)}")
        lines.append(f"segments_detected = {sum(s['detected'] for s in self.segments)}")
        return "\n".join(lines) + "\n"

    def write(self, path, sweep_path=None) -> None:
        Path(path).write_text(self.to_text(), encoding="utf-8")
        if sweep_path is not None and self.sweep is not None:
            with Path(sweep_path).open("w", newline="", encoding="utf-8") as fh:
                writer = csv.writer(fh, lineterminator="\n")
                writer.writerow(["threshold", "precision", "recall", "f1"])
                writer.writerows([[repr(float(v)) for v in row] for row in self.sweep])

    def write_segments(self, path) -> None:
        with Path(path).open("w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["start", "end", "length", "max_score", "detected"])
            for s in self.segments:
                writer.writerow([s["start"], s["end"], s["end"] - s["start"], repr(s["max_score"]), int(s["detected"])])


def sweep_f1(scores, labels, adjust: bool) -> np.ndarray:
    """Precision/recall/F1 at every distinct score used as threshold (``score >= threshold``).

    Returns rows ``(threshold, precision, recall, f1)`` in ascending threshold order.
    """
    scores, labels = _check_labels(scores, labels)
    thresholds = np.unique(scores)
    normal = np.sort(scores[labels == 0])
    fp = len(normal) - np.searchsorted(normal, thresholds, side="left")
    positives = int(labels.sum())
    if adjust:
        segs = segments(labels)
        seg_max = np.array([scores[lo:hi].max() for lo, hi in segs])
        seg_len = np.array([hi - lo for lo, hi in segs])
        order = np.argsort(seg_max)
        cum = np.concatenate([[0], np.cumsum(seg_len[order])])
        # segments whose max >= threshold are fully detected
        below = np.searchsorted(seg_max[order], thresholds, side="left")
        tp = cum[-1] - cum[below]
    else:
        anomalous = np.sort(scores[labels == 1])
        tp = len(anomalous) - np.searchsorted(anomalous, thresholds, side="left")
    rows = np.empty((len(thresholds), 4))
    for i, (th, t, f) in enumerate(zip(thresholds, tp, fp)):
        rows[i] = (th, *f1_from_counts(int(t), int(f), positives - int(t)))
    return rows


def roc_auc(scores, labels) -> float:
    """Rank-based (Mann-Whitney) AUC with midranks for ties."""
    scores, labels = _check_labels(scores, labels)
    ranks = rankdata(scores)
    n_pos = int(labels.sum())
    n_neg = len(labels) - n_pos
    return float((ranks[labels == 1].sum() - n_pos * (n_pos + 1) / 2) / (n_pos * n_neg))


def best_f1_search(scores, labels, adjust: bool = True) -> tuple[float, EvalReport]:
    """Threshold maximizing F1 over all distinct scores; ties go to the smallest threshold."""
    rows = sweep_f1(scores, labels, adjust)
    best = int(np.argmax(rows[:, 3]))  # first maximum = smallest threshold
    threshold, precision, recall, f1 = rows[best]
    scores, labels = _check_labels(scores, labels)
    table = [
        {
            "start": lo,
            "end": hi,
            "max_score": float(scores[lo:hi].max()),
            "detected": bool(scores[lo:hi].max() >= threshold),
        }
        for lo, hi in segments(labels)
    ]
    report = EvalReport(
        float(precision), float(recall), float(f1), float(threshold),
        roc_auc(scores, labels), adjust, table, rows,
    )
    return float(threshold), report
