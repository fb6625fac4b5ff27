"""Ground-truth matching and evaluation measures.

Precision/recall sweeps match kept predictions one-to-one to admissible
ground truth, greedily by descending IoU. A prediction counts as a hit at
IoU threshold ``h`` when its IoU is >= h, except for h = 0 where any
positive overlap counts.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence as Seq

import numpy as np
from scipy.stats import rankdata

from .masks import BoundingBox, bounding_box, iou
from .sequence import GroundTruthInstance, InstancePrediction
from .tracker import greedy_match

log = logging.getLogger(__name__)

MT_FRACTION = 0.8
ML_FRACTION = 0.2


def hit(value: float, h: float) -> bool:
    return value > 0 if h == 0 else value >= h


@dataclass(frozen=True)
class GtMatch:
    gt_track_id: int | None
    iou_gt: float


def iou_matrix(preds: Seq[InstancePrediction], gts: Seq[GroundTruthInstance]) -> np.ndarray:
    out = np.zeros((len(preds), len(gts)))
    for a, p in enumerate(preds):
        for b, g in enumerate(gts):
            out[a, b] = iou(p.mask, g.mask)
    return out


def match_gt(preds: Seq[InstancePrediction], gts: Seq[GroundTruthInstance]) -> list[GtMatch]:
    """Best-overlapping ground truth per prediction (not one-to-one)."""
    ious = iou_matrix(preds, gts)
    out = []
    for a in range(len(preds)):
        if not gts or ious[a].max() <= 0:
            out.append(GtMatch(None, 0.0))
            continue
        b = int(np.argmax(ious[a]))
        out.append(GtMatch(gts[b].gt_track_id, float(ious[a, b])))
    return out


def one_to_one(ious: np.ndarray, h: float, rows: Iterable[int] | None = None,
               cols: Iterable[int] | None = None) -> dict[int, int]:
    """Greedy matching: col (gt) -> row (prediction), restricted to hits at ``h``."""
    rows = range(ious.shape[0]) if rows is None else rows
    cols = list(range(ious.shape[1])) if cols is None else list(cols)
    pairs = [(ious[a, b], a, b) for a in rows for b in cols if hit(ious[a, b], h)]
    return greedy_match(pairs)


# -- classification measures ----------------------------------------------------


def auroc(scores, labels) -> float:
    """P(score of a random positive > score of a random negative), ties counted 1/2."""
    s = np.asarray(scores, dtype=float)
    y = np.asarray(labels).astype(bool)
    n_pos, n_neg = int(y.sum()), int((~y).sum())
    if n_pos == 0 or n_neg == 0:
        raise ValueError("AUROC needs both classes")
    ranks = rankdata(s)
    u = ranks[y].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def accuracy(probabilities, labels, cutoff: float = 0.5) -> float:
    p = np.asarray(probabilities, dtype=float)
    y = np.asarray(labels).astype(bool)
    if p.size == 0:
        raise ValueError("accuracy of an empty set")
    return float(np.mean((p >= cutoff) == y))


def pearson(xs, ys) -> float:
    x = np.asarray(xs, dtype=float)
    y = np.asarray(ys, dtype=float)
    if x.size < 2 or x.size != y.size:
        raise ValueError("pearson needs two equally long series of length >= 2")
    xc, yc = x - x.mean(), y - y.mean()
    sx, sy = float(np.sqrt(xc @ xc)), float(np.sqrt(yc @ yc))
    if sx == 0 or sy == 0:
        raise ValueError("pearson undefined for constant input")
    return float(np.clip((xc @ yc) / (sx * sy), -1.0, 1.0))


# -- ground-truth exclusion -------------------------------------------------------


def exclusion_rule(gt_frames: Seq[Seq[GroundTruthInstance]],
                   pred_frames: Seq[Seq[InstancePrediction]], h: float) -> set[tuple[int, int]]:
    """Admissible (gt_track_id, frame) pairs.

    A ground-truth track is evaluated from the first frame in which a network
    prediction matches it; tracks never matched are dropped entirely.
    """
    first: dict[int, int] = {}
    for t, (gts, preds) in enumerate(zip(gt_frames, pred_frames)):
        if not gts or not preds:
            continue
        matched = one_to_one(iou_matrix(preds, gts), h)
        for b in matched:
            first.setdefault(gts[b].gt_track_id, t)
    out = set()
    for t, gts in enumerate(gt_frames):
        for g in gts:
            if g.gt_track_id in first and t >= first[g.gt_track_id]:
                out.add((g.gt_track_id, t))
    return out


# -- precision/recall sweeps -------------------------------------------------------


@dataclass
class SweepFrame:
    """One frame of one sequence, ready for threshold sweeps."""

    ious: np.ndarray  # (predictions, ground truth)
    selector: np.ndarray  # per prediction
    admissible: np.ndarray  # per ground truth instance

    @property
    def num_admissible(self) -> int:
        return int(self.admissible.sum())


@dataclass
class SweepPoint:
    threshold: float
    tp: int
    fp: int
    fn: int

    @property
    def precision(self) -> float:
        return self.tp / (self.tp + self.fp) if self.tp + self.fp else math.nan

    @property
    def recall(self) -> float:
        return self.tp / (self.tp + self.fn) if self.tp + self.fn else math.nan

    def to_dict(self) -> dict:
        return {
            "threshold": self.threshold, "tp": self.tp, "fp": self.fp, "fn": self.fn,
            "precision": self.precision, "recall": self.recall,
        }


@dataclass
class SweepResult:
    points: list[SweepPoint] = field(default_factory=list)
    auc: float = 0.0


def default_thresholds(count: int = 15) -> list[float]:
    return [float(x) for x in np.linspace(0.0, 1.0, count)]


def count_at(frames: Seq[SweepFrame], threshold: float, h: float) -> SweepPoint:
    tp = fp = fn = 0
    for fr in frames:
        kept = np.flatnonzero(fr.selector >= threshold)
        cols = np.flatnonzero(fr.admissible)
        matched = one_to_one(fr.ious, h, kept, cols) if len(kept) and len(cols) else {}
        tp += len(matched)
        fp += len(kept) - len(matched)
        fn += len(cols) - len(matched)
    return SweepPoint(float(threshold), tp, fp, fn)


def pr_auc(points: Seq[SweepPoint]) -> float:
    """Trapezoidal area over the observed (recall, precision) points."""
    pts = sorted((p.recall, p.precision) for p in points if not math.isnan(p.precision))
    if len(pts) < 2:
        return 0.0
    r = np.array([p[0] for p in pts])
    pr = np.array([p[1] for p in pts])
    return float(np.sum((r[1:] - r[:-1]) * (pr[1:] + pr[:-1]) / 2.0))


def sweep(frames: Seq[SweepFrame], thresholds: Seq[float] | None, h: float) -> SweepResult:
    thresholds = default_thresholds() if thresholds is None else list(thresholds)
    if list(thresholds) != sorted(thresholds):
        raise ValueError("thresholds must be sorted")
    if sum(fr.num_admissible for fr in frames) == 0:
        raise ValueError("no admissible ground truth to evaluate against")
    points = []
    for thr in thresholds:
        pt = count_at(frames, thr, h)
        if pt.tp + pt.fp == 0:
            log.warning("threshold %.3f keeps no prediction; precision undefined, point skipped", thr)
            continue
        points.append(pt)
    return SweepResult(points, pr_auc(points))


# -- tracking measures --------------------------------------------------------------


@dataclass
class TrackingMetrics:
    GT: int = 0
    MT: int = 0
    PT: int = 0
    ML: int = 0
    smn: int = 0

    def to_dict(self) -> dict:
        return {"GT": self.GT, "MT": self.MT, "PT": self.PT, "ML": self.ML, "smn": self.smn}


def tracking_metrics(flags: dict) -> TrackingMetrics:
    """``flags`` maps a ground-truth track to its matched flags over the frames it occurs in."""
    out = TrackingMetrics()
    for seq_flags in flags.values():
        seq_flags = list(seq_flags)
        if not seq_flags:
            continue
        out.GT += 1
        frac = sum(seq_flags) / len(seq_flags)
        if frac >= MT_FRACTION:
            out.MT += 1
        elif frac < ML_FRACTION:
            out.ML += 1
        else:
            out.PT += 1
        out.smn += sum(a != b for a, b in zip(seq_flags, seq_flags[1:]))
    return out


def match_flags(gt_frames: Seq[Seq[GroundTruthInstance]], pred_frames: Seq[Seq[InstancePrediction]],
                h: float, sequence: str = "") -> dict:
    """(sequence, gt_track_id) -> matched flag per occurrence frame, one-to-one per frame."""
    flags: dict = {}
    for gts, preds in zip(gt_frames, pred_frames):
        matched = one_to_one(iou_matrix(preds, gts), h) if gts and preds else {}
        for b, g in enumerate(gts):
            flags.setdefault((sequence, g.gt_track_id), []).append(b in matched)
    return flags


# -- occlusion levels ----------------------------------------------------------------

OCCLUSION_BINS = ["0"] + [f"({k / 10:.1f},{(k + 1) / 10:.1f}]" for k in range(10)]


def _box_counts(a: BoundingBox, b: BoundingBox) -> tuple[int, int]:
    dv = min(a.v_max, b.v_max) - max(a.v_min, b.v_min) + 1
    dh = min(a.h_max, b.h_max) - max(a.h_min, b.h_min) + 1
    inter = max(dv, 0) * max(dh, 0)
    return inter, a.height * a.width + b.height * b.width - inter


def occlusion_level(box: BoundingBox, others: Iterable[BoundingBox]) -> tuple[float, str]:
    """Maximum box IoU against the other boxes and its bin label."""
    best = (0, 1)
    for o in others:
        inter, union = _box_counts(box, o)
        if inter * best[1] > best[0] * union:
            best = (inter, union)
    inter, union = best
    if inter == 0:
        return 0.0, OCCLUSION_BINS[0]
    k = -(-10 * inter // union)  # ceil(10 * iou) in exact arithmetic
    return inter / union, OCCLUSION_BINS[k]


def gt_occlusion_levels(gts: Seq[GroundTruthInstance]) -> list[str]:
    boxes = [bounding_box(g.mask) for g in gts]
    return [occlusion_level(bx, boxes[:k] + boxes[k + 1:])[1] for k, bx in enumerate(boxes)]
