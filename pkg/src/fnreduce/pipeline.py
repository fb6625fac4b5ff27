"""End-to-end protocol: track, detect, compute metrics, meta-classify, evaluate.

Two methods are compared on the same ground truth. ``score`` keeps network
predictions whose score passes a threshold; ``ours`` adds the reconstructed
instances and keeps those whose meta-classifier probability passes it.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from . import evaluate as ev
from .detection import DetectionReport, DetectorConfig, augment_frames
from .gbt import GbtConfig
from .masks import bounding_box
from .meta import MetaData, SplitSpec, meta_run, out_of_fold_probabilities, summarize
from .metrics import MetricRecord, compute_all
from .sequence import Frame, Sequence
from .tracker import TrackerConfig, track_sequence, tracks_from_frames

log = logging.getLogger(__name__)

PEARSON_COLUMNS = ["S_in_rel", "D_in_rel", "score", "occlusion", "d_d"]


@dataclass
class MetaConfig:
    iou_thresholds: list[float] = field(default_factory=lambda: [0.5])
    frames: int = 5
    runs: int = 10
    seed: int = 42
    folds: int = 5
    horizon: float = 10.0
    gbt: GbtConfig = field(default_factory=GbtConfig)
    split: SplitSpec = field(default_factory=SplitSpec)

    def validate(self) -> None:
        for h in self.iou_thresholds:
            if not 0.0 <= h <= 0.5:
                raise ValueError(f"IoU threshold {h} outside [0, 0.5]")
        if not 0 <= self.frames <= 10:
            raise ValueError("frames must lie in [0, 10]")
        if self.runs < 1 or self.folds < 2:
            raise ValueError("need runs >= 1 and folds >= 2")
        self.gbt.validate()
        self.split.validate()


@dataclass
class PipelineConfig:
    tracker: TrackerConfig = field(default_factory=TrackerConfig)
    detector: DetectorConfig = field(default_factory=DetectorConfig)
    meta: MetaConfig = field(default_factory=MetaConfig)
    thresholds: list[float] = field(default_factory=ev.default_thresholds)
    tracking_iou: float = 0.5

    def validate(self) -> None:
        self.tracker.validate()
        self.detector.validate()
        self.meta.validate()

    def to_dict(self) -> dict:
        return asdict(self)

    def digest(self) -> str:
        return config_hash(self.to_dict())


def config_hash(obj) -> str:
    text = json.dumps(obj, sort_keys=True, default=str)
    return hashlib.sha256(text.encode()).hexdigest()[:16]


# -- stages ------------------------------------------------------------------------


@dataclass
class Prepared:
    seq: Sequence
    tracked: list[Frame]
    augmented: list[Frame]
    report: DetectionReport


def prepare(seq: Sequence, cfg: PipelineConfig) -> Prepared:
    """Track the network predictions and add reconstructed instances."""
    report = DetectionReport()
    tracked, tracks = track_sequence(seq.frames, cfg.tracker)
    augmented = augment_frames(tracked, tracks, cfg.detector, report)
    return Prepared(seq, tracked, augmented, report)


def prepare_all(sequences: list[Sequence], cfg: PipelineConfig, jobs: int = 1) -> list[Prepared]:
    """``prepare`` over sequences, optionally in worker processes; order is kept."""
    if jobs <= 1 or len(sequences) <= 1:
        return [prepare(seq, cfg) for seq in sequences]
    with ProcessPoolExecutor(max_workers=min(jobs, len(sequences))) as pool:
        return list(pool.map(prepare, sequences, [cfg] * len(sequences)))


def attach_iou_gt(records: list[MetricRecord], frames: list[Frame], seq: Sequence) -> None:
    if seq.gt is None:
        raise ValueError(f"{seq.name}: ground truth required")
    by_key = {(r.frame, r.track_id): r for r in records}
    for frame, gt in zip(frames, seq.gt):
        for inst, m in zip(frame.instances, ev.match_gt(frame.instances, gt.instances)):
            by_key[(frame.index, inst.track_id)].iou_gt = m.iou_gt


def sequence_records(prep: Prepared, with_gt: bool = True) -> list[MetricRecord]:
    records = compute_all(tracks_from_frames(prep.augmented), prep.augmented, prep.seq.name)
    if with_gt:
        attach_iou_gt(records, prep.augmented, prep.seq)
    return records


# -- evaluation helpers ----------------------------------------------------------------


def _pred_levels(preds, gts, gt_levels) -> list[str]:
    boxes = [bounding_box(g.mask) for g in gts]
    out = []
    for p, m in zip(preds, ev.match_gt(preds, gts)):
        if m.gt_track_id is not None:
            b = next(k for k, g in enumerate(gts) if g.gt_track_id == m.gt_track_id)
            out.append(gt_levels[b])
        else:
            out.append(ev.occlusion_level(bounding_box(p.mask), boxes)[1])
    return out


@dataclass
class _EvalFrame:
    gts: list
    admissible: np.ndarray
    gt_levels: list[str]
    score: ev.SweepFrame
    ours: ev.SweepFrame
    score_levels: list[str]
    ours_levels: list[str]


def build_eval_frames(preps: list[Prepared], probs: dict, h: float) -> list[_EvalFrame]:
    out = []
    for prep in preps:
        gt_frames = [g.instances for g in prep.seq.gt]
        admissible = ev.exclusion_rule(gt_frames, [f.instances for f in prep.tracked], h)
        for t, gts in enumerate(gt_frames):
            adm = np.array([(g.gt_track_id, t) in admissible for g in gts], dtype=bool)
            net = prep.tracked[t].instances
            aug = prep.augmented[t].instances
            levels = ev.gt_occlusion_levels(gts)
            out.append(_EvalFrame(
                gts=gts,
                admissible=adm,
                gt_levels=levels,
                score=ev.SweepFrame(ev.iou_matrix(net, gts), np.array([i.score for i in net]), adm),
                ours=ev.SweepFrame(
                    ev.iou_matrix(aug, gts),
                    np.array([probs[(prep.seq.name, i.track_id, t)] for i in aug]),
                    adm,
                ),
                score_levels=_pred_levels(net, gts, levels),
                ours_levels=_pred_levels(aug, gts, levels),
            ))
    return out


def _restrict(sf: ev.SweepFrame, pred_levels, gt_levels, level) -> ev.SweepFrame:
    keep = np.array([lv == level for lv in pred_levels], dtype=bool)
    gt_keep = np.array([lv == level for lv in gt_levels], dtype=bool)
    ious = sf.ious[keep] if sf.ious.size else sf.ious.reshape(0, len(gt_levels))
    return ev.SweepFrame(ious.reshape(int(keep.sum()), len(gt_levels)), sf.selector[keep],
                         sf.admissible & gt_keep)


def _sweep_dict(res: ev.SweepResult) -> dict:
    return {"auc": res.auc, "points": [p.to_dict() for p in res.points]}


def occlusion_sweeps(frames: list[_EvalFrame], thresholds, h: float) -> dict:
    out = {}
    for level in ev.OCCLUSION_BINS:
        entry = {}
        for method in ("score", "ours"):
            sub = [_restrict(getattr(f, method), getattr(f, f"{method}_levels"), f.gt_levels, level)
                   for f in frames]
            if sum(s.num_admissible for s in sub) == 0:
                break
            entry[method] = _sweep_dict(ev.sweep(sub, thresholds, h))
        if len(entry) == 2:
            out[level] = entry
    return out


def pearson_table(records: list[MetricRecord]) -> dict:
    y = [r.iou_gt for r in records]
    out = {}
    for col in PEARSON_COLUMNS:
        xs = [float(getattr(r, col)) for r in records]
        try:
            out[col] = ev.pearson(xs, y) if not any(math.isnan(x) for x in xs) else None
        except ValueError:
            out[col] = None
    return out


def tracking_table(preps: list[Prepared], h: float) -> dict:
    base, ours = {}, {}
    for prep in preps:
        gt_frames = [g.instances for g in prep.seq.gt]
        base.update(ev.match_flags(gt_frames, [f.instances for f in prep.tracked], h, prep.seq.name))
        ours.update(ev.match_flags(gt_frames, [f.instances for f in prep.augmented], h, prep.seq.name))
    return {"baseline": ev.tracking_metrics(base).to_dict(), "ours": ev.tracking_metrics(ours).to_dict()}


def _clean(obj):
    """JSON-safe copy: NaN becomes null."""
    if isinstance(obj, float):
        return None if math.isnan(obj) else obj
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.generic):
        return _clean(obj.item())
    return obj


def detection_summary(preps: list[Prepared]) -> dict:
    total = DetectionReport()
    for p in preps:
        for k in ("predicted", "detected", "candidates", "dropped_empty",
                  "suppressed_ignored", "suppressed_duplicate"):
            setattr(total, k, getattr(total, k) + getattr(p.report, k))
    return {"sequences": {p.seq.name: p.report.to_dict() for p in preps}, "total": total.to_dict()}


def meta_summary(data: MetaData, m: MetaConfig, frames: int | None = None) -> dict:
    """ACC and AUROC over ``m.runs`` random splits with seeds ``m.seed + r``."""
    n = m.frames if frames is None else frames
    runs = [meta_run(data, n, m.seed + r, m.gbt, m.split, m.horizon) for r in range(m.runs)]
    return {"n": n, **summarize(runs)}


@dataclass
class RunArtifacts:
    report: dict
    records: list[MetricRecord]
    preps: list[Prepared]
    probabilities: dict = field(default_factory=dict)


def run_all(sequences: list[Sequence], cfg: PipelineConfig | None = None, jobs: int = 1) -> RunArtifacts:
    cfg = cfg or PipelineConfig()
    cfg.validate()
    m = cfg.meta
    if not sequences:
        raise ValueError("no sequences to evaluate")
    preps = prepare_all(sequences, cfg, jobs)
    records = []
    for prep in preps:
        records.extend(sequence_records(prep))
    num_frames = {p.seq.name: len(p.seq.frames) for p in preps}

    report: dict = {
        "config": cfg.to_dict(),
        "config_hash": cfg.digest(),
        "detection": detection_summary(preps),
        "pearson": pearson_table(records),
        "tracking": tracking_table(preps, cfg.tracking_iou),
        "meta": {},
        "sweep": {},
        "occlusion": {},
        "excluded_gt": {},
    }

    all_probs = {}
    for h in m.iou_thresholds:
        key = f"{h:g}"
        data = MetaData(records, num_frames, h)
        report["meta"][key] = meta_summary(data, m)
        oof = out_of_fold_probabilities(data, m.frames, m.seed, m.gbt, m.folds, m.split, m.horizon)
        probs = {r.key: float(p) for r, p in zip(records, oof)}
        all_probs[h] = probs
        labels = data.labels
        report["meta"][key]["oof_auroc"] = ev.auroc(oof, labels) if 0 < labels.sum() < len(labels) else None
        frames = build_eval_frames(preps, probs, h)
        score = ev.sweep([f.score for f in frames], cfg.thresholds, h)
        ours = ev.sweep([f.ours for f in frames], cfg.thresholds, h)
        report["sweep"][key] = {"score": _sweep_dict(score), "ours": _sweep_dict(ours)}
        report["occlusion"][key] = occlusion_sweeps(frames, cfg.thresholds, h)
        n_gt = sum(len(f.gts) for f in frames)
        n_adm = sum(int(f.admissible.sum()) for f in frames)
        report["excluded_gt"][key] = {"total": n_gt, "admissible": n_adm,
                                      "excluded_fraction": 1 - n_adm / n_gt if n_gt else 0.0}
        log.info("h=%s: AUC score %.4f, ours %.4f, meta AUROC %.4f", key, score.auc, ours.auc,
                 report["meta"][key]["auroc_mean"])
    return RunArtifacts(_clean(report), records, preps, all_probs)


def pr_rows(report: dict) -> list[dict]:
    """Rows of ``pr_points.csv``."""
    rows = []
    for key, methods in report["sweep"].items():
        for method in ("score", "ours"):
            for p in methods[method]["points"]:
                rows.append({"method": method, "h": key, **{k: p[k] for k in
                            ("threshold", "tp", "fp", "fn", "precision", "recall")}})
    return rows


def dumps_report(report: dict) -> str:
    return json.dumps(report, indent=1, sort_keys=True) + "\n"
