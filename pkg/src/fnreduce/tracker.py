"""Frame-to-frame instance tracking by overlap of motion-shifted masks."""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Sequence as Seq

import numpy as np

from .masks import CenterPoint, GridMismatchError, PixelMask, geometric_center, iou, overlap_ratio, shift_by_vector
from .sequence import Frame, InstancePrediction

IGNORE_OVERLAP = 0.8


@dataclass
class TrackerConfig:
    match_iou_threshold: float = 0.25
    window: int = 5
    class_gated: bool = True

    def validate(self) -> None:
        if not 0.0 < self.match_iou_threshold < 1.0:
            raise ValueError("match_iou_threshold must lie in (0, 1)")
        if self.window < 2:
            raise ValueError("window must be at least 2")


@dataclass
class Track:
    track_id: int
    entries: dict[int, InstancePrediction] = field(default_factory=dict)
    centers: list[tuple[int, CenterPoint]] = field(default_factory=list)

    @property
    def t_last(self) -> int | None:
        return max(self.entries) if self.entries else None

    @property
    def frames(self) -> list[int]:
        return sorted(self.entries)

    def __len__(self) -> int:
        return len(self.entries)

    def add(self, t: int, inst: InstancePrediction) -> None:
        if self.entries and t <= max(self.entries):
            raise ValueError(f"track {self.track_id}: frame {t} not after {max(self.entries)}")
        self.entries[t] = inst
        self.centers.append((t, geometric_center(inst.mask)))


def fit_line(ts: Seq[float], ys: Seq[float]) -> tuple[float, float]:
    """Ordinary least squares ``y = slope * t + intercept``."""
    t = np.asarray(ts, dtype=float)
    y = np.asarray(ys, dtype=float)
    if t.size < 2:
        raise ValueError("need at least two points for a line fit")
    tc = t - t.mean()
    sxx = float(tc @ tc)
    if sxx == 0.0:
        raise ValueError("frame indices must not all coincide")
    slope = float(tc @ (y - y.mean())) / sxx
    return slope, float(y.mean() - slope * t.mean())


def extrapolate(ts: Seq[float], ys: Seq[float], target: float) -> float:
    slope, intercept = fit_line(ts, ys)
    return slope * target + intercept


def predict_center(history: Seq[tuple[int, CenterPoint]], target_frame: int) -> CenterPoint:
    """Independent least-squares lines for row and column, evaluated at ``target_frame``."""
    if len(history) < 2:
        raise ValueError("need at least two centers to predict motion")
    ts = [t for t, _ in history]
    if any(b <= a for a, b in zip(ts, ts[1:])):
        raise ValueError("history frames must be strictly increasing")
    return CenterPoint(
        extrapolate(ts, [c.v for _, c in history], target_frame),
        extrapolate(ts, [c.h for _, c in history], target_frame),
    )


def prefilter_ignored(frame: Frame, threshold: float = IGNORE_OVERLAP) -> list[InstancePrediction]:
    """Drop instances with at least ``threshold`` of their pixels inside the ignored region."""
    if frame.ignored is None or frame.ignored.is_empty:
        return list(frame.instances)
    return [i for i in frame.instances if overlap_ratio(i.mask, frame.ignored) < threshold]


def motion_shifted(track: Track, t: int, window: int) -> PixelMask:
    """The track's latest mask moved to where its motion predicts it at frame ``t``."""
    t_last = track.t_last
    mask = track.entries[t_last].mask
    if len(track.centers) < 2:
        return mask
    pred = predict_center(track.centers[-window:], t)
    last = track.centers[-1][1]
    return shift_by_vector(mask, pred.v - last.v, pred.h - last.h)


def greedy_match(candidates: list[tuple[float, int, int]]) -> dict[int, int]:
    """One-to-one matching of (score, a, b) triples by descending score.

    Ties are broken by (a, b) so the result does not depend on input order.
    """
    used_a, used_b, out = set(), set(), {}
    for score, a, b in sorted(candidates, key=lambda c: (-c[0], c[1], c[2])):
        if a in used_a or b in used_b:
            continue
        used_a.add(a)
        used_b.add(b)
        out[b] = a
    return out


def candidate_pairs(prev_tracks: list[Track], curr: list[InstancePrediction], t: int,
                    cfg: TrackerConfig) -> list[tuple[float, int, int]]:
    """(iou, prev index, curr index) for every admissible pair."""
    shifted = [motion_shifted(tr, t, cfg.window) for tr in prev_tracks]
    pairs = []
    for a, (tr, mask) in enumerate(zip(prev_tracks, shifted)):
        cls = tr.entries[tr.t_last].class_id
        for b, inst in enumerate(curr):
            if (mask.height, mask.width) != (inst.mask.height, inst.mask.width):
                raise GridMismatchError("tracked frames must share one grid")
            if cfg.class_gated and inst.class_id != cls:
                continue
            if mask.is_empty:
                continue
            o = iou(mask, inst.mask)
            if o >= cfg.match_iou_threshold:
                pairs.append((o, a, b))
    return pairs


def match_frames(prev_tracks: list[Track], curr: list[InstancePrediction], t: int,
                 cfg: TrackerConfig) -> dict[int, int]:
    """Map curr index -> index into ``prev_tracks`` for matched instances."""
    return greedy_match(candidate_pairs(prev_tracks, curr, t, cfg))


def track_sequence(frames: list[Frame], cfg: TrackerConfig | None = None,
                   first_id: int = 1) -> tuple[list[Frame], list[Track]]:
    """Assign track ids to every instance of ``frames``.

    Instances mostly inside the ignored region are removed first. Returns new
    frames whose instances carry ``track_id`` and the list of tracks.
    Only tracks present in the directly preceding frame are candidates.
    """
    cfg = cfg or TrackerConfig()
    cfg.validate()
    tracks: list[Track] = []
    active: list[Track] = []
    next_id = first_id
    out_frames = []
    for frame in frames:
        t = frame.index
        curr = prefilter_ignored(frame)
        assignment = match_frames(active, curr, t, cfg)
        labelled, now_active = [], []
        for b, inst in enumerate(curr):
            if b in assignment:
                tr = active[assignment[b]]
            else:
                tr = Track(next_id)
                next_id += 1
                tracks.append(tr)
            inst = replace(inst, track_id=tr.track_id)
            tr.add(t, inst)
            labelled.append(inst)
            now_active.append(tr)
        active = now_active
        out_frames.append(replace(frame, instances=labelled))
    return out_frames, tracks


def tracks_from_frames(frames: list[Frame]) -> list[Track]:
    """Rebuild tracks from frames whose instances already carry track ids."""
    by_id: dict[int, Track] = {}
    for frame in frames:
        for inst in frame.instances:
            if inst.track_id is None:
                raise ValueError(f"frame {frame.index}: untracked instance")
            tr = by_id.setdefault(inst.track_id, Track(inst.track_id))
            tr.add(frame.index, inst)
    return [by_id[k] for k in sorted(by_id)]


def tracks_jsonl(tracks: list[Track], frames: list[Frame]) -> list[dict]:
    """Records of ``tracks.jsonl``: the instance is referenced by its position in the frame file."""
    pos = {}
    for frame in frames:
        for k, inst in enumerate(frame.instances):
            pos[(frame.index, inst.track_id)] = k
    out = []
    for tr in tracks:
        for t in tr.frames:
            out.append({"track_id": tr.track_id, "frame": t, "instance": pos[(t, tr.track_id)]})
    return out
