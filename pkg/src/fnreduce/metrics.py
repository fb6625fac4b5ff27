"""Per-instance metrics computed from geometry, tracking and depth."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, fields
from typing import Iterable, Sequence as Seq

import numpy as np

from .masks import (
    EmptyMaskError, PixelMask, bounding_box, geometric_center, iou, overlap_ratio,
    pixel_sums, shift_by_vector, split_inner_boundary, union_all,
)
from .sequence import DepthMap, Frame, InstancePrediction
from .tracker import Track, extrapolate

DEVIATION_WINDOW = 5


@dataclass
class MetricRecord:
    sequence: str
    track_id: int
    frame: int
    S: int
    S_in: int
    S_bd: int
    S_rel: float
    S_in_rel: float
    center_v: float
    center_h: float
    class_id: int
    score: float
    occlusion: float
    D_mean: float
    D_in: float
    D_bd: float
    D_rel: float
    D_in_rel: float
    d_d: float
    d_s: float
    d_c: float
    v: float
    r: float
    f: float
    iou_gt: float
    origin: str

    @property
    def key(self) -> tuple[str, int, int]:
        return self.sequence, self.track_id, self.frame


COLUMNS = [f.name for f in fields(MetricRecord)]
# numeric metrics fed to the meta classifier (class is one-hot encoded separately)
FEATURE_COLUMNS = [
    "S", "S_in", "S_bd", "S_rel", "S_in_rel",
    "D_mean", "D_in", "D_bd", "D_rel", "D_in_rel",
    "center_v", "center_h", "score", "occlusion", "d_d",
    "d_s", "d_c", "v", "r", "f",
]
DEPTH_COLUMNS = ["D_mean", "D_in", "D_bd", "D_rel", "D_in_rel", "d_d"]


def size_metrics(mask: PixelMask) -> tuple[int, int, int, float, float]:
    inner, boundary = split_inner_boundary(mask)
    s, s_in, s_bd = mask.area, inner.area, boundary.area
    return s, s_in, s_bd, s / s_bd, s_in / s_bd


def depth_metrics(mask: PixelMask, depth: DepthMap | None) -> tuple[float, float, float, float, float]:
    """Mean depth over the whole instance, its inner part and its boundary, plus
    the two relative variants. Absent depth gives NaN for all five."""
    if depth is None:
        return (math.nan,) * 5
    if depth.shape != (mask.height, mask.width):
        raise ValueError("depth map and mask grids differ")
    if mask.is_empty:
        raise EmptyMaskError("depth metrics undefined for an empty mask")
    inner, boundary = split_inner_boundary(mask)
    vals = depth.values.astype(np.float64)
    arr_in, arr_bd = inner.to_array(), boundary.to_array()
    sum_in, sum_bd = float(vals[arr_in].sum()), float(vals[arr_bd].sum())
    s_in, s_bd = inner.area, boundary.area
    d_mean = (sum_in + sum_bd) / (s_in + s_bd)
    d_in = sum_in / s_in if s_in else 0.0
    d_bd = sum_bd / s_bd
    s_rel, s_in_rel = (s_in + s_bd) / s_bd, s_in / s_bd
    return d_mean, d_in, d_bd, d_mean * s_rel, d_in * s_in_rel


def align_to(prev: PixelMask, curr: PixelMask) -> PixelMask:
    """Shift ``prev`` so its geometric center coincides with that of ``curr`` (rounded)."""
    cp, cc = geometric_center(prev), geometric_center(curr)
    return shift_by_vector(prev, cc.v - cp.v, cc.h - cp.h)


def occlusion(prev: InstancePrediction | None, curr: InstancePrediction,
              others: Iterable[InstancePrediction]) -> float:
    """Share of the center-aligned previous mask covered by the other instances of the frame."""
    if prev is None:
        return 0.0
    others = list(others)
    if not others:
        return 0.0
    aligned = align_to(prev.mask, curr.mask)
    if aligned.is_empty:
        return 0.0
    cover = union_all((o.mask for o in others), curr.mask.height, curr.mask.width)
    return overlap_ratio(aligned, cover)


def deformation(prev: InstancePrediction | None, curr: InstancePrediction) -> float:
    if prev is None:
        return 1.0
    return iou(align_to(prev.mask, curr.mask), curr.mask)


def temporal_deviation(series: Seq[tuple[int, float]], t: int, actual: float) -> float:
    """|least-squares prediction at ``t`` - actual|; 0 for fewer than two points."""
    if len(series) < 2:
        return 0.0
    return abs(extrapolate([s[0] for s in series], [s[1] for s in series], t) - actual)


def center_deviation(series: Seq[tuple[int, tuple[float, float]]], t: int,
                     actual: tuple[float, float]) -> float:
    if len(series) < 2:
        return 0.0
    ts = [s[0] for s in series]
    pv = extrapolate(ts, [s[1][0] for s in series], t)
    ph = extrapolate(ts, [s[1][1] for s in series], t)
    return math.hypot(pv - actual[0], ph - actual[1])


def aspect_ratio(mask: PixelMask) -> float:
    box = bounding_box(mask)
    return box.height / box.width


def compute_track_records(track: Track, frames: dict[int, Frame], sequence: str = "",
                          window: int = DEVIATION_WINDOW) -> list[MetricRecord]:
    """Metrics for every entry of ``track``; ``frames`` maps index -> augmented frame.

    Temporal quantities look at the previous entries of the same track; the
    survival score ``v`` and ``iou_gt`` are left as NaN for later stages.
    """
    records = []
    past: list[tuple[int, MetricRecord]] = []
    prev_inst = None
    for t in track.frames:
        inst = track.entries[t]
        frame = frames[t]
        s, s_in, s_bd, s_rel, s_in_rel = size_metrics(inst.mask)
        d_mean, d_in, d_bd, d_rel, d_in_rel = depth_metrics(inst.mask, frame.depth)
        n, sv, sh = pixel_sums(inst.mask)
        center = (sv / n, sh / n)
        others = [o for o in frame.instances if o.track_id != inst.track_id]
        recent = past[-window:]
        if frame.depth is None:
            d_d = math.nan
        else:
            d_d = temporal_deviation([(k, r.D_mean) for k, r in recent], t, d_mean)
        rec = MetricRecord(
            sequence=sequence, track_id=track.track_id, frame=t,
            S=s, S_in=s_in, S_bd=s_bd, S_rel=s_rel, S_in_rel=s_in_rel,
            center_v=center[0], center_h=center[1],
            class_id=inst.class_id, score=inst.score,
            occlusion=occlusion(prev_inst, inst, others),
            D_mean=d_mean, D_in=d_in, D_bd=d_bd, D_rel=d_rel, D_in_rel=d_in_rel,
            d_d=d_d,
            d_s=temporal_deviation([(k, r.S) for k, r in recent], t, s),
            d_c=center_deviation([(k, (r.center_v, r.center_h)) for k, r in recent], t, center),
            v=math.nan,
            r=aspect_ratio(inst.mask),
            f=deformation(prev_inst, inst),
            iou_gt=math.nan,
            origin=inst.origin.value,
        )
        records.append(rec)
        past.append((t, rec))
        prev_inst = inst
    return records


def compute_all(tracks: list[Track], frames: list[Frame], sequence: str = "",
                survival_model=None) -> list[MetricRecord]:
    """Records for all tracks, ordered by (frame, track_id)."""
    by_index = {f.index: f for f in frames}
    records = []
    for track in tracks:
        records.extend(compute_track_records(track, by_index, sequence))
    records.sort(key=lambda r: (r.frame, r.track_id))
    if survival_model is not None:
        from .survival import attach_survival
        attach_survival(records, survival_model)
    return records


# -- CSV ----------------------------------------------------------------------

_INT_COLUMNS = {"track_id", "frame", "S", "S_in", "S_bd", "class_id"}
_STR_COLUMNS = {"sequence", "origin"}


def _fmt(value) -> str:
    if isinstance(value, float):
        return "nan" if math.isnan(value) else repr(value)
    return str(value)


def records_to_csv(records: Iterable[MetricRecord]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(COLUMNS)
    ordered = sorted(records, key=lambda r: (r.sequence, r.frame, r.track_id))
    for rec in ordered:
        writer.writerow([_fmt(getattr(rec, c)) for c in COLUMNS])
    return buf.getvalue()


def records_from_csv(text: str) -> list[MetricRecord]:
    reader = csv.reader(io.StringIO(text))
    header = next(reader)
    if header != COLUMNS:
        raise ValueError(f"unexpected metrics header: {header}")
    out = []
    for row in reader:
        kw = {}
        for name, raw in zip(header, row):
            if name in _STR_COLUMNS:
                kw[name] = raw
            elif name in _INT_COLUMNS:
                kw[name] = int(raw)
            else:
                kw[name] = float(raw)
        out.append(MetricRecord(**kw))
    return out


def records_matrix(records: Seq[MetricRecord], columns: Seq[str]) -> np.ndarray:
    return np.array([[float(getattr(r, c)) for c in columns] for r in records], dtype=float).reshape(
        len(records), len(columns)
    )
