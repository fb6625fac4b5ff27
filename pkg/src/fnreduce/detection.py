"""False negative detection: reconstruct instances missing from a track.

Phase 1 walks every track through the sequence. In a frame where the track is
absent, at most ``gap_limit`` frames after its last observation and with at
least two observed centers, the center is extrapolated by least squares over
all previous centers and the last observed mask is shifted there. Phase 2
accepts a reconstruction only if it is not mostly inside the ignored region
and does not duplicate a network prediction of that frame.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

from .masks import iou, overlap_ratio, shift_by_vector
from .sequence import Frame, InstancePrediction, Origin, Sequence
from .tracker import Track, TrackerConfig, predict_center, track_sequence

log = logging.getLogger(__name__)


@dataclass
class DetectorConfig:
    gap_limit: int = 10
    ignore_cover_threshold: float = 0.8
    duplicate_iou_threshold: float = 0.95
    min_history: int = 2
    # None: regress on every previous center
    regression_window: int | None = None

    def validate(self) -> None:
        if self.gap_limit < 1:
            raise ValueError("gap_limit must be at least 1")
        for name in ("ignore_cover_threshold", "duplicate_iou_threshold"):
            if not 0.0 < getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must lie in (0, 1]")
        if self.min_history < 2:
            raise ValueError("min_history must be at least 2")
        if self.regression_window is not None and self.regression_window < 2:
            raise ValueError("regression_window must be at least 2")


@dataclass
class DetectionReport:
    predicted: int = 0
    candidates: int = 0
    detected: int = 0
    dropped_empty: int = 0
    suppressed_ignored: int = 0
    suppressed_duplicate: int = 0
    per_frame: dict[int, int] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "PI": self.predicted,
            "DI": self.detected,
            "candidates": self.candidates,
            "dropped_empty": self.dropped_empty,
            "suppressed_ignored": self.suppressed_ignored,
            "suppressed_duplicate": self.suppressed_duplicate,
        }


def track_candidates(track: Track, num_frames: int, cfg: DetectorConfig,
                     report: DetectionReport | None = None) -> dict[int, InstancePrediction]:
    """Phase 1 for one track: frame -> reconstructed instance."""
    out = {}
    history = []  # (frame, center) of observed frames, never of reconstructions
    scores = []
    t_last = None  # None until the track is first seen
    centers = dict(track.centers)
    t_end = min(num_frames, max(track.entries) + cfg.gap_limit + 1)
    for t in range(min(track.entries), t_end):
        if t in track.entries:
            history.append((t, centers[t]))
            scores.append(track.entries[t].score)
            t_last = t
            continue
        if t_last is None or t - t_last > cfg.gap_limit or len(history) < cfg.min_history:
            continue
        used = history if cfg.regression_window is None else history[-cfg.regression_window:]
        pred = predict_center(used, t)
        last_center = centers[t_last]
        source = track.entries[t_last]
        mask = shift_by_vector(source.mask, pred.v - last_center.v, pred.h - last_center.h)
        if mask.is_empty:
            if report is not None:
                report.dropped_empty += 1
            log.debug("track %s frame %s: reconstruction left the image", track.track_id, t)
            continue
        out[t] = InstancePrediction(
            mask=mask,
            class_id=source.class_id,
            score=min(1.0, max(0.0, sum(scores) / len(scores))),
            track_id=track.track_id,
            origin=Origin.DETECTED,
            source_frame=t_last,
        )
    return out


def detect_false_negatives(tracks: list[Track], num_frames: int, cfg: DetectorConfig | None = None,
                           report: DetectionReport | None = None) -> dict[int, list[InstancePrediction]]:
    """Phase 1 over all tracks: frame -> candidates ordered by track id."""
    cfg = cfg or DetectorConfig()
    per_frame: dict[int, list[InstancePrediction]] = {}
    for track in sorted(tracks, key=lambda tr: tr.track_id):
        for t, inst in track_candidates(track, num_frames, cfg, report).items():
            per_frame.setdefault(t, []).append(inst)
    if report is not None:
        report.candidates = sum(len(v) for v in per_frame.values())
    return per_frame


def is_covered(candidate: InstancePrediction, frame: Frame, cfg: DetectorConfig) -> str | None:
    """Reason the candidate is suppressed, or None when it is accepted."""
    if frame.ignored is not None and not frame.ignored.is_empty:
        if overlap_ratio(candidate.mask, frame.ignored) >= cfg.ignore_cover_threshold:
            return "ignored"
    for k in frame.instances:
        if k.origin is Origin.NETWORK and iou(candidate.mask, k.mask) > cfg.duplicate_iou_threshold:
            return "duplicate"
    return None


def covering_check(candidates: list[InstancePrediction], frame: Frame, cfg: DetectorConfig | None = None,
                   report: DetectionReport | None = None) -> Frame:
    """Phase 2 for one frame: return the frame with accepted candidates appended.

    Candidates are compared with the frame's network predictions only.
    """
    cfg = cfg or DetectorConfig()
    accepted = []
    for cand in candidates:
        reason = is_covered(cand, frame, cfg)
        if reason is None:
            accepted.append(cand)
        elif report is not None:
            if reason == "ignored":
                report.suppressed_ignored += 1
            else:
                report.suppressed_duplicate += 1
    if report is not None:
        report.detected += len(accepted)
        report.per_frame[frame.index] = len(accepted)
    return replace(frame, instances=list(frame.instances) + accepted)


def augment_frames(tracked: list[Frame], tracks: list[Track], cfg: DetectorConfig | None = None,
                   report: DetectionReport | None = None) -> list[Frame]:
    cfg = cfg or DetectorConfig()
    cfg.validate()
    if report is not None:
        report.predicted += sum(len(f.instances) for f in tracked)
    candidates = detect_false_negatives(tracks, len(tracked), cfg, report)
    return [covering_check(candidates.get(f.index, []), f, cfg, report) for f in tracked]


def run_detection(seq: Sequence, tracker_cfg: TrackerConfig | None = None,
                  detector_cfg: DetectorConfig | None = None) -> tuple[Sequence, DetectionReport]:
    """Track the sequence, then add the accepted reconstructions to its frames."""
    report = DetectionReport()
    tracked, tracks = track_sequence(seq.frames, tracker_cfg)
    frames = augment_frames(tracked, tracks, detector_cfg, report)
    log.info("%s: PI=%d DI=%d", seq.name, report.predicted, report.detected)
    return replace(seq, frames=frames), report
