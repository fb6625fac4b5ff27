from fractions import Fraction

import numpy as np
import pytest

from fnreduce.masks import CenterPoint, PixelMask
from fnreduce.sequence import Frame, InstancePrediction
from fnreduce.synth import SynthConfig, generate_scene
from fnreduce.tracker import (
    TrackerConfig, greedy_match, predict_center, prefilter_ignored, track_sequence,
)

from oracles import best_assignment, block, center, dense, iou_dense, ols_predict, round_half_away, shift_dense


def inst(mask, class_id=1, score=0.9):
    return InstancePrediction(mask, class_id, score)


def frame(t, instances, height=8, width=16, ignored=None):
    return Frame(t, height, width, instances, ignored)


# -- motion prediction ---------------------------------------------------------------


def test_predict_center_examples():
    assert predict_center([(1, CenterPoint(0, 0)), (2, CenterPoint(1, 1))], 3) == (2.0, 2.0)
    const = [(t, CenterPoint(4.5, 2.0)) for t in range(4)]
    assert predict_center(const, 17) == (4.5, 2.0)
    hist = [(1, CenterPoint(0, 0)), (2, CenterPoint(2, 0)), (3, CenterPoint(7, 0))]
    assert predict_center(hist, 4).v == pytest.approx(10.0, abs=1e-12)


def test_predict_center_errors():
    with pytest.raises(ValueError):
        predict_center([(1, CenterPoint(0, 0))], 2)
    with pytest.raises(ValueError):
        predict_center([(1, CenterPoint(0, 0)), (1, CenterPoint(1, 1))], 2)


# -- matching --------------------------------------------------------------------------


def test_empty_previous_frame_gives_new_ids():
    frames = [frame(0, []), frame(1, [inst(block(0, 0, 2, 2, 8, 16)), inst(block(4, 4, 2, 2, 8, 16))])]
    out, tracks = track_sequence(frames)
    assert [i.track_id for i in out[1].instances] == [1, 2]
    assert len(tracks) == 2


def test_static_masks_keep_ids():
    a, b = block(0, 0, 2, 2, 8, 16), block(4, 8, 3, 3, 8, 16)
    frames = [frame(t, [inst(a), inst(b)]) for t in range(5)]
    out, tracks = track_sequence(frames)
    assert len(tracks) == 2
    assert all([i.track_id for i in f.instances] == [1, 2] for f in out)


def crossing_frames():
    # class 1 moves right, class 2 moves left; at t=2 both masks coincide and
    # the class 2 instance is listed first
    frames = []
    for t in range(5):
        a = inst(block(0, 2 * t, 4, 4, 8, 16), class_id=1)
        b = inst(block(0, 8 - 2 * t, 4, 4, 8, 16), class_id=2)
        frames.append(frame(t, [b, a] if t >= 2 else [a, b]))
    return frames


def test_class_gate_forces_motion_consistent_assignment():
    out, _ = track_sequence(crossing_frames())
    ids = {c: {i.track_id for f in out for i in f.instances if i.class_id == c} for c in (1, 2)}
    assert len(ids[1]) == 1 and len(ids[2]) == 1 and ids[1] != ids[2]


def test_without_class_gate_the_tie_swaps_identities():
    out, _ = track_sequence(crossing_frames(), TrackerConfig(class_gated=False))
    ids_class1 = {i.track_id for f in out for i in f.instances if i.class_id == 1}
    assert len(ids_class1) == 2


def test_matching_is_one_to_one():
    seq = generate_scene(SynthConfig(num_sequences=1, frames_per_sequence=60, seed=11))[0]
    out, tracks = track_sequence(seq.frames)
    for f in out:
        ids = [i.track_id for i in f.instances]
        assert len(ids) == len(set(ids))
    assert sum(len(tr.entries) for tr in tracks) == sum(len(f.instances) for f in out)


def test_greedy_match_tie_break_is_order_free():
    pairs = [(0.5, 1, 0), (0.5, 0, 0), (0.4, 0, 1)]
    assert greedy_match(pairs) == greedy_match(list(reversed(pairs))) == {0: 0}


def test_zero_dropout_gives_one_track_per_object():
    seq = generate_scene(SynthConfig(num_sequences=1, frames_per_sequence=80, dropout=0.0, fp_rate=0.0,
                                     min_objects=1, max_objects=1, seed=1))[0]
    out, _ = track_sequence(seq.frames)
    pairs = set()
    for f, gt in zip(out, seq.gt):
        for p, g in zip(f.instances, gt.instances):
            pairs.add((g.gt_track_id, p.track_id))
    gt_ids = {g for g, _ in pairs}
    tr_ids = {t for _, t in pairs}
    assert len(pairs) == len(gt_ids) == len(tr_ids)


# -- ignored region ----------------------------------------------------------------------


def test_prefilter_boundary():
    full = PixelMask.from_array(np.ones((10, 100), dtype=bool))
    r799 = PixelMask(10, 100, (0, 799, 201))
    r800 = PixelMask(10, 100, (0, 800, 200))
    i = inst(full)
    assert prefilter_ignored(Frame(0, 10, 100, [i], None)) == [i]
    assert prefilter_ignored(Frame(0, 10, 100, [i], r799)) == [i]
    assert prefilter_ignored(Frame(0, 10, 100, [i], r800)) == []
    inside = inst(block(0, 0, 2, 2, 10, 100))
    assert prefilter_ignored(Frame(0, 10, 100, [inside], block(0, 0, 5, 5, 10, 100))) == []


# -- brute-force assignment oracle ---------------------------------------------------------


def oracle_shift(history, t, window=5):
    """Dense motion-shifted mask of a track's last entry, exact arithmetic."""
    last_t, last = history[-1]
    if len(history) < 2:
        return last
    recent = history[-window:]
    cs = [center(m) for _, m in recent]
    ts = [k for k, _ in recent]
    pv = ols_predict(ts, [c[0] for c in cs], t)
    ph = ols_predict(ts, [c[1] for c in cs], t)
    return shift_dense(last, round_half_away(pv - cs[-1][0]), round_half_away(ph - cs[-1][1]))


def test_assignment_equals_exhaustive_oracle_on_crossing_scene():
    seq = generate_scene(SynthConfig(num_sequences=1, frames_per_sequence=100, seed=7))[0]
    out, _ = track_sequence(seq.frames)
    history: dict[int, list] = {}
    checked = 0
    for t in range(1, len(out)):
        prev = out[t - 1].instances
        for p in prev:
            history.setdefault(p.track_id, []).append((t - 1, dense(p.mask)))
        curr = out[t].instances
        shifted = [oracle_shift(history[p.track_id], t) for p in prev]
        w = np.zeros((len(prev), len(curr)))
        ok = np.zeros_like(w, dtype=bool)
        for a, (p, m) in enumerate(zip(prev, shifted)):
            for b, c in enumerate(curr):
                o = iou_dense(m, dense(c.mask)) if m.any() else Fraction(0)
                w[a, b] = float(o)
                ok[a, b] = p.class_id == c.class_id and o >= Fraction(1, 4)
        expect = {b: prev[a].track_id for b, a in best_assignment(w, ok).items()}
        got = {b: c.track_id for b, c in enumerate(curr) if c.track_id in {p.track_id for p in prev}}
        assert got == expect, f"frame {t}"
        checked += len(expect)
    assert checked > 200
