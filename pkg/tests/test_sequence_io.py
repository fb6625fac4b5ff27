import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from fnreduce.masks import PixelMask
from fnreduce.sequence import DepthMap, Frame, GroundTruthInstance, GtFrame, InstancePrediction, Origin, Sequence
from fnreduce.sequence_io import (
    SequenceFormatError, coco_string_to_counts, counts_to_coco_string, import_kitti_mots,
    load_dataset, load_sequence, mask_from_coco, mask_to_coco, read_pfm, save_dataset,
    save_sequence, write_pfm,
)
from fnreduce.synth import SynthConfig, generate_scene

from oracles import block


def one_frame_sequence():
    m = block(1, 1, 2, 2, 4, 5)
    frame = Frame(0, 4, 5, [InstancePrediction(m, 1, 0.75)])
    return Sequence("tiny", 4, 5, [frame], gt=[GtFrame(0, [GroundTruthInstance(m, 1, 7)])])


def test_single_frame_round_trip(tmp_path):
    seq = one_frame_sequence()
    save_sequence(seq, tmp_path / "tiny")
    back = load_sequence(tmp_path / "tiny")
    assert len(back.frames) == 1 and len(back.frames[0].instances) == 1
    assert back == seq


def test_synthetic_round_trip(tmp_path):
    seqs = generate_scene(SynthConfig(num_sequences=2, frames_per_sequence=12, seed=3))
    save_dataset(seqs, tmp_path)
    assert load_dataset(tmp_path) == seqs


def test_round_trip_keeps_tracking_fields(tmp_path):
    m = block(0, 0, 2, 2, 4, 4)
    inst = InstancePrediction(m, 2, 0.5, track_id=3, origin=Origin.DETECTED, source_frame=0)
    ign = block(3, 3, 1, 1, 4, 4)
    seq = Sequence("s", 4, 4, [Frame(0, 4, 4, [inst], ign, DepthMap(np.full((4, 4), 2.5)))])
    save_sequence(seq, tmp_path / "s")
    assert load_sequence(tmp_path / "s") == seq


def test_empty_directory_has_no_frames(tmp_path):
    (tmp_path / "sequence.json").write_text(json.dumps({"name": "e", "height": 4, "width": 4, "frames": []}))
    with pytest.raises(SequenceFormatError, match="no frames"):
        load_sequence(tmp_path)


def test_missing_manifest(tmp_path):
    with pytest.raises(SequenceFormatError, match="sequence.json"):
        load_sequence(tmp_path)


def test_malformed_rle_reports_file_and_line(tmp_path):
    save_sequence(one_frame_sequence(), tmp_path)
    good = (tmp_path / "pred_000000.txt").read_text()
    bad = json.dumps({"class_id": 1, "score": 0.5, "rle": "size:[4,5]; counts:[3,4]"})
    (tmp_path / "pred_000000.txt").write_text(good + bad + "\n")
    with pytest.raises(SequenceFormatError, match=r"pred_000000.txt:2"):
        load_sequence(tmp_path)


def test_grid_mismatch_is_rejected(tmp_path):
    save_sequence(one_frame_sequence(), tmp_path)
    rec = {"class_id": 1, "score": 0.5, "rle": block(0, 0, 1, 1, 3, 3).to_text()}
    (tmp_path / "pred_000000.txt").write_text(json.dumps(rec) + "\n")
    with pytest.raises(SequenceFormatError, match="grid"):
        load_sequence(tmp_path)


def test_missing_frame_file(tmp_path):
    save_sequence(one_frame_sequence(), tmp_path)
    (tmp_path / "pred_000000.txt").unlink()
    with pytest.raises(SequenceFormatError, match="missing frame"):
        load_sequence(tmp_path)


def test_resave_removes_stale_frames(tmp_path):
    seqs = generate_scene(SynthConfig(num_sequences=1, frames_per_sequence=6, seed=1))
    save_sequence(seqs[0], tmp_path)
    short = generate_scene(SynthConfig(num_sequences=1, frames_per_sequence=3, seed=1))[0]
    save_sequence(short, tmp_path)
    assert not (tmp_path / "pred_000004.txt").exists()
    assert load_sequence(tmp_path) == short


def test_pfm_round_trip_and_row_order(tmp_path):
    vals = np.arange(12, dtype=np.float32).reshape(3, 4) + 1
    write_pfm(tmp_path / "d.pfm", vals)
    raw = (tmp_path / "d.pfm").read_bytes()
    assert raw.startswith(b"Pf\n4 3\n-1.0\n")
    # rows are stored bottom-to-top
    assert np.frombuffer(raw[-16:], dtype="<f4").tolist() == vals[0].tolist()
    assert np.array_equal(read_pfm(tmp_path / "d.pfm"), vals)


# -- COCO / KITTI-MOTS -----------------------------------------------------------------


def test_coco_string_hand_example():
    # 2x2 block at rows 1-2, cols 1-2 of a 4x4 image; column-major runs 5,2,2,2,5
    m = block(1, 1, 2, 2, 4, 4)
    assert mask_to_coco(m) == [5, 2, 2, 2, 5]
    assert counts_to_coco_string([5, 2, 2, 2, 5]) == "52203"
    assert coco_string_to_counts("52203") == [5, 2, 2, 2, 5]


@given(st.lists(st.integers(0, 5000), min_size=1, max_size=30))
def test_coco_string_round_trip(counts):
    assert coco_string_to_counts(counts_to_coco_string(counts)) == counts


def test_mask_coco_round_trip():
    rng = np.random.default_rng(0)
    for _ in range(20):
        arr = rng.random((7, 9)) < 0.4
        m = PixelMask.from_array(arr)
        assert mask_from_coco(mask_to_coco(m), 7, 9) == m


def test_kitti_empty_file(tmp_path):
    p = tmp_path / "0000.txt"
    p.write_text("")
    seq = import_kitti_mots(p)
    assert seq.frames == [] and seq.gt == []


def test_kitti_one_line(tmp_path):
    p = tmp_path / "0001.txt"
    p.write_text("0 1002 2 4 4 52203\n")
    seq = import_kitti_mots(p)
    assert len(seq.gt) == 1
    (g,) = seq.gt[0].instances
    assert (g.class_id, g.gt_track_id) == (2, 1002)
    assert g.mask == block(1, 1, 2, 2, 4, 4)
    assert seq.frames[0].ignored is None


def test_kitti_ignore_class_goes_to_ignored_region(tmp_path):
    p = tmp_path / "0002.txt"
    p.write_text("0 1002 2 4 4 52203\n0 10000 10 4 4 " + counts_to_coco_string([0, 4, 12]) + "\n")
    seq = import_kitti_mots(p)
    assert len(seq.gt[0].instances) == 1
    assert seq.frames[0].ignored == block(0, 0, 4, 1, 4, 4)


def test_kitti_malformed_line(tmp_path):
    p = tmp_path / "0003.txt"
    p.write_text("0 1 1 4 4\n")
    with pytest.raises(SequenceFormatError, match=":1:"):
        import_kitti_mots(p)
