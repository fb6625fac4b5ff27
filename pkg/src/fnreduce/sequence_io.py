"""On-disk sequence layout, depth PFM files and the KITTI-MOTS text adapter.

A sequence directory holds ``sequence.json`` plus per-frame files::

    pred_000000.txt   one JSON record per predicted instance
    gt_000000.txt     one JSON record per ground-truth instance
    ign_000000.txt    ignored region as a single RLE text line
    depth_000000.pfm  little-endian float32 portable float map
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .masks import MaskError, PixelMask
from .sequence import (
    DepthMap, Frame, GroundTruthInstance, GtFrame, InstancePrediction, Origin, Sequence,
)

MANIFEST = "sequence.json"


class SequenceFormatError(ValueError):
    pass


# -- portable float maps ------------------------------------------------------


def write_pfm(path, values: np.ndarray) -> None:
    values = np.asarray(values, dtype="<f4")
    height, width = values.shape
    header = f"Pf\n{width} {height}\n-1.0\n".encode("ascii")
    # PFM stores rows bottom-to-top
    Path(path).write_bytes(header + np.ascontiguousarray(values[::-1]).tobytes())


def read_pfm(path) -> np.ndarray:
    data = Path(path).read_bytes()
    parts = data.split(b"\n", 3)
    if len(parts) < 4 or parts[0].strip() != b"Pf":
        raise SequenceFormatError(f"{path}: not a single-channel PFM file")
    try:
        width, height = (int(x) for x in parts[1].split())
        scale = float(parts[2])
    except ValueError as exc:
        raise SequenceFormatError(f"{path}: bad PFM header") from exc
    dtype = "<f4" if scale < 0 else ">f4"
    body = parts[3]
    if len(body) != 4 * width * height:
        raise SequenceFormatError(f"{path}: expected {width * height} floats")
    return np.frombuffer(body, dtype=dtype).reshape(height, width)[::-1].astype(np.float32)


# -- frame files --------------------------------------------------------------


def _instance_record(inst: InstancePrediction) -> dict:
    rec = {
        "class_id": inst.class_id,
        "score": inst.score,
        "track_id": inst.track_id,
        "origin": inst.origin.value,
        "rle": inst.mask.to_text(),
    }
    if inst.source_frame is not None:
        rec["source_frame"] = inst.source_frame
    return rec


def _parse_lines(path: Path):
    for lineno, line in enumerate(path.read_text().splitlines(), start=1):
        if not line.strip():
            continue
        try:
            yield lineno, json.loads(line)
        except json.JSONDecodeError as exc:
            raise SequenceFormatError(f"{path}:{lineno}: {exc.msg}") from exc


def _parse_mask(path: Path, lineno: int, text, grid: tuple[int, int]) -> PixelMask:
    try:
        mask = PixelMask.from_text(text)
    except (MaskError, TypeError, AttributeError) as exc:
        raise SequenceFormatError(f"{path}:{lineno}: {exc}") from exc
    if (mask.height, mask.width) != grid:
        raise SequenceFormatError(
            f"{path}:{lineno}: mask grid {mask.height}x{mask.width} != frame grid {grid[0]}x{grid[1]}"
        )
    return mask


def read_predictions(path, grid) -> list[InstancePrediction]:
    path = Path(path)
    out = []
    for lineno, rec in _parse_lines(path):
        try:
            out.append(InstancePrediction(
                mask=_parse_mask(path, lineno, rec["rle"], grid),
                class_id=int(rec["class_id"]),
                score=float(rec["score"]),
                track_id=rec.get("track_id"),
                origin=Origin(rec.get("origin", "network")),
                source_frame=rec.get("source_frame"),
            ))
        except (KeyError, ValueError) as exc:
            if isinstance(exc, SequenceFormatError):
                raise
            raise SequenceFormatError(f"{path}:{lineno}: {exc!r}") from exc
    return out


def read_ground_truth(path, grid) -> list[GroundTruthInstance]:
    path = Path(path)
    out = []
    for lineno, rec in _parse_lines(path):
        try:
            out.append(GroundTruthInstance(
                mask=_parse_mask(path, lineno, rec["rle"], grid),
                class_id=int(rec["class_id"]),
                gt_track_id=int(rec["gt_track_id"]),
            ))
        except (KeyError, ValueError) as exc:
            if isinstance(exc, SequenceFormatError):
                raise
            raise SequenceFormatError(f"{path}:{lineno}: {exc!r}") from exc
    ids = [g.gt_track_id for g in out]
    if len(ids) != len(set(ids)):
        raise SequenceFormatError(f"{path}: duplicate gt_track_id in frame")
    return out


def _write_lines(path: Path, records) -> None:
    text = "".join(json.dumps(r, sort_keys=True) + "\n" for r in records)
    path.write_text(text)


def save_sequence(seq: Sequence, path) -> Path:
    root = Path(path)
    root.mkdir(parents=True, exist_ok=True)
    for stale in root.glob("*_[0-9][0-9][0-9][0-9][0-9][0-9].*"):
        if stale.name.split("_")[0] in ("pred", "gt", "ign", "depth"):
            stale.unlink()
    frames = []
    for frame in seq.frames:
        t = frame.index
        name = f"pred_{t:06d}.txt"
        _write_lines(root / name, (_instance_record(i) for i in frame.instances))
        frames.append(name)
        if frame.ignored is not None:
            (root / f"ign_{t:06d}.txt").write_text(frame.ignored.to_text() + "\n")
        if frame.depth is not None:
            write_pfm(root / f"depth_{t:06d}.pfm", frame.depth.values)
    if seq.gt is not None:
        for gt in seq.gt:
            _write_lines(root / f"gt_{gt.index:06d}.txt", (
                {"class_id": g.class_id, "gt_track_id": g.gt_track_id, "rle": g.mask.to_text()}
                for g in gt.instances
            ))
    manifest = {
        "name": seq.name,
        "height": seq.height,
        "width": seq.width,
        "fps": seq.fps,
        "frames": frames,
        "has_gt": seq.gt is not None,
    }
    if seq.meta:
        manifest["meta"] = seq.meta
    (root / MANIFEST).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return root


def load_sequence(path) -> Sequence:
    root = Path(path)
    manifest_path = root / MANIFEST
    if not manifest_path.exists():
        raise SequenceFormatError(f"{root}: missing {MANIFEST}")
    try:
        manifest = json.loads(manifest_path.read_text())
        height, width = int(manifest["height"]), int(manifest["width"])
        names = list(manifest["frames"])
    except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        raise SequenceFormatError(f"{manifest_path}: {exc!r}") from exc
    if not names:
        raise SequenceFormatError(f"{root}: no frames")
    grid = (height, width)
    frames, gts = [], []
    has_gt = manifest.get("has_gt", (root / "gt_000000.txt").exists())
    for t, name in enumerate(names):
        pred_path = root / name
        if not pred_path.exists():
            raise SequenceFormatError(f"{root}: missing frame file {name}")
        ign_path = root / f"ign_{t:06d}.txt"
        depth_path = root / f"depth_{t:06d}.pfm"
        ignored = None
        if ign_path.exists():
            ignored = _parse_mask(ign_path, 1, ign_path.read_text().strip(), grid)
        depth = None
        if depth_path.exists():
            values = read_pfm(depth_path)
            if values.shape != grid:
                raise SequenceFormatError(f"{depth_path}: depth grid {values.shape} != {grid}")
            depth = DepthMap(values)
        frames.append(Frame(t, height, width, read_predictions(pred_path, grid), ignored, depth))
        if has_gt:
            gt_path = root / f"gt_{t:06d}.txt"
            if not gt_path.exists():
                raise SequenceFormatError(f"{root}: missing ground truth file {gt_path.name}")
            gts.append(GtFrame(t, read_ground_truth(gt_path, grid)))
    return Sequence(
        name=manifest.get("name", root.name),
        height=height,
        width=width,
        frames=frames,
        gt=gts if has_gt else None,
        fps=float(manifest.get("fps", 10.0)),
        meta=manifest.get("meta", {}),
    )


def find_sequences(path) -> list[Path]:
    """A sequence directory itself, or every sequence directory directly below it."""
    root = Path(path)
    if (root / MANIFEST).exists():
        return [root]
    found = sorted(p.parent for p in root.glob(f"*/{MANIFEST}"))
    if not found:
        raise SequenceFormatError(f"{root}: no sequences found")
    return found


def load_dataset(path) -> list[Sequence]:
    return [load_sequence(p) for p in find_sequences(path)]


def save_dataset(sequences, path) -> Path:
    root = Path(path)
    root.mkdir(parents=True, exist_ok=True)
    for seq in sequences:
        save_sequence(seq, root / seq.name)
    return root


# -- KITTI-MOTS ---------------------------------------------------------------
#
# Annotation lines: "<frame> <object_id> <class_id> <height> <width> <rle>", where
# rle is the COCO compressed string of a column-major mask. Class 10 (object id
# 10000) marks ignored regions; KITTI uses 1 = car, 2 = pedestrian.

KITTI_CLASSES = {1, 2}
KITTI_IGNORE_CLASS = 10


def coco_string_to_counts(s: str) -> list[int]:
    counts = []
    p = 0
    while p < len(s):
        x = 0
        k = 0
        more = True
        while more:
            c = ord(s[p]) - 48
            x |= (c & 0x1F) << (5 * k)
            more = bool(c & 0x20)
            p += 1
            k += 1
            if not more and (c & 0x10):
                x |= -1 << (5 * k)
        if len(counts) > 2:
            x += counts[-2]
        counts.append(x)
    return counts


def counts_to_coco_string(counts) -> str:
    out = []
    for idx, c in enumerate(counts):
        x = int(c)
        if idx > 2:
            x -= int(counts[idx - 2])
        more = True
        while more:
            c5 = x & 0x1F
            x >>= 5
            more = x != -1 if c5 & 0x10 else x != 0
            if more:
                c5 |= 0x20
            out.append(chr(c5 + 48))
    return "".join(out)


def mask_from_coco(counts, height: int, width: int) -> PixelMask:
    values = np.zeros(len(counts), dtype=bool)
    values[1::2] = True
    flat = np.repeat(values, counts)
    if flat.size != height * width:
        raise MaskError(f"COCO counts cover {flat.size} pixels, expected {height * width}")
    return PixelMask.from_array(flat.reshape(width, height).T)


def mask_to_coco(mask: PixelMask) -> list[int]:
    flat = mask.to_array().T.ravel().astype(np.int8)
    change = np.flatnonzero(np.diff(flat)) + 1
    runs = np.diff(np.concatenate(([0], change, [flat.size]))).tolist()
    if flat[0]:
        runs.insert(0, 0)
    return runs


def import_kitti_mots(path, name: str | None = None, num_frames: int | None = None) -> Sequence:
    """Read one KITTI-MOTS annotation file as a ground-truth sequence.

    Frames without annotations are present but empty; predictions are left
    empty so detector dumps can be attached separately.
    """
    path = Path(path)
    per_frame: dict[int, list[GroundTruthInstance]] = {}
    ignored: dict[int, np.ndarray] = {}
    grid = None
    for lineno, line in enumerate(path.read_text().splitlines(), start=1):
        if not line.strip():
            continue
        fields = line.split()
        if len(fields) != 6:
            raise SequenceFormatError(f"{path}:{lineno}: expected 6 fields, got {len(fields)}")
        try:
            t, obj_id, class_id, height, width = (int(x) for x in fields[:5])
            mask = mask_from_coco(coco_string_to_counts(fields[5]), height, width)
        except (ValueError, IndexError, MaskError) as exc:
            raise SequenceFormatError(f"{path}:{lineno}: {exc}") from exc
        if grid is None:
            grid = (height, width)
        elif grid != (height, width):
            raise SequenceFormatError(f"{path}:{lineno}: grid changes within sequence")
        if class_id in KITTI_CLASSES:
            if mask.is_empty:
                continue
            per_frame.setdefault(t, []).append(GroundTruthInstance(mask, class_id, obj_id))
        else:
            acc = ignored.setdefault(t, np.zeros(grid, dtype=bool))
            acc |= mask.to_array()
    if grid is None:
        return Sequence(name or path.stem, 0, 0, [], gt=[])
    last = max(list(per_frame) + list(ignored))
    n = max(last + 1, num_frames or 0)
    frames, gts = [], []
    for t in range(n):
        ign = PixelMask.from_array(ignored[t]) if t in ignored else None
        frames.append(Frame(t, grid[0], grid[1], [], ign))
        gts.append(GtFrame(t, sorted(per_frame.get(t, []), key=lambda g: g.gt_track_id)))
    return Sequence(name or path.stem, grid[0], grid[1], frames, gt=gts)
