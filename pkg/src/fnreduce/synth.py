"""Deterministic synthetic scenes: rigid shapes in constant integer motion.

Ground truth renders every object back-to-front by depth, so nearer objects
occlude farther ones. Predictions are the ground truth minus randomly dropped
detections, plus spurious instances with low-to-mid scores.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .masks import PixelMask
from .sequence import DepthMap, Frame, GroundTruthInstance, GtFrame, InstancePrediction, Sequence

MIN_GRID = 8


@dataclass
class SynthConfig:
    num_sequences: int = 3
    frames_per_sequence: int = 100
    height: int = 96
    width: int = 128
    min_objects: int = 5
    max_objects: int = 5
    shapes: tuple[str, ...] = ("rectangle", "ellipse")
    min_size: int = 8
    max_size: int = 20
    min_velocity: int = -2
    max_velocity: int = 2
    dropout: float = 0.1
    fp_rate: float = 0.1
    score_noise: float = 0.15
    fp_score_low: float = 0.05
    fp_score_high: float = 0.6
    num_classes: int = 2
    min_depth: float = 5.0
    max_depth: float = 40.0
    background_depth: float = 80.0
    fps: float = 10.0
    seed: int = 0

    def validate(self) -> None:
        if self.height < MIN_GRID or self.width < MIN_GRID:
            raise ValueError(f"grid must be at least {MIN_GRID}x{MIN_GRID}")
        if self.num_sequences < 1:
            raise ValueError("num_sequences must be positive")
        if self.frames_per_sequence < 1:
            raise ValueError("frames_per_sequence must be positive")
        for name in ("dropout", "fp_rate", "fp_score_low", "fp_score_high"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1]")
        if self.score_noise < 0:
            raise ValueError("score_noise must be non-negative")
        if not 1 <= self.min_objects <= self.max_objects:
            raise ValueError("need 1 <= min_objects <= max_objects")
        if not 1 <= self.min_size <= self.max_size:
            raise ValueError("need 1 <= min_size <= max_size")
        if self.min_velocity > self.max_velocity:
            raise ValueError("min_velocity exceeds max_velocity")
        if not 0 < self.min_depth <= self.max_depth < self.background_depth:
            raise ValueError("need 0 < min_depth <= max_depth < background_depth")
        if not set(self.shapes) <= {"rectangle", "ellipse"} or not self.shapes:
            raise ValueError(f"unknown shapes {self.shapes}")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["shapes"] = list(self.shapes)
        return d


@dataclass
class _Object:
    gt_id: int
    class_id: int
    template: np.ndarray
    v0: int
    h0: int
    vv: int
    vh: int
    depth: float
    t0: int

    def position(self, t: int) -> tuple[int, int]:
        dt = t - self.t0
        return self.v0 + self.vv * dt, self.h0 + self.vh * dt

    def visible(self, t: int, height: int, width: int) -> bool:
        v, h = self.position(t)
        bh, bw = self.template.shape
        return v < height and h < width and v + bh > 0 and h + bw > 0


def _template(rng, cfg: SynthConfig) -> np.ndarray:
    bh, bw = (int(x) for x in rng.integers(cfg.min_size, cfg.max_size + 1, size=2))
    shape = cfg.shapes[int(rng.integers(len(cfg.shapes)))]
    if shape == "rectangle":
        return np.ones((bh, bw), dtype=bool)
    vv, hh = np.mgrid[0:bh, 0:bw]
    cv, ch = (bh - 1) / 2, (bw - 1) / 2
    ell = ((vv - cv) / (bh / 2)) ** 2 + ((hh - ch) / (bw / 2)) ** 2 <= 1.0
    return ell


def _place(arr: np.ndarray, template: np.ndarray, v: int, h: int) -> np.ndarray:
    """Boolean grid with ``template`` pasted at top-left (v, h), clipped."""
    H, W = arr.shape
    bh, bw = template.shape
    out = np.zeros_like(arr)
    v0, v1 = max(v, 0), min(v + bh, H)
    h0, h1 = max(h, 0), min(h + bw, W)
    if v1 > v0 and h1 > h0:
        out[v0:v1, h0:h1] = template[v0 - v:v1 - v, h0 - h:h1 - h]
    return out


def _spawn(rng, cfg: SynthConfig, gt_id: int, t0: int) -> _Object:
    template = _template(rng, cfg)
    bh, bw = template.shape
    v0 = int(rng.integers(0, cfg.height - bh + 1)) if bh <= cfg.height else 0
    h0 = int(rng.integers(0, cfg.width - bw + 1)) if bw <= cfg.width else 0
    vv, vh = (int(x) for x in rng.integers(cfg.min_velocity, cfg.max_velocity + 1, size=2))
    depth = float(np.float32(rng.uniform(cfg.min_depth, cfg.max_depth)))
    class_id = int(rng.integers(1, cfg.num_classes + 1))
    return _Object(gt_id, class_id, template, v0, h0, vv, vh, depth, t0)


def _true_score(rng, noise: float) -> float:
    if noise == 0:
        return 1.0
    return float(np.clip(1.0 - abs(rng.normal(0.0, noise)), 0.0, 1.0))


def _generate_one(cfg: SynthConfig, k: int) -> Sequence:
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, k]))
    H, W = cfg.height, cfg.width
    n_obj = int(rng.integers(cfg.min_objects, cfg.max_objects + 1))
    next_id = 1
    objects = []
    for _ in range(n_obj):
        objects.append(_spawn(rng, cfg, next_id, 0))
        next_id += 1

    frames, gts = [], []
    blank = np.zeros((H, W), dtype=bool)
    for t in range(cfg.frames_per_sequence):
        # objects that left the grid are replaced by fresh ones
        for slot, obj in enumerate(objects):
            if not obj.visible(t, H, W):
                objects[slot] = _spawn(rng, cfg, next_id, t)
                next_id += 1

        owner = np.full((H, W), -1, dtype=np.int64)
        depth = np.full((H, W), cfg.background_depth, dtype=np.float32)
        for slot in sorted(range(len(objects)), key=lambda s: (-objects[s].depth, s)):
            obj = objects[slot]
            pix = _place(blank, obj.template, *obj.position(t))
            owner[pix] = slot
            depth[pix] = obj.depth

        gt_instances = []
        for slot, obj in enumerate(objects):
            pix = owner == slot
            if pix.any():
                gt_instances.append(GroundTruthInstance(PixelMask.from_array(pix), obj.class_id, obj.gt_id))
        gt_instances.sort(key=lambda g: g.gt_track_id)

        preds = []
        for g in gt_instances:
            if rng.random() < cfg.dropout:
                continue
            preds.append(InstancePrediction(g.mask, g.class_id, _true_score(rng, cfg.score_noise)))
        for _ in range(int(rng.binomial(len(objects), cfg.fp_rate))):
            template = _template(rng, cfg)
            bh, bw = template.shape
            v = int(rng.integers(0, max(H - bh, 0) + 1))
            h = int(rng.integers(0, max(W - bw, 0) + 1))
            mask = PixelMask.from_array(_place(blank, template, v, h))
            score = float(rng.uniform(cfg.fp_score_low, cfg.fp_score_high))
            class_id = int(rng.integers(1, cfg.num_classes + 1))
            preds.append(InstancePrediction(mask, class_id, score))

        frames.append(Frame(t, H, W, preds, None, DepthMap(depth)))
        gts.append(GtFrame(t, gt_instances))

    return Sequence(
        name=f"seq_{k:03d}", height=H, width=W, frames=frames, gt=gts, fps=cfg.fps,
        meta={"generator": "synth", "seed": cfg.seed, "index": k},
    )


def generate_scene(cfg: SynthConfig) -> list[Sequence]:
    """Generate ``cfg.num_sequences`` sequences; each carries its ground truth."""
    cfg.validate()
    return [_generate_one(cfg, k) for k in range(cfg.num_sequences)]
