"""In-memory containers for predicted and ground-truth image sequences."""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .masks import GridMismatchError, MaskError, PixelMask


class Origin(str, Enum):
    NETWORK = "network"
    DETECTED = "detected"


@dataclass(frozen=True)
class InstancePrediction:
    mask: PixelMask
    class_id: int
    score: float
    track_id: int | None = None
    origin: Origin = Origin.NETWORK
    # frame of the observation a detected instance was reconstructed from
    source_frame: int | None = None

    def __post_init__(self):
        if not 0.0 <= self.score <= 1.0:
            raise ValueError(f"score {self.score} outside [0, 1]")
        if self.mask.is_empty:
            raise MaskError("instance mask must be non-empty")
        object.__setattr__(self, "origin", Origin(self.origin))


@dataclass(frozen=True)
class GroundTruthInstance:
    mask: PixelMask
    class_id: int
    gt_track_id: int


@dataclass(frozen=True, eq=False)
class DepthMap:
    values: np.ndarray

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=np.float32)
        if vals.ndim != 2:
            raise ValueError("depth map must be 2-D")
        if not np.all(np.isfinite(vals)) or np.any(vals <= 0):
            raise ValueError("depth values must be finite and positive")
        object.__setattr__(self, "values", vals)

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    def __eq__(self, other):
        if not isinstance(other, DepthMap):
            return NotImplemented
        return np.array_equal(self.values, other.values)


@dataclass
class Frame:
    index: int
    height: int
    width: int
    instances: list[InstancePrediction] = field(default_factory=list)
    ignored: PixelMask | None = None
    depth: DepthMap | None = None

    def __post_init__(self):
        grid = (self.height, self.width)
        for inst in self.instances:
            if (inst.mask.height, inst.mask.width) != grid:
                raise GridMismatchError(f"frame {self.index}: instance grid mismatch")
        if self.ignored is not None and (self.ignored.height, self.ignored.width) != grid:
            raise GridMismatchError(f"frame {self.index}: ignored region grid mismatch")
        if self.depth is not None and self.depth.shape != grid:
            raise GridMismatchError(f"frame {self.index}: depth grid mismatch")


@dataclass
class GtFrame:
    index: int
    instances: list[GroundTruthInstance] = field(default_factory=list)


@dataclass
class Sequence:
    name: str
    height: int
    width: int
    frames: list[Frame]
    gt: list[GtFrame] | None = None
    fps: float = 10.0
    meta: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.frames)

    @property
    def num_instances(self) -> int:
        return sum(len(f.instances) for f in self.frames)
