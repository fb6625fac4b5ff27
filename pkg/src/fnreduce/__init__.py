"""Reducing false negatives of video instance segmentation with tracking,
time-series metrics and meta classification."""

from .masks import PixelMask, geometric_center, iou, overlap_ratio, shift_mask
from .sequence import Frame, GroundTruthInstance, InstancePrediction, Origin, Sequence

__version__ = "0.1.0"

__all__ = [
    "PixelMask", "geometric_center", "iou", "overlap_ratio", "shift_mask",
    "Frame", "GroundTruthInstance", "InstancePrediction", "Origin", "Sequence",
]
