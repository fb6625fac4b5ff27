"""Binary instance masks stored as row-major run-length encodings.

Runs alternate background/foreground and always start with a (possibly empty)
background run, e.g. the flattened mask ``0 0 1 1 1 0 1`` has runs
``(2, 3, 1, 1)`` and ``1 1 0`` has runs ``(0, 2, 1)``.  Area, intersection,
centers and boxes are computed on the runs directly; erosion and shifting
decode to a dense bitmap.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from functools import cached_property
from typing import Iterable, NamedTuple

import numpy as np


class MaskError(ValueError):
    """Invalid mask or mask combination."""


class GridMismatchError(MaskError):
    pass


class EmptyMaskError(MaskError):
    pass


class PixelCoord(NamedTuple):
    v: int
    h: int


class CenterPoint(NamedTuple):
    v: float
    h: float


class BoundingBox(NamedTuple):
    v_min: int
    v_max: int
    h_min: int
    h_max: int

    @property
    def height(self) -> int:
        return self.v_max - self.v_min + 1

    @property
    def width(self) -> int:
        return self.h_max - self.h_min + 1


@dataclass(frozen=True)
class PixelMask:
    height: int
    width: int
    runs: tuple[int, ...]

    def __post_init__(self):
        runs = tuple(int(r) for r in self.runs)
        object.__setattr__(self, "runs", runs)
        if self.height < 1 or self.width < 1:
            raise MaskError(f"grid must be at least 1x1, got {self.height}x{self.width}")
        if not runs:
            raise MaskError("runs must not be empty")
        if any(r < 0 for r in runs):
            raise MaskError("run lengths must be non-negative")
        if any(r == 0 for r in runs[1:]):
            raise MaskError("only the leading background run may be zero")
        if sum(runs) != self.height * self.width:
            raise MaskError(
                f"runs sum to {sum(runs)}, expected {self.height * self.width}"
            )

    # -- constructors -----------------------------------------------------

    @classmethod
    def empty(cls, height: int, width: int) -> "PixelMask":
        return cls(height, width, (height * width,))

    @classmethod
    def from_array(cls, arr) -> "PixelMask":
        arr = np.asarray(arr, dtype=bool)
        if arr.ndim != 2:
            raise MaskError(f"expected a 2-D array, got shape {arr.shape}")
        height, width = arr.shape
        return cls(height, width, _encode_flat(arr.ravel()))

    @classmethod
    def from_pixels(cls, pixels: Iterable[tuple[int, int]], height: int, width: int) -> "PixelMask":
        arr = np.zeros((height, width), dtype=bool)
        for v, h in pixels:
            arr[v, h] = True
        return cls.from_array(arr)

    @classmethod
    def from_box(cls, v0: int, h0: int, box_height: int, box_width: int,
                 height: int, width: int) -> "PixelMask":
        """Solid rectangle with top-left corner (v0, h0), clipped to the grid."""
        arr = np.zeros((height, width), dtype=bool)
        arr[max(v0, 0):max(v0 + box_height, 0), max(h0, 0):max(h0 + box_width, 0)] = True
        return cls.from_array(arr)

    # -- text form ----------------------------------------------------------

    def to_text(self) -> str:
        counts = ",".join(str(r) for r in self.runs)
        return f"size:[{self.height},{self.width}]; counts:[{counts}]"

    @classmethod
    def from_text(cls, text: str) -> "PixelMask":
        m = _TEXT_RE.fullmatch(text.strip())
        if m is None:
            raise MaskError(f"malformed RLE text: {text[:60]!r}")
        height, width = int(m.group(1)), int(m.group(2))
        body = m.group(3).strip()
        runs = tuple(int(c) for c in body.split(",")) if body else ()
        return cls(height, width, runs)

    # -- dense views --------------------------------------------------------

    def to_array(self) -> np.ndarray:
        values = np.zeros(len(self.runs), dtype=bool)
        values[1::2] = True
        flat = np.repeat(values, self.runs)
        return flat.reshape(self.height, self.width)

    @cached_property
    def intervals(self) -> tuple[tuple[int, int], ...]:
        """Foreground runs as half-open [start, end) intervals of flat indices."""
        out = []
        pos = 0
        for k, r in enumerate(self.runs):
            if k % 2 == 1:
                out.append((pos, pos + r))
            pos += r
        return tuple(out)

    @cached_property
    def area(self) -> int:
        return sum(self.runs[1::2])

    def __len__(self) -> int:
        return self.area

    @property
    def is_empty(self) -> bool:
        return self.area == 0

    def pixels(self) -> list[PixelCoord]:
        out = []
        for a, b in self.intervals:
            for z in range(a, b):
                out.append(PixelCoord(*divmod(z, self.width)))
        return out

    # -- set algebra ----------------------------------------------------------

    def union(self, other: "PixelMask") -> "PixelMask":
        _check_grid(self, other)
        return PixelMask.from_array(self.to_array() | other.to_array())

    def intersection(self, other: "PixelMask") -> "PixelMask":
        _check_grid(self, other)
        return PixelMask.from_array(self.to_array() & other.to_array())

    def difference(self, other: "PixelMask") -> "PixelMask":
        _check_grid(self, other)
        return PixelMask.from_array(self.to_array() & ~other.to_array())

    def issubset(self, other: "PixelMask") -> bool:
        _check_grid(self, other)
        return intersection_area(self, other) == self.area

    @cached_property
    def bbox(self) -> BoundingBox | None:
        if not self.intervals:
            return None
        w = self.width
        v_min = self.intervals[0][0] // w
        v_max = (self.intervals[-1][1] - 1) // w
        h_min, h_max = w, -1
        for a, b in self.intervals:
            va, ha = divmod(a, w)
            vb, hb = divmod(b - 1, w)
            if va != vb:
                # interval wraps a row: it covers the row end and the next row start
                h_min, h_max = 0, w - 1
                break
            h_min = min(h_min, ha)
            h_max = max(h_max, hb)
        return BoundingBox(v_min, v_max, h_min, h_max)


_TEXT_RE = re.compile(r"size:\s*\[\s*(\d+)\s*,\s*(\d+)\s*\]\s*;\s*counts:\s*\[([\d,\s]*)\]")


def _encode_flat(flat: np.ndarray) -> tuple[int, ...]:
    flat = np.asarray(flat, dtype=np.int8)
    n = flat.size
    change = np.flatnonzero(np.diff(flat)) + 1
    bounds = np.concatenate(([0], change, [n]))
    runs = np.diff(bounds).tolist()
    if flat[0] == 1:
        runs.insert(0, 0)
    return tuple(runs)


def _check_grid(i: PixelMask, j: PixelMask) -> None:
    if (i.height, i.width) != (j.height, j.width):
        raise GridMismatchError(
            f"grid mismatch: {i.height}x{i.width} vs {j.height}x{j.width}"
        )


def intersection_area(i: PixelMask, j: PixelMask) -> int:
    """|i ∩ j| by a merge over the two interval lists."""
    _check_grid(i, j)
    a, b = i.intervals, j.intervals
    if not a or not b or a[-1][1] <= b[0][0] or b[-1][1] <= a[0][0]:
        return 0
    total = 0
    p = q = 0
    while p < len(a) and q < len(b):
        lo = max(a[p][0], b[q][0])
        hi = min(a[p][1], b[q][1])
        if hi > lo:
            total += hi - lo
        if a[p][1] < b[q][1]:
            p += 1
        else:
            q += 1
    return total


def union_area(i: PixelMask, j: PixelMask) -> int:
    return i.area + j.area - intersection_area(i, j)


def overlap_ratio(i: PixelMask, j: PixelMask) -> float:
    """Fraction of the pixels of ``i`` that also lie in ``j``."""
    _check_grid(i, j)
    if i.area == 0:
        raise EmptyMaskError("overlap ratio undefined for an empty mask")
    return intersection_area(i, j) / i.area


def iou(i: PixelMask, j: PixelMask) -> float:
    _check_grid(i, j)
    inter = intersection_area(i, j)
    union = i.area + j.area - inter
    if union == 0:
        raise EmptyMaskError("IoU undefined for two empty masks")
    return inter / union


def pixel_sums(i: PixelMask) -> tuple[int, int, int]:
    """Exact integer (count, sum of rows, sum of columns) over foreground pixels."""
    w = i.width
    n = sv = sh = 0
    for a, b in i.intervals:
        z = a
        while z < b:
            v, h0 = divmod(z, w)
            h1 = min(w, h0 + (b - z))  # exclusive end column on this row
            k = h1 - h0
            n += k
            sv += v * k
            sh += (h0 + h1 - 1) * k // 2
            z += k
    return n, sv, sh


def geometric_center(i: PixelMask) -> CenterPoint:
    n, sv, sh = pixel_sums(i)
    if n == 0:
        raise EmptyMaskError("geometric center undefined for an empty mask")
    return CenterPoint(sv / n, sh / n)


def split_inner_boundary(i: PixelMask) -> tuple[PixelMask, PixelMask]:
    """Inner pixels have all 8 neighbours in the mask; the rest is boundary.

    Pixels on the image border have missing neighbours and are never inner.
    """
    if i.area == 0:
        raise EmptyMaskError("cannot split an empty mask")
    arr = i.to_array()
    h, w = arr.shape
    inner = np.zeros_like(arr)
    if h >= 3 and w >= 3:
        core = arr[1:-1, 1:-1].copy()
        for dv in (-1, 0, 1):
            for dh in (-1, 0, 1):
                core &= arr[1 + dv:h - 1 + dv, 1 + dh:w - 1 + dh]
        inner[1:-1, 1:-1] = core
    return PixelMask.from_array(inner), PixelMask.from_array(arr & ~inner)


def round_half_away(x: float) -> int:
    return int(math.copysign(math.floor(abs(x) + 0.5), x))


def shift_mask(i: PixelMask, dv: int, dh: int) -> PixelMask:
    """Translate by (dv, dh) pixels; pixels leaving the grid are dropped."""
    dv, dh = int(dv), int(dh)
    if dv == 0 and dh == 0:
        return i
    h, w = i.height, i.width
    out = np.zeros((h, w), dtype=bool)
    if abs(dv) < h and abs(dh) < w and i.area:
        src = i.to_array()
        out[max(dv, 0):h + min(dv, 0), max(dh, 0):w + min(dh, 0)] = \
            src[max(-dv, 0):h - max(dv, 0), max(-dh, 0):w - max(dh, 0)]
    return PixelMask.from_array(out)


def shift_by_vector(i: PixelMask, delta_v: float, delta_h: float) -> PixelMask:
    """Shift by a real-valued vector, rounded per axis (ties away from zero)."""
    return shift_mask(i, round_half_away(delta_v), round_half_away(delta_h))


def bounding_box(i: PixelMask) -> BoundingBox:
    if i.bbox is None:
        raise EmptyMaskError("bounding box undefined for an empty mask")
    return i.bbox


def box_iou(a: BoundingBox, b: BoundingBox) -> float:
    dv = min(a.v_max, b.v_max) - max(a.v_min, b.v_min) + 1
    dh = min(a.h_max, b.h_max) - max(a.h_min, b.h_min) + 1
    inter = max(dv, 0) * max(dh, 0)
    union = a.height * a.width + b.height * b.width - inter
    return inter / union


def union_all(masks: Iterable[PixelMask], height: int, width: int) -> PixelMask:
    arr = np.zeros((height, width), dtype=bool)
    for m in masks:
        if (m.height, m.width) != (height, width):
            raise GridMismatchError("grid mismatch in union")
        arr |= m.to_array()
    return PixelMask.from_array(arr)
