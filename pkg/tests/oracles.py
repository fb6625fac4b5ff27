"""Independent brute-force re-implementations used as test oracles.

Everything here works on dense boolean arrays, exact rationals or explicit
enumeration, and shares no code with the package beyond the data classes.
"""

from __future__ import annotations

import math
from fractions import Fraction

import numpy as np
from scipy import ndimage

from fnreduce.masks import PixelMask


def dense(mask: PixelMask) -> np.ndarray:
    out = np.zeros(mask.height * mask.width, dtype=bool)
    pos, fg = 0, False
    for run in mask.runs:
        if fg:
            out[pos:pos + run] = True
        pos += run
        fg = not fg
    return out.reshape(mask.height, mask.width)


def block(v0, h0, bh, bw, height, width) -> PixelMask:
    arr = np.zeros((height, width), dtype=bool)
    arr[v0:v0 + bh, h0:h0 + bw] = True
    return PixelMask.from_array(arr)


def random_array(rng, max_side=64, density=None) -> np.ndarray:
    h, w = rng.integers(1, max_side + 1, size=2)
    p = rng.uniform(0.05, 0.95) if density is None else density
    arr = rng.random((h, w)) < p
    if rng.random() < 0.3:
        # blobby masks exercise the inner/boundary split
        arr[:] = False
        v0, h0 = rng.integers(0, h), rng.integers(0, w)
        arr[v0:v0 + rng.integers(1, h + 1), h0:h0 + rng.integers(1, w + 1)] = True
    return arr


def overlap_count(a: np.ndarray, b: np.ndarray) -> tuple[int, int, int]:
    """(|a|, |a and b|, |a or b|) as integer pixel counts of the dense bitmaps."""
    return int(a.sum()), int((a & b).sum()), int((a | b).sum())


def center(a: np.ndarray) -> tuple[Fraction, Fraction]:
    pix = np.argwhere(a)
    n = len(pix)
    return Fraction(int(pix[:, 0].sum()), n), Fraction(int(pix[:, 1].sum()), n)


def inner_pixels(a: np.ndarray) -> np.ndarray:
    """8-neighbour erosion with everything outside the image counted as background."""
    return ndimage.binary_erosion(a, structure=np.ones((3, 3), dtype=bool), border_value=0)


def inner_pixels_loop(a: np.ndarray) -> np.ndarray:
    h, w = a.shape
    out = np.zeros_like(a)
    for v in range(h):
        for x in range(w):
            if not a[v, x] or v in (0, h - 1) or x in (0, w - 1):
                continue
            out[v, x] = all(a[v + dv, x + dh] for dv in (-1, 0, 1) for dh in (-1, 0, 1))
    return out


def round_half_away(x: Fraction) -> int:
    n = math.floor(abs(x) + Fraction(1, 2))
    return n if x >= 0 else -n


def shift_dense(a: np.ndarray, dv: int, dh: int) -> np.ndarray:
    out = np.zeros_like(a)
    h, w = a.shape
    for v, x in np.argwhere(a):
        if 0 <= v + dv < h and 0 <= x + dh < w:
            out[v + dv, x + dh] = True
    return out


def ols_predict(ts, ys, target) -> Fraction:
    """Least-squares line through (ts, ys) evaluated at ``target``, in exact arithmetic."""
    n = len(ts)
    ts = [Fraction(t) for t in ts]
    ys = [Fraction(y) for y in ys]
    mt, my = sum(ts) / n, sum(ys) / n
    sxx = sum((t - mt) ** 2 for t in ts)
    sxy = sum((t - mt) * (y - my) for t, y in zip(ts, ys))
    slope = sxy / sxx
    return my + slope * (Fraction(target) - mt)


def iou_dense(a, b) -> Fraction:
    _, inter, union = overlap_count(a, b)
    return Fraction(inter, union) if union else Fraction(0)


def alg1_dense(frames, gap_limit=10, ignore=Fraction(8, 10), duplicate=Fraction(95, 100)):
    """Gap reconstruction on dense bitmaps for tracked frames.

    Returns {(frame, track_id): dense mask} of accepted reconstructions.
    """
    T = len(frames)
    obs: dict[int, dict[int, np.ndarray]] = {}
    for t, fr in enumerate(frames):
        for inst in fr.instances:
            obs.setdefault(inst.track_id, {})[t] = dense(inst.mask)
    cand: dict[tuple[int, int], np.ndarray] = {}
    for tid, entries in obs.items():
        seen = sorted(entries)
        for t in range(seen[0], T):
            if t in entries:
                continue
            prev = [k for k in seen if k < t]
            t_last = prev[-1]
            if t - t_last > gap_limit or len(prev) < 2:
                continue
            cs = [center(entries[k]) for k in prev]
            pv = ols_predict(prev, [c[0] for c in cs], t)
            ph = ols_predict(prev, [c[1] for c in cs], t)
            cl = cs[-1]
            shifted = shift_dense(entries[t_last], round_half_away(pv - cl[0]), round_half_away(ph - cl[1]))
            if shifted.any():
                cand[(t, tid)] = shifted
    out = {}
    for (t, tid), m in cand.items():
        fr = frames[t]
        if fr.ignored is not None:
            n, inter, _ = overlap_count(m, dense(fr.ignored))
            if Fraction(inter, n) >= ignore:
                continue
        if any(iou_dense(m, dense(k.mask)) > duplicate for k in fr.instances):
            continue
        out[(t, tid)] = m
    return out


def pair_count_auroc(scores, labels) -> Fraction:
    pos = [s for s, y in zip(scores, labels) if y]
    neg = [s for s, y in zip(scores, labels) if not y]
    total = Fraction(0)
    for p in pos:
        for q in neg:
            total += 1 if p > q else Fraction(1, 2) if p == q else 0
    return total / (len(pos) * len(neg))


def best_assignment(weights: np.ndarray, allowed: np.ndarray) -> dict[int, int]:
    """Maximum-total-weight partial one-to-one assignment by exhaustive search: col -> row."""
    rows, cols = weights.shape
    best = [-1.0, {}]

    def search(c, used, total, chosen):
        if c == cols:
            if total > best[0] + 1e-12:
                best[0], best[1] = total, dict(chosen)
            return
        search(c + 1, used, total, chosen)
        for r in range(rows):
            if allowed[r, c] and r not in used:
                chosen[c] = r
                search(c + 1, used | {r}, total + weights[r, c], chosen)
                del chosen[c]

    search(0, frozenset(), 0.0, {})
    return best[1]


def breslow_loglik(x, durations, events, beta) -> float:
    """1-covariate Breslow partial log-likelihood by explicit risk-set loops."""
    total = 0.0
    for i in range(len(x)):
        if not events[i]:
            continue
        risk = sum(math.exp(beta * x[j]) for j in range(len(x)) if durations[j] >= durations[i])
        total += beta * x[i] - math.log(risk)
    return total
