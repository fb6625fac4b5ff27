"""Meta classification: predict per instance whether its IoU with ground truth reaches ``h``.

Features are the metric records of the current frame and the ``n`` previous
entries of the same track. Splits are drawn over tracks so temporally adjacent
records never straddle folds. The survival model is refitted on every
training fold and its score ``v`` is recomputed before features are built.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Sequence as Seq

import numpy as np

from . import survival
from .evaluate import accuracy, auroc, hit
from .gbt import GbtConfig, GbtModel, train_gbt
from .metrics import FEATURE_COLUMNS, MetricRecord

log = logging.getLogger(__name__)

MAX_HISTORY = 10
TABLE_THRESHOLDS = (0.0, 0.1, 0.2, 0.3, 0.4, 0.5)


@dataclass
class SplitSpec:
    train: float = 0.7
    val: float = 0.1
    test: float = 0.2

    def validate(self) -> None:
        if min(self.train, self.val, self.test) < 0 or not math.isclose(self.train + self.val + self.test, 1.0):
            raise ValueError("split fractions must be non-negative and sum to 1")


@dataclass
class Folds:
    train: list[tuple[str, int]]
    val: list[tuple[str, int]]
    test: list[tuple[str, int]]


@dataclass
class FeatureSpec:
    columns: list[str]
    classes: list[int]
    n: int

    @property
    def block_size(self) -> int:
        return len(self.columns) + len(self.classes)

    def names(self) -> list[str]:
        block = self.columns + [f"class_{c}" for c in self.classes]
        return [f"{name}@t-{self.n - k}" for k in range(self.n + 1) for name in block]


def feature_spec(records: Seq[MetricRecord], n: int, classes: Seq[int] | None = None) -> FeatureSpec:
    if not 0 <= n <= MAX_HISTORY:
        raise ValueError(f"history length n must lie in [0, {MAX_HISTORY}]")
    # v is filled per training fold, so it is never treated as absent
    absent = {c for c in FEATURE_COLUMNS if c != "v"
              and any(math.isnan(float(getattr(r, c))) for r in records)}
    cols = [c for c in FEATURE_COLUMNS if c not in absent]
    if classes is None:
        classes = sorted({r.class_id for r in records})
    return FeatureSpec(cols, list(classes), n)


def history_index(records: Seq[MetricRecord], n: int) -> np.ndarray:
    """(N, n + 1) record indices, oldest block first.

    Missing history repeats the oldest available entry of the track.
    """
    by_track: dict[tuple[str, int], list[int]] = {}
    for k, r in enumerate(records):
        by_track.setdefault((r.sequence, r.track_id), []).append(k)
    out = np.empty((len(records), n + 1), dtype=np.int64)
    for idx in by_track.values():
        idx.sort(key=lambda k: records[k].frame)
        for pos, k in enumerate(idx):
            for b in range(n + 1):
                out[k, b] = idx[max(pos - (n - b), 0)]
    return out


def frame_blocks(records: Seq[MetricRecord], spec: FeatureSpec) -> np.ndarray:
    cols = np.array([[float(getattr(r, c)) for c in spec.columns] for r in records], dtype=float)
    cols = cols.reshape(len(records), len(spec.columns))
    onehot = np.array([[float(r.class_id == c) for c in spec.classes] for r in records], dtype=float)
    return np.hstack([cols, onehot.reshape(len(records), len(spec.classes))])


def assemble_features(records: Seq[MetricRecord], spec: FeatureSpec) -> np.ndarray:
    """One row of ``(n + 1) * block_size`` values per record."""
    blocks = frame_blocks(records, spec)
    if not np.all(np.isfinite(blocks)):
        raise ValueError("feature blocks contain absent values; compute v first")
    hist = history_index(records, spec.n)
    return blocks[hist].reshape(len(records), -1)


def label_records(records: Seq[MetricRecord], h: float) -> np.ndarray:
    """1 for IoU >= h (IoU > 0 when h = 0), else 0."""
    if not 0.0 <= h <= 1.0:
        raise ValueError("IoU threshold must lie in [0, 1]")
    labels = np.empty(len(records), dtype=np.int64)
    for k, r in enumerate(records):
        if math.isnan(r.iou_gt):
            raise ValueError(f"record {r.key} has no ground-truth IoU")
        labels[k] = hit(r.iou_gt, h)
    return labels


def track_units(records: Seq[MetricRecord]) -> list[tuple[str, int]]:
    return sorted({(r.sequence, r.track_id) for r in records})


def _counts(total: int, spec: SplitSpec) -> tuple[int, int]:
    n_train = int(round(spec.train * total))
    n_val = int(round(spec.val * total))
    return n_train, min(n_val, total - n_train)


def split_dataset(units: Seq[tuple[str, int]], spec: SplitSpec | None = None, seed: int = 0) -> Folds:
    spec = spec or SplitSpec()
    spec.validate()
    units = sorted(units)
    if len(units) < 10:
        raise ValueError(f"need at least 10 tracks to split, got {len(units)}")
    perm = np.random.default_rng(seed).permutation(len(units))
    n_train, n_val = _counts(len(units), spec)
    pick = [units[k] for k in perm]
    return Folds(pick[:n_train], pick[n_train:n_train + n_val], pick[n_train + n_val:])


def _mask(records, units) -> np.ndarray:
    units = set(units)
    return np.array([(r.sequence, r.track_id) in units for r in records], dtype=bool)


@dataclass
class MetaData:
    """Records with their labels; ``num_frames`` is the length of each sequence."""

    records: list[MetricRecord]
    num_frames: dict[str, int]
    h: float
    labels: np.ndarray = field(init=False)

    def __post_init__(self):
        self.labels = label_records(self.records, self.h)


def fit_fold(data: MetaData, train_units, val_units, n: int, gbt: GbtConfig, seed: int,
             horizon: float = 10.0, classes=None) -> tuple[GbtModel, survival.CoxModel, FeatureSpec, np.ndarray]:
    """Fit Cox on the training tracks, rebuild features, boost trees.

    Returns the model, the Cox model, the feature layout and the feature matrix
    of all records (with ``v`` from this fold's Cox model).
    """
    recs = data.records
    train = _mask(recs, train_units)
    val = _mask(recs, val_units)
    cox = survival.fit_records([r for r, m in zip(recs, train) if m], data.num_frames)
    survival.attach_survival(recs, cox, horizon)
    spec = feature_spec(recs, n, classes)
    X = assemble_features(recs, spec)
    y = data.labels
    if len(np.unique(y[train])) < 2:
        # nothing to separate: constant prior, as in the direct-fit mode of train_gbt
        log.warning("training fold contains a single class; using the constant prior")
        model = train_gbt(X[train], y[train], gbt, seed, allow_single_class=True)
        del model.trees[:]
        return model, cox, spec, X
    model = train_gbt(X[train], y[train], gbt, seed, X[val], y[val])
    return model, cox, spec, X


@dataclass
class RunResult:
    seed: int
    acc: float
    auroc: float
    n_trees: int
    n_test: int

    def to_dict(self) -> dict:
        return {"seed": self.seed, "acc": self.acc, "auroc": self.auroc,
                "n_trees": self.n_trees, "n_test": self.n_test}


def meta_run(data: MetaData, n: int, seed: int, gbt: GbtConfig | None = None,
             spec: SplitSpec | None = None, horizon: float = 10.0) -> RunResult:
    """One random track-level split: train, early-stop on val, score the test fold."""
    gbt = gbt or GbtConfig()
    folds = split_dataset(track_units(data.records), spec, seed)
    model, _, _, X = fit_fold(data, folds.train, folds.val, n, gbt, seed, horizon)
    test = _mask(data.records, folds.test)
    p = model.predict_proba(X[test])
    y = data.labels[test]
    au = auroc(p, y) if 0 < y.sum() < len(y) else math.nan
    return RunResult(seed, accuracy(p, y), au, len(model.trees), int(test.sum()))


def summarize(runs: Seq[RunResult]) -> dict:
    acc = np.array([r.acc for r in runs])
    au = np.array([r.auroc for r in runs if not math.isnan(r.auroc)])
    return {
        "acc_mean": float(acc.mean()), "acc_std": float(acc.std()),
        "auroc_mean": float(au.mean()) if au.size else math.nan,
        "auroc_std": float(au.std()) if au.size else math.nan,
        "runs": [r.to_dict() for r in runs],
    }


def out_of_fold_probabilities(data: MetaData, n: int, seed: int, gbt: GbtConfig | None = None,
                              folds: int = 5, spec: SplitSpec | None = None,
                              horizon: float = 10.0) -> np.ndarray:
    """Test-fold probability for every record.

    Tracks are dealt into ``folds`` groups; each group is scored by a model
    trained on the others, of which a ``val / (train + val)`` share is held out
    for early stopping.
    """
    gbt = gbt or GbtConfig()
    spec = spec or SplitSpec()
    units = track_units(data.records)
    if len(units) < 10:
        raise ValueError(f"need at least 10 tracks, got {len(units)}")
    rng = np.random.default_rng(seed)
    perm = [units[k] for k in rng.permutation(len(units))]
    groups = [perm[k::folds] for k in range(folds)]
    val_share = spec.val / (spec.train + spec.val)
    out = np.full(len(data.records), math.nan)
    for k, test_units in enumerate(groups):
        rest = [u for g, grp in enumerate(groups) if g != k for u in grp]
        n_val = int(round(val_share * len(rest)))
        model, _, _, X = fit_fold(data, rest[n_val:], rest[:n_val], n, gbt, seed + k, horizon)
        test = _mask(data.records, test_units)
        out[test] = model.predict_proba(X[test])
    return out
