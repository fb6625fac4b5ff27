"""Gradient-boosted regression trees for binary classification (logistic loss).

Trees are fitted to the negative gradient ``y - p`` by squared-error gain
over per-feature cut points, with Newton leaf values
``sum(y - p) / sum(p (1 - p))``.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np

MODEL_FORMAT = "fnreduce-gbt"
MODEL_VERSION = 1
_MAX_MARGIN = 30.0
_PRIOR_CLIP = 1e-6


@dataclass
class GbtConfig:
    n_trees: int = 200
    max_depth: int = 3
    learning_rate: float = 0.1
    min_leaf: int = 5
    subsample: float = 1.0
    patience: int = 20
    max_bins: int = 64

    def validate(self) -> None:
        if self.n_trees < 0 or self.max_depth < 1 or self.min_leaf < 1:
            raise ValueError("invalid tree configuration")
        if not 0.0 < self.learning_rate <= 1.0:
            raise ValueError("learning_rate must lie in (0, 1]")
        if not 0.0 < self.subsample <= 1.0:
            raise ValueError("subsample must lie in (0, 1]")
        if self.max_bins < 2:
            raise ValueError("max_bins must be at least 2")


def sigmoid(margin):
    return 1.0 / (1.0 + np.exp(-np.clip(margin, -_MAX_MARGIN, _MAX_MARGIN)))


@dataclass
class Tree:
    """Flat binary tree; ``feature[k] == -1`` marks a leaf holding ``value[k]``."""

    feature: list[int] = field(default_factory=list)
    threshold: list[float] = field(default_factory=list)
    left: list[int] = field(default_factory=list)
    right: list[int] = field(default_factory=list)
    value: list[float] = field(default_factory=list)

    def add_leaf(self, value: float) -> int:
        return self._add(-1, 0.0, float(value))

    def add_split(self, feature: int, threshold: float) -> int:
        return self._add(int(feature), float(threshold), 0.0)

    def _add(self, feature, threshold, value) -> int:
        self.feature.append(feature)
        self.threshold.append(threshold)
        self.left.append(-1)
        self.right.append(-1)
        self.value.append(value)
        return len(self.feature) - 1

    def predict(self, X: np.ndarray) -> np.ndarray:
        feat = np.asarray(self.feature)
        thr = np.asarray(self.threshold)
        left = np.asarray(self.left)
        right = np.asarray(self.right)
        node = np.zeros(len(X), dtype=int)
        rows = np.arange(len(X))
        while True:
            f = feat[node]
            internal = f >= 0
            if not internal.any():
                break
            go_left = X[rows, np.where(internal, f, 0)] <= thr[node]
            node = np.where(internal, np.where(go_left, left[node], right[node]), node)
        return np.asarray(self.value)[node]

    def to_nested(self, k: int = 0) -> dict:
        if self.feature[k] < 0:
            return {"value": self.value[k]}
        return {
            "feature": self.feature[k],
            "threshold": self.threshold[k],
            "left": self.to_nested(self.left[k]),
            "right": self.to_nested(self.right[k]),
        }

    @classmethod
    def from_nested(cls, node: dict) -> "Tree":
        tree = cls()

        def build(d):
            if "value" in d:
                return tree.add_leaf(d["value"])
            k = tree.add_split(d["feature"], d["threshold"])
            tree.left[k] = build(d["left"])
            tree.right[k] = build(d["right"])
            return k

        build(node)
        return tree


@dataclass
class GbtModel:
    init_margin: float
    learning_rate: float
    n_features: int
    trees: list[Tree] = field(default_factory=list)
    config: dict = field(default_factory=dict)
    seed: int = 0

    def decision_function(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if X.shape[1] != self.n_features:
            raise ValueError(f"expected {self.n_features} features, got {X.shape[1]}")
        margin = np.full(len(X), self.init_margin)
        for tree in self.trees:
            margin += self.learning_rate * tree.predict(X)
        return margin

    def predict_proba(self, X) -> np.ndarray:
        """Probability of the positive class for every row of ``X``."""
        return sigmoid(self.decision_function(X))

    def to_dict(self) -> dict:
        return {
            "format": MODEL_FORMAT,
            "version": MODEL_VERSION,
            "init_margin": self.init_margin,
            "learning_rate": self.learning_rate,
            "n_features": self.n_features,
            "config": self.config,
            "seed": self.seed,
            "trees": [t.to_nested() for t in self.trees],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GbtModel":
        if d.get("format") != MODEL_FORMAT or d.get("version") != MODEL_VERSION:
            raise ValueError(f"not a {MODEL_FORMAT} v{MODEL_VERSION} model")
        return cls(
            init_margin=float(d["init_margin"]),
            learning_rate=float(d["learning_rate"]),
            n_features=int(d["n_features"]),
            trees=[Tree.from_nested(t) for t in d["trees"]],
            config=dict(d.get("config", {})),
            seed=int(d.get("seed", 0)),
        )

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, sort_keys=True)
            fh.write("\n")

    @classmethod
    def load(cls, path) -> "GbtModel":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def cut_points(column: np.ndarray, max_bins: int) -> np.ndarray:
    """Candidate thresholds: midpoints between neighbouring distinct values,
    thinned to at most ``max_bins - 1`` by quantile when there are more."""
    u = np.unique(column)
    if len(u) < 2:
        return np.empty(0)
    mids = u[:-1] + (u[1:] - u[:-1]) / 2.0
    mids = np.where((mids >= u[:-1]) & (mids < u[1:]), mids, u[:-1])
    if len(mids) > max_bins - 1:
        # pick cut positions by sample quantile so bins hold similar counts
        ranks = np.searchsorted(u, column)
        counts = np.bincount(ranks, minlength=len(u)).cumsum()[:-1]
        targets = np.linspace(0, len(column), max_bins + 1)[1:-1]
        picks = np.unique(np.clip(np.searchsorted(counts, targets), 0, len(mids) - 1))
        mids = mids[picks]
    return mids


class _TreeBuilder:
    """Histogram split search over per-feature cut points.

    Samples are binned once; each node sums gradients and counts per bin and
    the larger child reuses its parent's histogram minus the smaller child's.
    """

    def __init__(self, X: np.ndarray, cfg: GbtConfig):
        n, F = X.shape
        self.cuts = [cut_points(X[:, f], cfg.max_bins) for f in range(F)]
        B = max([len(c) for c in self.cuts] + [0]) + 1
        codes = np.empty((n, F), dtype=np.int64)
        for f, c in enumerate(self.cuts):
            codes[:, f] = np.searchsorted(c, X[:, f], side="left")
        self.codes = codes
        self.flat = codes + np.arange(F) * B
        self.B = B
        self.F = F
        # a split "after bin c" exists only for real cut points of that feature
        self.valid = np.arange(B - 1)[None, :] < np.array([len(c) for c in self.cuts])[:, None]
        self.cfg = cfg

    def _hist(self, idx, grad):
        fc = self.flat[idx].ravel()
        size = self.F * self.B
        hg = np.bincount(fc, weights=np.repeat(grad[idx], self.F), minlength=size)
        hn = np.bincount(fc, minlength=size)
        return hg.reshape(self.F, self.B), hn.reshape(self.F, self.B)

    def fit(self, grad: np.ndarray, hess: np.ndarray, member: np.ndarray) -> Tree:
        tree = Tree()
        idx = np.flatnonzero(member)
        self._grow(tree, grad, hess, idx, self._hist(idx, grad), 0)
        return tree

    def _best_split(self, hist, k):
        m = self.cfg.min_leaf
        if k < 2 * m or self.B < 2:
            return None
        hg, hn = hist
        gl = np.cumsum(hg, axis=1)[:, :-1]
        nl = np.cumsum(hn, axis=1)[:, :-1]
        total = hg[0].sum()
        ok = self.valid & (nl >= m) & (k - nl >= m)
        with np.errstate(divide="ignore", invalid="ignore"):
            gain = gl ** 2 / nl + (total - gl) ** 2 / (k - nl) - total ** 2 / k
        gain = np.where(ok, gain, -np.inf)
        flat = int(np.argmax(gain))
        f, c = divmod(flat, gain.shape[1])
        if not gain[f, c] > 1e-12:
            return None
        return f, c

    def _grow(self, tree, grad, hess, idx, hist, depth) -> int:
        split = self._best_split(hist, len(idx)) if depth < self.cfg.max_depth else None
        if split is None:
            h = hess[idx].sum()
            return tree.add_leaf(grad[idx].sum() / h if h > 1e-12 else 0.0)
        f, c = split
        node = tree.add_split(f, self.cuts[f][c])
        goes_left = self.codes[idx, f] <= c
        li, ri = idx[goes_left], idx[~goes_left]
        if len(li) <= len(ri):
            lh = self._hist(li, grad)
            rh = (hist[0] - lh[0], hist[1] - lh[1])
        else:
            rh = self._hist(ri, grad)
            lh = (hist[0] - rh[0], hist[1] - rh[1])
        tree.left[node] = self._grow(tree, grad, hess, li, lh, depth + 1)
        tree.right[node] = self._grow(tree, grad, hess, ri, rh, depth + 1)
        return node


def _log_loss(y, margin) -> float:
    p = sigmoid(margin)
    eps = 1e-15
    return float(-np.mean(y * np.log(p + eps) + (1 - y) * np.log(1 - p + eps)))


def train_gbt(X, y, config: GbtConfig | None = None, seed: int = 0,
              X_val=None, y_val=None, allow_single_class: bool = False) -> GbtModel:
    """Boost ``config.n_trees`` trees; with validation data, keep the prefix with
    the lowest validation log-loss, stopping after ``patience`` trees without
    improvement."""
    cfg = config or GbtConfig()
    cfg.validate()
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if X.ndim != 2 or len(X) != len(y):
        raise ValueError("X must be 2-D with one row per label")
    if len(y) == 0:
        raise ValueError("no training data")
    if len(np.unique(y)) < 2 and not allow_single_class:
        raise ValueError("training data contains a single class")
    prior = float(np.clip(y.mean(), _PRIOR_CLIP, 1 - _PRIOR_CLIP))
    model = GbtModel(
        init_margin=float(np.log(prior / (1 - prior))),
        learning_rate=cfg.learning_rate,
        n_features=X.shape[1],
        config=asdict(cfg),
        seed=seed,
    )
    rng = np.random.default_rng(seed)
    builder = _TreeBuilder(X, cfg)
    margin = np.full(len(y), model.init_margin)
    validate = X_val is not None and y_val is not None and len(y_val) > 0
    if validate:
        X_val = np.asarray(X_val, dtype=float)
        y_val = np.asarray(y_val, dtype=float)
        val_margin = np.full(len(y_val), model.init_margin)
        best_loss, best_n = _log_loss(y_val, val_margin), 0
    for _ in range(cfg.n_trees):
        p = sigmoid(margin)
        grad = y - p
        hess = p * (1 - p)
        if cfg.subsample < 1.0:
            member = np.zeros(len(y), dtype=bool)
            member[rng.choice(len(y), max(1, int(round(cfg.subsample * len(y)))), replace=False)] = True
        else:
            member = np.ones(len(y), dtype=bool)
        tree = builder.fit(grad, hess, member)
        model.trees.append(tree)
        margin += cfg.learning_rate * tree.predict(X)
        if validate:
            val_margin += cfg.learning_rate * tree.predict(X_val)
            loss = _log_loss(y_val, val_margin)
            if loss < best_loss - 1e-12:
                best_loss, best_n = loss, len(model.trees)
            elif len(model.trees) - best_n >= cfg.patience:
                break
    if validate:
        del model.trees[best_n:]
    return model


def predict_proba(model: GbtModel, X) -> np.ndarray:
    return model.predict_proba(X)
