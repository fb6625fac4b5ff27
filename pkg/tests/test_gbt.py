import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fnreduce.gbt import GbtConfig, GbtModel, Tree, cut_points, predict_proba, sigmoid, train_gbt


def xor_data(n, seed):
    rng = np.random.default_rng(seed)
    X = rng.uniform(-1, 1, size=(n, 2))
    y = ((X[:, 0] > 0) ^ (X[:, 1] > 0)).astype(float)
    return X, y


def test_xor_is_learned_with_depth_two():
    X, y = xor_data(600, 0)
    m = train_gbt(X, y, GbtConfig(max_depth=2))
    Xt, yt = xor_data(400, 1)
    acc = np.mean((predict_proba(m, Xt) >= 0.5) == yt)
    assert acc >= 0.95


def test_separable_one_dimensional_data():
    X = np.arange(40, dtype=float)[:, None]
    y = (X[:, 0] >= 17).astype(float)
    m = train_gbt(X, y, GbtConfig(n_trees=50))
    assert np.all((predict_proba(m, X) >= 0.5) == y)


def test_zero_trees_give_training_prior():
    X, y = xor_data(100, 2)
    y[:] = 0
    y[:30] = 1
    m = train_gbt(X, y, GbtConfig(n_trees=0))
    assert m.trees == []
    assert np.allclose(predict_proba(m, X), 0.3)


def test_single_class_direct_fit_gives_constant_prior():
    X, _ = xor_data(50, 3)
    y = np.ones(50)
    with pytest.raises(ValueError, match="single class"):
        train_gbt(X, y)
    m = train_gbt(X, y, GbtConfig(n_trees=0), allow_single_class=True)
    p = predict_proba(m, X)
    assert np.all(p == p[0]) and p[0] > 0.99


def hand_model():
    # stump on feature 0 at 0.5 (left -1, right 2), then a leaf-only tree of 0.5
    t1 = Tree.from_nested({"feature": 0, "threshold": 0.5, "left": {"value": -1.0}, "right": {"value": 2.0}})
    t2 = Tree.from_nested({"value": 0.5})
    return GbtModel(init_margin=0.25, learning_rate=0.1, n_features=2, trees=[t1, t2])


def test_hand_set_trees_forward_pass():
    m = hand_model()
    p = predict_proba(m, [[0.0, 9.0], [0.5, 0.0], [0.7, -3.0]])
    left = 1 / (1 + math.exp(-(0.25 + 0.1 * -1.0 + 0.1 * 0.5)))
    right = 1 / (1 + math.exp(-(0.25 + 0.1 * 2.0 + 0.1 * 0.5)))
    assert p == pytest.approx([left, left, right], abs=1e-15)


def test_positive_tree_increases_every_probability():
    X, y = xor_data(200, 4)
    m = train_gbt(X, y, GbtConfig(n_trees=20))
    before = predict_proba(m, X)
    m.trees.append(Tree.from_nested({"feature": 1, "threshold": 0.0,
                                     "left": {"value": 0.3}, "right": {"value": 1.2}}))
    assert np.all(predict_proba(m, X) > before)


def test_probabilities_strictly_inside_unit_interval():
    m = hand_model()
    m.init_margin = 1e6
    assert predict_proba(m, [[0.0, 0.0]])[0] < 1.0
    m.init_margin = -1e6
    assert predict_proba(m, [[0.0, 0.0]])[0] > 0.0


def test_dimension_mismatch():
    with pytest.raises(ValueError, match="features"):
        predict_proba(hand_model(), [[1.0, 2.0, 3.0]])


def test_json_round_trip(tmp_path):
    X, y = xor_data(300, 5)
    m = train_gbt(X, y, GbtConfig(n_trees=30), seed=7)
    m.save(tmp_path / "m.json")
    back = GbtModel.load(tmp_path / "m.json")
    assert back.seed == 7 and back.config["n_trees"] == 30
    assert np.array_equal(predict_proba(back, X), predict_proba(m, X))
    with pytest.raises(ValueError):
        GbtModel.from_dict({"format": "fnreduce-gbt", "version": 99})


def test_deterministic_given_seed():
    X, y = xor_data(300, 6)
    cfg = GbtConfig(n_trees=25, subsample=0.7)
    a = train_gbt(X, y, cfg, seed=3)
    b = train_gbt(X, y, cfg, seed=3)
    assert a.to_dict() == b.to_dict()
    c = train_gbt(X, y, cfg, seed=4)
    assert a.to_dict() != c.to_dict()


def test_early_stopping_keeps_best_prefix():
    rng = np.random.default_rng(0)
    X = rng.normal(size=(300, 3))
    y = (rng.random(300) < 0.5).astype(float)  # pure noise: validation loss stops improving quickly
    Xv = rng.normal(size=(100, 3))
    yv = (rng.random(100) < 0.5).astype(float)
    cfg = GbtConfig(n_trees=200, patience=20)
    m = train_gbt(X, y, cfg, X_val=Xv, y_val=yv)
    assert len(m.trees) < 200
    # without subsampling the unvalidated run grows the same trees in the same order
    full = train_gbt(X, y, GbtConfig(n_trees=len(m.trees) + cfg.patience)).trees
    losses = []
    for k in range(len(full) + 1):
        p = predict_proba(GbtModel(m.init_margin, m.learning_rate, 3, full[:k]), Xv)
        losses.append(-np.mean(yv * np.log(p) + (1 - yv) * np.log(1 - p)))
    assert int(np.argmin(losses)) == len(m.trees)


def stump_gain(x, g, thr):
    left = x <= thr
    nl, nr = left.sum(), (~left).sum()
    if nl == 0 or nr == 0:
        return -np.inf
    gl, gr = g[left].sum(), g[~left].sum()
    return gl ** 2 / nl + gr ** 2 / nr - g.sum() ** 2 / len(g)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000))
def test_first_split_maximizes_gain_over_all_thresholds(seed):
    rng = np.random.default_rng(seed)
    X = rng.integers(0, 12, size=(40, 3)).astype(float)
    y = (rng.random(40) < 0.4).astype(float)
    if len(np.unique(y)) < 2:
        return
    m = train_gbt(X, y, GbtConfig(n_trees=1, max_depth=1, min_leaf=1, max_bins=256))
    g = y - y.mean()
    best = max(stump_gain(X[:, f], g, t) for f in range(3) for t in np.unique(X[:, f])[:-1])
    tree = m.trees[0]
    if tree.feature[0] < 0:
        assert best <= 1e-12
    else:
        got = stump_gain(X[:, tree.feature[0]], g, tree.threshold[0])
        assert got == pytest.approx(best, rel=1e-9, abs=1e-12)


def test_cut_points_are_midpoints_and_thinned():
    assert cut_points(np.array([1.0, 1.0, 3.0, 4.0]), 64).tolist() == [2.0, 3.5]
    assert cut_points(np.ones(5), 64).size == 0
    many = cut_points(np.arange(1000, dtype=float), 16)
    assert len(many) <= 15 and np.all(np.diff(many) > 0)


@pytest.mark.parametrize("kwargs", [{"max_depth": 0}, {"learning_rate": 0.0}, {"min_leaf": 0},
                                    {"subsample": 1.5}, {"max_bins": 1}, {"n_trees": -1}])
def test_invalid_config(kwargs):
    with pytest.raises(ValueError):
        GbtConfig(**kwargs).validate()


def test_input_errors():
    with pytest.raises(ValueError):
        train_gbt(np.zeros((3, 2)), np.zeros(4))
    with pytest.raises(ValueError):
        train_gbt(np.zeros((0, 2)), np.zeros(0))


def test_threshold_invariance_under_monotone_transform():
    X, y = xor_data(300, 8)
    p = predict_proba(train_gbt(X, y, GbtConfig(n_trees=20)), X)
    q = np.log(p / (1 - p))  # strictly increasing in p
    for thr in (0.2, 0.5, 0.8):
        assert np.array_equal(p >= thr, q >= math.log(thr / (1 - thr)))
    assert sigmoid(0.0) == 0.5
