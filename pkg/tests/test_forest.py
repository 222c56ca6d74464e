from __future__ import annotations

from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from auscult.errors import ColumnMismatch, SingleClassTrainingSet
from auscult.forest import (
    FcfConfig,
    RfConfig,
    average_path_length,
    fcf_score,
    fit_fair_cut_forest,
    fit_random_forest,
    load,
    oob_log_loss,
    predict,
    rf_predict,
    save,
)
from auscult.forest.fcf import best_pooled_gain_split, depth_limit, harmonic, path_lengths
from auscult.forest.model import from_json, to_json
from auscult.forest.rf import log_loss
from auscult.forest.tuning import tune_random_forest


def _separable(n=200, p=2, seed=0):
    rng = np.random.default_rng(seed)
    X = rng.uniform(-1, 1, (n, p))
    y = (X[:, 0] + 0.5 * X[:, 1] > 0).astype(int)
    return X, y, [f"c{j}" for j in range(p)]


def _oob_accuracy(model, y):
    s = model.diagnostics["oob_scores"]
    ok = np.isfinite(s)
    return np.mean((s[ok] >= 0.5) == (y[ok] == 1))


def _gain_oracle(v):
    """Pooled sd gain at every midpoint, straight from the definition."""
    v = np.sort(v)
    best_t, best_g = np.nan, -np.inf
    for k in range(1, len(v)):
        if v[k] == v[k - 1]:
            continue
        left, right = v[:k], v[k:]
        g = v.std() - (len(left) * left.std() + len(right) * right.std()) / len(v)
        if g > best_g + 1e-12:
            best_t, best_g = 0.5 * (v[k - 1] + v[k]), g
    return best_t, best_g


# ----------------------------------------------------------------- random forest


def test_rf_separable_oob():
    X, y, names = _separable()
    model = fit_random_forest(X, y, names, RfConfig(num_trees=300, seed=1))
    assert _oob_accuracy(model, y) >= 0.95


def test_rf_always_split_in_every_candidate_set():
    X, y, names = _separable(150, 6, seed=2)
    rng = np.random.default_rng(3)
    X = np.column_stack([X, rng.integers(0, 2, len(X)), rng.integers(0, 3, len(X))])
    names = names + ["meta_side", "meta_level"]
    cfg = RfConfig(num_trees=50, mtry=1, always_split=("meta_side", "meta_level"), seed=4)
    model = fit_random_forest(X, y, names, cfg)
    feat = model.trees["feature"]
    cand = model.diagnostics["always_candidates"]
    internal = feat >= 0
    assert internal.sum() > 0
    assert np.all(cand[internal] == 2)


def test_rf_duplicates_memorised():
    rng = np.random.default_rng(5)
    base = rng.standard_normal((20, 4))
    X = np.repeat(base, 5, axis=0)
    y = np.repeat(np.arange(20) % 2, 5)
    names = [f"c{j}" for j in range(4)]
    model = fit_random_forest(X, y, names, RfConfig(num_trees=100, seed=0))
    assert np.mean((rf_predict(model, X) >= 0.5) == y) == 1.0
    # one point replicated heavily as pathological
    Xr = np.vstack([rng.standard_normal((60, 4)), np.repeat(base[:1] + 5.0, 30, axis=0)])
    yr = np.r_[rng.integers(0, 2, 60), np.ones(30, dtype=int)]
    m2 = fit_random_forest(Xr, yr, names, RfConfig(num_trees=200, seed=1))
    assert rf_predict(m2, base[:1] + 5.0)[0] >= 0.9


def test_rf_single_tree_scores_are_leaf_fractions():
    X, y, names = _separable(100, 3, seed=6)
    model = fit_random_forest(X, y, names, RfConfig(num_trees=1, seed=2))
    s = rf_predict(model, X)
    assert np.all((s >= 0) & (s <= 1))
    assert set(np.unique(s)) <= set(np.unique(model.trees["value"]))
    pure = fit_random_forest(X, y, names, RfConfig(num_trees=1, min_node_size=1, seed=2))
    assert set(np.unique(rf_predict(pure, X))) <= {0.0, 1.0}


def test_rf_row_permutation():
    X, y, names = _separable(120, 4, seed=7)
    model = fit_random_forest(X, y, names, RfConfig(num_trees=50, seed=3))
    perm = np.random.default_rng(0).permutation(len(X))
    assert np.array_equal(rf_predict(model, X[perm]), rf_predict(model, X)[perm])


def test_rf_deterministic_and_thread_independent():
    import numba

    X, y, names = _separable(150, 5, seed=8)
    cfg = RfConfig(num_trees=64, seed=11)
    a = fit_random_forest(X, y, names, cfg)
    old = numba.get_num_threads()
    try:
        numba.set_num_threads(1)
        b = fit_random_forest(X, y, names, cfg)
    finally:
        numba.set_num_threads(old)
    assert to_json(a) == to_json(b)
    c = fit_random_forest(X, y, names, replace(cfg, seed=12))
    assert to_json(a) != to_json(c)


def test_rf_serialisation_bit_exact(tmp_path):
    X, y, names = _separable(100, 3, seed=9)
    model = fit_random_forest(X, y, names, RfConfig(num_trees=20, always_split=("c2",), seed=1))
    save(model, tmp_path / "rf.json")
    back = load(tmp_path / "rf.json")
    assert back.config == model.config
    assert predict(back, X).tobytes() == predict(model, X).tobytes()


def test_rf_errors():
    X, y, names = _separable(50, 3)
    with pytest.raises(SingleClassTrainingSet):
        fit_random_forest(X, np.zeros(50, dtype=int), names, RfConfig(num_trees=5))
    with pytest.raises(SingleClassTrainingSet):
        fit_random_forest(X, np.r_[1, np.zeros(49, dtype=int)], names, RfConfig(num_trees=5))
    model = fit_random_forest(X, y, names, RfConfig(num_trees=5))
    with pytest.raises(ColumnMismatch):
        rf_predict(model, X[:, :2])
    with pytest.raises(ColumnMismatch):
        rf_predict(model, X, ["a", "b", "c"])
    with pytest.raises(ValueError):
        fit_random_forest(X, y, names, RfConfig(mtry=4))
    with pytest.raises(ValueError):
        fit_random_forest(X, y, names, RfConfig(always_split=("nope",)))


def test_oob_uses_only_out_of_bag_trees():
    X, y, names = _separable(60, 2, seed=10)
    model = fit_random_forest(X, y, names, RfConfig(num_trees=200, seed=5))
    s = model.diagnostics["oob_scores"]
    assert np.isfinite(s).all()  # 200 trees leave every row out at least once
    # the in-sample score is more confident than the OOB one on average
    ins = rf_predict(model, X)
    assert np.mean(np.abs(ins - y)) <= np.mean(np.abs(s - y))
    assert oob_log_loss(model, y) == pytest.approx(log_loss(y, s))


def test_log_loss_values():
    assert log_loss([1, 0], [0.5, 0.5]) == pytest.approx(np.log(2))
    assert log_loss([1], [1.0]) == pytest.approx(0.0, abs=1e-12)


# ----------------------------------------------------------------- tuning


def _tune_data(seed):
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((80, 10))
    y = (X[:, 0] + X[:, 1] + rng.normal(0, 1, 80) > 0).astype(int)
    return X, y, [f"c{j}" for j in range(10)]


def test_tune_budget_one():
    X, y, names = _tune_data(0)
    res = tune_random_forest(X, y, names, RfConfig(num_trees=30), budget=1, warmup=1)
    assert len(res.history) == 1
    assert (res.config.mtry, res.config.min_node_size) == res.history[0][:2]


def test_tune_picks_argmin_of_candidates():
    X, y, names = _tune_data(1)
    base = RfConfig(num_trees=60, seed=2)
    pairs = [(1, 16), (3, 2)]
    losses = {p: oob_log_loss(fit_random_forest(X, y, names, replace(base, mtry=p[0], min_node_size=p[1])), y) for p in pairs}
    res = tune_random_forest(X, y, names, base, budget=2, warmup=2, candidates=pairs)
    best = min(losses, key=losses.get)
    assert (res.config.mtry, res.config.min_node_size) == best
    assert res.best_loss == losses[best]


def test_tune_not_worse_than_default():
    for seed in range(20):
        X, y, names = _tune_data(seed)
        base = RfConfig(num_trees=100, seed=seed)
        res = tune_random_forest(X, y, names, base, budget=12, warmup=6, seed=seed)
        default = oob_log_loss(fit_random_forest(X, y, names, base), y)
        assert res.best_loss <= default


def test_tune_cache_and_bounds():
    X, y, names = _tune_data(3)
    res = tune_random_forest(X, y, names, RfConfig(num_trees=20), budget=15, warmup=5, seed=1)
    pairs = [h[:2] for h in res.history]
    assert len(pairs) == len(set(pairs))
    assert all(1 <= m <= 10 and n >= 1 for m, n in pairs)
    with pytest.raises(ValueError):
        tune_random_forest(X, y, names, budget=2, warmup=3)


# ----------------------------------------------------------------- fair-cut forest


def test_average_path_length_values():
    assert average_path_length(2) == 1.0
    assert average_path_length(1) == 0.0
    assert harmonic(1) == 1.0
    assert average_path_length(256) == pytest.approx(2 * (np.log(255) + np.euler_gamma) - 2 * 255 / 256, abs=1e-2)
    assert depth_limit(256) == 16


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(-1e3, 1e3, allow_nan=False), min_size=2, max_size=40))
def test_pooled_gain_split_matches_brute_force(values):
    v = np.sort(np.array(values))
    t, g = best_pooled_gain_split(v)
    t_ref, g_ref = _gain_oracle(v)
    if np.isnan(t_ref):
        assert np.isnan(t)
        return
    assert g == pytest.approx(g_ref, abs=1e-7 * max(1.0, np.abs(v).max()))
    # the chosen threshold achieves the optimum gain
    left, right = v[v <= t], v[v > t]
    g_at_t = v.std() - (len(left) * left.std() + len(right) * right.std()) / len(v)
    assert g_at_t == pytest.approx(g_ref, abs=1e-7 * max(1.0, np.abs(v).max()))


def test_fcf_first_split_isolates_outlier():
    X = np.r_[np.zeros(20), 10.0][:, None]
    model = fit_fair_cut_forest(X, ["x"], FcfConfig(num_trees=20, ndim=1, seed=0))
    t = model.trees
    for tree in range(20):
        children = (t["left"][tree, 0], t["right"][tree, 0])
        sizes = sorted(int(t["leaf_size"][tree, c]) for c in children)
        assert sizes == [1, 20]
    s = fcf_score(model, X)
    assert np.argmax(s) == 20


def test_fcf_outlier_ranks_first():
    hits = 0
    for seed in range(100):
        rng = np.random.default_rng(seed)
        X = rng.standard_normal((101, 3))
        X[100] = 10.0 * np.ones(3) / np.sqrt(3)
        model = fit_fair_cut_forest(X, ["a", "b", "c"], FcfConfig(num_trees=100, seed=seed))
        s = fcf_score(model, X)
        assert np.all((s > 0) & (s < 1))
        hits += int(np.argmax(s) == 100)
    assert hits >= 95


def test_fcf_identical_rows_equal_scores():
    X = np.ones((30, 4))
    model = fit_fair_cut_forest(X, list("abcd"), FcfConfig(num_trees=10))
    s = fcf_score(model, X)
    assert np.all(s == s[0])
    assert s[0] == pytest.approx(0.5)


def test_fcf_random_thresholds_bounded():
    X = np.random.default_rng(1).standard_normal((64, 2))
    model = fit_fair_cut_forest(X, ["a", "b"], FcfConfig(num_trees=50, ndim=1, pick_pooled_gain=0.0, seed=3))
    s = fcf_score(model, X)
    assert np.all((s > 0) & (s < 1))


def test_fcf_score_is_monotone_in_depth():
    X = np.random.default_rng(2).standard_normal((64, 3))
    model = fit_fair_cut_forest(X, list("abc"), FcfConfig(num_trees=50, seed=1))
    h = path_lengths(model, X).mean(axis=1)
    s = fcf_score(model, X)
    order = np.argsort(h)
    assert np.all(np.diff(s[order]) <= 0)
    c = average_path_length(64)
    assert np.allclose(s, 2.0 ** (-h / c))


def test_fcf_row_order_and_determinism(tmp_path):
    X = np.random.default_rng(4).standard_normal((50, 3))
    cfg = FcfConfig(num_trees=40, seed=9)
    a = fit_fair_cut_forest(X, list("abc"), cfg)
    b = fit_fair_cut_forest(X, list("abc"), cfg)
    assert to_json(a) == to_json(b)
    perm = np.random.default_rng(0).permutation(50)
    assert np.array_equal(fcf_score(a, X[perm]), fcf_score(a, X)[perm])
    back = from_json(to_json(a))
    assert fcf_score(back, X).tobytes() == fcf_score(a, X).tobytes()
    with pytest.raises(ColumnMismatch):
        fcf_score(a, X[:, :2])


def test_fcf_sample_size_and_depth():
    X = np.random.default_rng(5).standard_normal((200, 3))
    model = fit_fair_cut_forest(X, list("abc"), FcfConfig(num_trees=10, sample_size=32, seed=2))
    assert model.info["sample_size"] == 32
    # leaves hold at most the subsample and depth never exceeds the ceiling
    assert model.trees["leaf_size"].max() <= 32
    h = path_lengths(model, X)
    assert h.max() <= depth_limit(32) + average_path_length(32)


def test_fcf_config_validation():
    X = np.zeros((5, 2))
    with pytest.raises(ValueError):
        fit_fair_cut_forest(X, ["a", "b"], FcfConfig(ndim=0))
    with pytest.raises(ValueError):
        fit_fair_cut_forest(X, ["a", "b"], FcfConfig(pick_pooled_gain=1.5))
    with pytest.raises(ValueError):
        fit_fair_cut_forest(np.array([[np.nan, 0.0], [1.0, 1.0]]), ["a", "b"], FcfConfig())
