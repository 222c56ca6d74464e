from __future__ import annotations

import math
from dataclasses import replace
from fractions import Fraction

import numpy as np
import pytest
from conftest import fake_table
from hypothesis import given, settings
from hypothesis import strategies as st

from auscult import evaluation
from auscult.corpus import SubjectMeta
from auscult.datasets import build_dataset
from auscult.errors import SingleClassInput, TooFewSubjectsForK
from auscult.evaluation import (
    ConfusionMetrics,
    ModelSpec,
    aggregate_runs,
    auc_prc,
    auc_roc,
    ci_half_width,
    ci_z,
    confusion_metrics,
    eer_threshold,
    make_folds,
    make_run,
    pr_points,
    read_runs_csv,
    roc_points,
    run_cv,
    write_runs_csv,
)
from auscult.forest import FcfConfig, RfConfig
from auscult.fusion import Prediction

COHORT = {("Female", 0): 12, ("Female", 1): 8, ("Male", 0): 14, ("Male", 1): 11}


def cohort_subjects():
    out, i = [], 0
    for (sex, dx), n in COHORT.items():
        for _ in range(n):
            out.append(SubjectMeta(f"S{i:02d}", sex, 50.0, dx))
            i += 1
    return out


# ----------------------------------------------------------------- oracles


def auc_oracle(s, y):
    pos = [a for a, b in zip(s, y) if b == 1]
    neg = [a for a, b in zip(s, y) if b == 0]
    total = sum(1.0 if p > n else 0.5 if p == n else 0.0 for p in pos for n in neg)
    return total / (len(pos) * len(neg))


def ap_oracle(s, y):
    n_pos = sum(y)
    area, prev_recall = 0.0, 0.0
    for t in sorted(set(s), reverse=True):
        called = [b for a, b in zip(s, y) if a >= t]
        tp = sum(called)
        recall = tp / n_pos
        area += (recall - prev_recall) * tp / len(called)
        prev_recall = recall
    return area


def confusion_oracle(tp, tn, fp, fn):
    n = tp + tn + fp + fn

    def ratio(a, b):
        return a / b if b else math.nan

    acc = ratio(tp + tn, n)
    sens, spec = ratio(tp, tp + fn), ratio(tn, tn + fp)
    prec, npv = ratio(tp, tp + fp), ratio(tn, tn + fn)
    f1 = math.nan if math.isnan(prec) or math.isnan(sens) else (0.0 if prec + sens == 0 else 2 * prec * sens / (prec + sens))
    p_yes = ((tp + fn) / n) * ((tp + fp) / n)
    p_no = ((tn + fp) / n) * ((tn + fn) / n)
    pe = p_yes + p_no
    kappa = ratio(acc - pe, 1 - pe)
    return {"Acc": acc, "Kappa": kappa, "Sens": sens, "Spec": spec, "Prec": prec, "NPV": npv, "F1": f1}


def _random_instance(rng, n_max=50):
    n = int(rng.integers(2, n_max + 1))
    y = rng.integers(0, 2, n)
    y[0], y[1] = 0, 1
    # coarse grid makes ties common
    s = rng.integers(0, int(rng.integers(2, 12)), n) / 10.0 if rng.random() < 0.5 else rng.random(n)
    return s, y


def _same(a, b, tol=1e-12):
    return (math.isnan(a) and math.isnan(b)) or abs(a - b) <= tol


# ----------------------------------------------------------------- AUCs


def test_auc_roc_examples():
    assert auc_roc([0.1, 0.4, 0.35, 0.8], [0, 0, 1, 1]) == 0.75
    assert auc_roc([0.1, 0.2, 0.8, 0.9], [0, 0, 1, 1]) == 1.0
    assert auc_roc([0.3] * 6, [0, 1] * 3) == 0.5


def test_auc_roc_brute_force():
    rng = np.random.default_rng(0)
    for _ in range(500):
        s, y = _random_instance(rng)
        assert abs(auc_roc(s, y) - auc_oracle(s, y)) <= 1e-12


def test_auc_prc_examples():
    assert auc_prc([0.9, 0.8, 0.2, 0.1], [1, 1, 0, 0]) == 1.0
    s = np.linspace(1, 0, 10)
    assert auc_prc(s, [1] + [0] * 9) == 1.0


def test_auc_prc_matches_step_sum():
    rng = np.random.default_rng(1)
    for _ in range(300):
        s, y = _random_instance(rng)
        assert abs(auc_prc(s, y) - ap_oracle(list(s), list(y))) <= 1e-12


def test_auc_prc_null_model():
    vals = []
    for seed in range(100):
        rng = np.random.default_rng(seed)
        y = np.r_[np.ones(100, dtype=int), np.zeros(100, dtype=int)]
        vals.append(auc_prc(rng.random(200), y))
    assert abs(np.mean(vals) - 0.5) <= 0.1


def test_single_class_rejected():
    for fn in (auc_roc, auc_prc, eer_threshold, roc_points, pr_points):
        with pytest.raises(SingleClassInput):
            fn([0.1, 0.2], [1, 1])


def test_curve_endpoints():
    s, y = [0.9, 0.7, 0.7, 0.3, 0.1], [1, 0, 1, 1, 0]
    fpr, tpr = roc_points(s, y)
    assert (fpr[0], tpr[0], fpr[-1], tpr[-1]) == (0.0, 0.0, 1.0, 1.0)
    # trapezoid area under the step ROC equals the Mann-Whitney AUC
    assert np.trapezoid(tpr, fpr) == pytest.approx(auc_roc(s, y))
    rec, prec = pr_points(s, y)
    assert rec[-1] == 1.0 and prec[-1] == pytest.approx(3 / 5)


# ----------------------------------------------------------------- confusion metrics


def test_confusion_examples():
    m = ConfusionMetrics(20, 15, 5, 10)
    assert m.acc == pytest.approx(0.70)
    assert m.kappa == pytest.approx(0.40)
    m = ConfusionMetrics(3, 4, 1, 2)
    assert (m.prec, m.sens) == (0.75, 0.6)
    assert m.f1 == pytest.approx(2 / 3)
    assert m.npv == pytest.approx(2 / 3)
    perfect = ConfusionMetrics(5, 5, 0, 0).as_dict()
    assert all(v == 1.0 for v in perfect.values())


def test_confusion_matches_direct_formulas():
    rng = np.random.default_rng(2)
    for _ in range(200):
        tp, tn, fp, fn = (int(v) for v in rng.integers(0, 30, 4))
        if tp + tn + fp + fn == 0:
            tp = 1
        got = ConfusionMetrics(tp, tn, fp, fn).as_dict()
        want = confusion_oracle(tp, tn, fp, fn)
        for k in want:
            assert _same(got[k], want[k]), k


def test_confusion_counts_score_at_threshold_positive():
    m = confusion_metrics([0.5, 0.5, 0.2], [1, 0, 0], 0.5)
    assert (m.tp, m.fp, m.tn, m.fn) == (1, 1, 1, 0)
    with pytest.raises(ValueError):
        confusion_metrics([0.1], [1], float("nan"))


def test_kappa_properties():
    rng = np.random.default_rng(3)
    for _ in range(100):
        s, y = _random_instance(rng)
        # constant predictions
        assert ConfusionMetrics(int(y.sum()), 0, int(len(y) - y.sum()), 0).kappa == pytest.approx(0.0, abs=1e-12)
        assert ConfusionMetrics(0, int(len(y) - y.sum()), 0, int(y.sum())).kappa == pytest.approx(0.0, abs=1e-12)
        m = confusion_metrics(s, y, float(rng.random()))
        if m.fp == m.fn == 0:
            assert m.kappa == pytest.approx(1.0)
        elif not math.isnan(m.kappa):
            assert m.kappa < 1.0
    assert ConfusionMetrics(4, 6, 0, 0).kappa == 1.0


def test_threshold_monotonicity():
    rng = np.random.default_rng(4)
    for _ in range(100):
        s, y = _random_instance(rng)
        ts = np.sort(rng.random(8))
        ms = [confusion_metrics(s, y, t) for t in ts]
        assert all(b.sens <= a.sens for a, b in zip(ms, ms[1:]))
        assert all(b.spec >= a.spec for a, b in zip(ms, ms[1:]))


def test_f1_na_and_zero():
    assert math.isnan(ConfusionMetrics(0, 5, 0, 3).f1)  # no positive calls
    assert ConfusionMetrics(0, 5, 2, 3).f1 == 0.0


# ----------------------------------------------------------------- EER


def test_eer_examples():
    assert eer_threshold([0.9, 0.8, 0.2, 0.1], [1, 1, 0, 0]) == 0.5
    assert eer_threshold([0.4, 0.4, 0.4], [1, 0, 1]) == 0.4


def test_eer_exhaustive_scan():
    rng = np.random.default_rng(5)
    for _ in range(200):
        s, y = _random_instance(rng, 30)
        t = eer_threshold(s, y)
        u = np.unique(s)
        if len(u) == 1:
            continue
        cands = (u[:-1] + u[1:]) / 2

        def key(c):
            m = confusion_metrics(s, y, c)
            return (abs(Fraction(m.tp, m.tp + m.fn) - Fraction(m.tn, m.tn + m.fp)), -(m.tp + m.tn), c)

        best = min(cands, key=key)
        assert key(t)[:2] == key(best)[:2]
        assert t == pytest.approx(best)


# ----------------------------------------------------------------- folds


def test_fold_integrity_cohort():
    subjects = cohort_subjects()
    plan = make_folds(subjects, k=9, repeats=30, seed=0)
    strata = {s.subject_code: s.stratum for s in subjects}
    for r in range(30):
        folds = [plan.test_subjects(r, f) for f in range(9)]
        flat = [s for f in folds for s in f]
        assert sorted(flat) == sorted(strata)
        assert all(len(f) == 5 for f in folds)
        for (sex, dx), n in COHORT.items():
            counts = [sum(strata[s] == f"{sex}:{dx}" for s in f) for f in folds]
            assert all(abs(c - n / 9) < 1 for c in counts)


def test_folds_deterministic_and_seeded():
    subjects = cohort_subjects()
    a = make_folds(subjects, 9, 3, seed=4)
    b = make_folds(subjects, 9, 3, seed=4)
    c = make_folds(subjects, 9, 3, seed=5)
    assert a.assignment == b.assignment
    assert a.assignment != c.assignment
    assert [a.fold_of(0, s) for s in a.subjects] != [a.fold_of(1, s) for s in a.subjects]


def test_leave_one_out_and_errors():
    subjects = {f"s{i}": "x" for i in range(6)}
    plan = make_folds(subjects, k=6, repeats=2)
    for r in range(2):
        assert sorted(len(plan.test_subjects(r, f)) for f in range(6)) == [1] * 6
    with pytest.raises(TooFewSubjectsForK):
        make_folds(subjects, k=7)
    with pytest.raises(TooFewSubjectsForK):
        make_folds(subjects, k=1)


@settings(max_examples=60, deadline=None)
@given(st.lists(st.integers(1, 12), min_size=1, max_size=5), st.integers(2, 9), st.integers(0, 100))
def test_folds_balanced_any_strata(sizes, k, seed):
    subjects = {f"s{j}_{i}": f"g{j}" for j, n in enumerate(sizes) for i in range(n)}
    if k > len(subjects):
        return
    plan = make_folds(subjects, k=k, repeats=2, seed=seed)
    for r in range(2):
        folds = [plan.test_subjects(r, f) for f in range(k)]
        lens = [len(f) for f in folds]
        assert max(lens) - min(lens) <= 1
        for j, n in enumerate(sizes):
            counts = [sum(subjects[s] == f"g{j}" for s in f) for f in folds]
            assert max(counts) - min(counts) <= 1
            assert sum(counts) == n


# ----------------------------------------------------------------- aggregation


def _run_with_auc(repeat, target):
    """A run whose AUC ROC equals ``target`` (a multiple of 0.1) on 10 x 10 pairs."""
    preds = []
    wins = round(target * 100)
    # positive i beats exactly ``per_pos[i]`` negatives
    per_pos = [wins // 10 + (1 if i < wins % 10 else 0) for i in range(10)]
    for i in range(10):
        preds.append(Prediction(i, f"n{i}", float(i), 0))
    for i, w in enumerate(per_pos):
        preds.append(Prediction(10 + i, f"p{i}", w - 0.5, 1))
    run = make_run(repeat, preds)
    assert run.auc_roc == pytest.approx(target)
    return run


def test_aggregate_three_runs():
    runs = [_run_with_auc(i, v) for i, v in enumerate([0.6, 0.7, 0.8])]
    rep = aggregate_runs(runs)
    assert rep.auc_roc == pytest.approx(0.7)
    assert rep.central_run == 1
    assert rep.auc_roc_ci == pytest.approx(1.645 * 0.1 / math.sqrt(3))
    central = runs[1]
    assert rep.threshold == eer_threshold(central.scores, central.labels)
    assert rep.confusion == confusion_metrics(central.scores, central.labels, rep.threshold)


def test_identical_runs_zero_ci_first_central():
    runs = [_run_with_auc(i, 0.7) for i in range(4)]
    rep = aggregate_runs(runs)
    assert rep.auc_roc_ci == 0.0
    assert rep.central_run == 0


def test_single_run_has_no_ci():
    rep = aggregate_runs([_run_with_auc(0, 0.8)])
    assert rep.auc_roc_ci is None and rep.auc_prc_ci is None
    assert rep.to_dict()["auc_roc"]["ci_half_width"] is None


def test_ci_scales_with_root_r():
    assert ci_z(0.90) == 1.645
    assert ci_z(0.95) == 1.96
    rng = np.random.default_rng(6)
    pool = rng.normal(0.7, 0.05, 100000)
    small = np.mean([ci_half_width(rng.choice(pool, 50)) for _ in range(200)])
    large = np.mean([ci_half_width(rng.choice(pool, 800)) for _ in range(200)])
    assert small / large == pytest.approx(4.0, rel=0.05)


# ----------------------------------------------------------------- cross-validation


def _cv_dataset(n_subjects=18, signal=2.0, windowing="w0", variant="raw", meta="default", seed=0):
    table = fake_table(n_subjects, windowing, n_features=6, seed=seed, n_pos=n_subjects // 2)
    labels = np.array([m["label"] for m in table.meta])
    table.values[:, 0] += signal * labels
    return build_dataset(table, variant, meta)


def _strata(ds):
    return {m["subject"]: str(int(y)) for m, y in zip(ds.row_meta, ds.labels)}


def test_run_cv_partitions_rows(monkeypatch):
    ds = _cv_dataset()
    ds.matrix = np.column_stack([ds.matrix, np.arange(ds.shape[0], dtype=float)])
    ds.column_names = ds.column_names + ["row_marker"]
    plan = make_folds(_strata(ds), k=3, repeats=2, seed=1)
    seen = []
    real = evaluation._fit_score

    def spy(spec, X_train, y_train, X_test, names, seed):
        seen.append((X_train[:, -1].astype(int), X_test[:, -1].astype(int)))
        return real(spec, X_train, y_train, X_test, names, seed)

    monkeypatch.setattr(evaluation, "_fit_score", spy)
    spec = ModelSpec("rf", RfConfig(num_trees=20), tune_budget=0)
    runs = run_cv(ds, plan, spec)
    subjects = ds.subjects
    assert len(seen) == 6
    for r in range(2):
        tested = np.concatenate([t for _, t in seen[3 * r: 3 * r + 3]])
        assert sorted(tested) == list(range(ds.shape[0]))
        for train, test in seen[3 * r: 3 * r + 3]:
            assert not set(subjects[train]) & set(subjects[test])
        assert sorted(p.row_id for p in runs[r].predictions) == list(range(ds.shape[0]))


def test_run_cv_rf_separable():
    ds = _cv_dataset(signal=4.0)
    plan = make_folds(_strata(ds), k=3, repeats=2, seed=0)
    runs = run_cv(ds, plan, ModelSpec("rf", RfConfig(num_trees=50), tune_budget=0))
    assert np.mean([r.auc_roc for r in runs]) >= 0.9


def test_run_cv_fcf_ignores_labels():
    ds = _cv_dataset(variant="cms", meta=None)
    plan = make_folds(_strata(ds), k=3, repeats=1, seed=2)
    spec = ModelSpec("fcf", fcf=FcfConfig(num_trees=30))
    a = run_cv(ds, plan, spec)
    flipped = replace(ds, labels=1 - ds.labels)
    b = run_cv(flipped, plan, spec)
    assert a[0].scores.tobytes() == b[0].scores.tobytes()


def test_run_cv_fusion_and_determinism():
    ds = _cv_dataset(n_subjects=12)
    plan = make_folds(_strata(ds), k=3, repeats=2, seed=3)
    spec = ModelSpec("rf", RfConfig(num_trees=20), tune_budget=0)
    fused = run_cv(ds, plan, spec, "code")
    assert all(len(r.predictions) == 12 for r in fused)
    assert all(p.fused_scope == "code" for p in fused[0].predictions)
    again = run_cv(ds, plan, spec, "code")
    assert [r.scores.tobytes() for r in fused] == [r.scores.tobytes() for r in again]


def test_run_cv_imputes_in_fold():
    ds = _cv_dataset(n_subjects=12)
    ds.matrix[:4, 1] = np.nan
    ds.matrix[:, 2] = np.nan
    plan = make_folds(_strata(ds), k=3, repeats=1)
    runs = run_cv(ds, plan, ModelSpec("rf", RfConfig(num_trees=10), tune_budget=0))
    assert np.isfinite(runs[0].scores).all()


def test_runs_csv_round_trip(tmp_path):
    ds = _cv_dataset(n_subjects=12, windowing="w3")
    plan = make_folds(_strata(ds), k=3, repeats=2)
    runs = run_cv(ds, plan, ModelSpec("rf", RfConfig(num_trees=10), tune_budget=0), "code_channel")
    write_runs_csv(tmp_path / "runs.csv", runs)
    back = read_runs_csv(tmp_path / "runs.csv")
    assert len(back) == 2
    for a, b in zip(runs, back):
        assert a.predictions == b.predictions
        assert a.folds == b.folds
        assert a.auc_roc == b.auc_roc
