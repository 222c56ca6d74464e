"""Repeated subject-grouped cross-validation and detection metrics.

The positive class is pathological (label 1) and a row is called positive
when its score is at or above the threshold. Ratios with a zero denominator
are NaN in memory and ``NA`` in written reports.
"""

from __future__ import annotations

import csv
import logging
import math
import warnings
from dataclasses import dataclass, field, replace
from pathlib import Path
from statistics import NormalDist

import numpy as np
from scipy.stats import rankdata

from .errors import SingleClassInput, TooFewSubjectsForK
from .forest import FcfConfig, RfConfig, fcf_score, fit_fair_cut_forest, fit_random_forest, rf_predict
from .forest._rng import derive_seed
from .forest.tuning import tune_random_forest
from .fusion import Prediction, fuse

logger = logging.getLogger(__name__)


# ----------------------------------------------------------------- folds


@dataclass(frozen=True)
class FoldPlan:
    k: int
    repeats: int
    seed: int
    assignment: dict[tuple[int, str], int]  # (repeat, subject) -> fold
    strata: dict[str, str]  # subject -> stratum

    @property
    def subjects(self) -> list[str]:
        return sorted(self.strata)

    def fold_of(self, repeat: int, subject: str) -> int:
        return self.assignment[(repeat, subject)]

    def test_subjects(self, repeat: int, fold: int) -> list[str]:
        return [s for s in self.subjects if self.assignment[(repeat, s)] == fold]


def _strata_of(subjects) -> dict[str, str]:
    if isinstance(subjects, dict):
        return {str(k): str(v) for k, v in subjects.items()}
    return {s.subject_code: s.stratum for s in subjects}


def make_folds(subjects, k: int = 9, repeats: int = 30, seed: int = 0) -> FoldPlan:
    """Stratified assignment of subjects to ``k`` folds, ``repeats`` times.

    ``subjects`` is an iterable of :class:`~auscult.corpus.SubjectMeta` or a
    mapping subject -> stratum label. Within each stratum the shuffled
    subjects are dealt round-robin, continuing the deal across strata, so
    every fold holds floor or ceil of (stratum size / k) of each stratum and
    fold sizes differ by at most one. Fold labels are then permuted.
    """
    strata = _strata_of(subjects)
    if k < 2:
        raise TooFewSubjectsForK(f"k must be >= 2, got {k}")
    if k > len(strata):
        raise TooFewSubjectsForK(f"k={k} exceeds the {len(strata)} subjects")
    if repeats < 1:
        raise ValueError("repeats must be >= 1")
    by_stratum: dict[str, list[str]] = {}
    for s in sorted(strata):
        by_stratum.setdefault(strata[s], []).append(s)

    assignment: dict[tuple[int, str], int] = {}
    for r in range(repeats):
        rng = np.random.default_rng([seed, r])
        relabel = rng.permutation(k)
        pos = 0
        for name in sorted(by_stratum):
            members = by_stratum[name]
            for idx in rng.permutation(len(members)):
                assignment[(r, members[idx])] = int(relabel[pos % k])
                pos += 1
    return FoldPlan(k, repeats, seed, assignment, strata)


# ----------------------------------------------------------------- metrics


def _check_binary(scores, labels) -> tuple[np.ndarray, np.ndarray]:
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels).astype(np.int64)
    if s.shape != y.shape or s.ndim != 1:
        raise ValueError("scores and labels must be 1-D of equal length")
    n_pos = int(y.sum())
    if n_pos == 0 or n_pos == len(y):
        raise SingleClassInput("both classes must be present")
    return s, y


def auc_roc(scores, labels) -> float:
    """Mann-Whitney estimate: P(score_pos > score_neg) + 0.5 P(tie)."""
    s, y = _check_binary(scores, labels)
    ranks = rankdata(s)  # average ranks; exact half-integers
    n_pos = int(y.sum())
    n_neg = len(y) - n_pos
    u = ranks[y == 1].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def auc_prc(scores, labels) -> float:
    """Average precision: sum over distinct thresholds of dRecall * Precision."""
    s, y = _check_binary(scores, labels)
    order = np.argsort(-s, kind="stable")
    s, y = s[order], y[order]
    tp = np.cumsum(y)
    # keep only the last index of each block of tied scores
    last = np.r_[np.flatnonzero(np.diff(s) != 0), len(s) - 1]
    tp = tp[last]
    called = last + 1
    precision = tp / called
    recall = tp / tp[-1]
    d_recall = np.diff(np.r_[0.0, recall])
    return float(np.sum(d_recall * precision))


def roc_points(scores, labels) -> tuple[np.ndarray, np.ndarray]:
    """(FPR, TPR) of the empirical ROC curve, starting at (0, 0)."""
    s, y = _check_binary(scores, labels)
    order = np.argsort(-s, kind="stable")
    s, y = s[order], y[order]
    last = np.r_[np.flatnonzero(np.diff(s) != 0), len(s) - 1]
    tp = np.cumsum(y)[last]
    fp = (last + 1) - tp
    return np.r_[0.0, fp / fp[-1]], np.r_[0.0, tp / tp[-1]]


def pr_points(scores, labels) -> tuple[np.ndarray, np.ndarray]:
    """(recall, precision) at each distinct threshold, highest score first."""
    s, y = _check_binary(scores, labels)
    order = np.argsort(-s, kind="stable")
    s, y = s[order], y[order]
    last = np.r_[np.flatnonzero(np.diff(s) != 0), len(s) - 1]
    tp = np.cumsum(y)[last]
    return tp / tp[-1], tp / (last + 1)


def _ratio(num: float, den: float) -> float:
    return num / den if den else math.nan


@dataclass(frozen=True)
class ConfusionMetrics:
    tp: int
    tn: int
    fp: int
    fn: int
    threshold: float = math.nan

    @property
    def n(self) -> int:
        return self.tp + self.tn + self.fp + self.fn

    @property
    def acc(self) -> float:
        return _ratio(self.tp + self.tn, self.n)

    @property
    def sens(self) -> float:
        return _ratio(self.tp, self.tp + self.fn)

    @property
    def spec(self) -> float:
        return _ratio(self.tn, self.tn + self.fp)

    @property
    def prec(self) -> float:
        return _ratio(self.tp, self.tp + self.fp)

    @property
    def npv(self) -> float:
        return _ratio(self.tn, self.tn + self.fn)

    @property
    def f1(self) -> float:
        p, r = self.prec, self.sens
        if math.isnan(p) or math.isnan(r):
            return math.nan
        return 0.0 if p + r == 0 else 2 * p * r / (p + r)

    @property
    def kappa(self) -> float:
        n = self.n
        if n == 0:
            return math.nan
        p_o = self.acc
        p_e = ((self.tp + self.fn) * (self.tp + self.fp) + (self.tn + self.fp) * (self.tn + self.fn)) / n**2
        return _ratio(p_o - p_e, 1.0 - p_e)

    def as_dict(self) -> dict[str, float]:
        return {
            "Acc": self.acc,
            "Kappa": self.kappa,
            "Sens": self.sens,
            "Spec": self.spec,
            "Prec": self.prec,
            "NPV": self.npv,
            "F1": self.f1,
        }


def confusion_metrics(scores, labels, threshold: float) -> ConfusionMetrics:
    if not np.isfinite(threshold):
        raise ValueError("threshold must be finite")
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels).astype(np.int64)
    called = s >= threshold
    tp = int(np.sum(called & (y == 1)))
    fp = int(np.sum(called & (y == 0)))
    fn = int(np.sum(~called & (y == 1)))
    tn = int(np.sum(~called & (y == 0)))
    return ConfusionMetrics(tp, tn, fp, fn, float(threshold))


def eer_threshold(scores, labels) -> float:
    """Threshold where sensitivity and specificity are closest.

    Candidates are midpoints between consecutive distinct scores; ties go
    to the higher accuracy, then to the lower threshold. With a single
    distinct score that score is returned.
    """
    s, y = _check_binary(scores, labels)
    uniq = np.unique(s)
    if len(uniq) == 1:
        return float(uniq[0])
    cands = 0.5 * (uniq[:-1] + uniq[1:])
    # guard against a midpoint rounding onto the upper score
    cands = np.where(cands >= uniq[1:], uniq[:-1], cands)
    pos = np.sort(s[y == 1])
    neg = np.sort(s[y == 0])
    # integer counts keep equal gaps exactly equal for the tie-breaks
    tp = len(pos) - np.searchsorted(pos, cands, side="left")
    tn = np.searchsorted(neg, cands, side="left")
    gap = np.abs(tp * len(neg) - tn * len(pos))
    correct = tp + tn
    best = min(range(len(cands)), key=lambda i: (gap[i], -correct[i], cands[i]))
    return float(cands[best])


# ----------------------------------------------------------------- runs


@dataclass
class RunResult:
    repeat: int
    predictions: list[Prediction]
    auc_roc: float
    auc_prc: float
    folds: dict[str, int] = field(default_factory=dict)  # subject -> fold

    @property
    def scores(self) -> np.ndarray:
        return np.array([p.score for p in self.predictions])

    @property
    def labels(self) -> np.ndarray:
        return np.array([p.label for p in self.predictions])


def make_run(repeat: int, predictions, folds=None) -> RunResult:
    preds = list(predictions)
    s = [p.score for p in preds]
    y = [p.label for p in preds]
    return RunResult(repeat, preds, auc_roc(s, y), auc_prc(s, y), dict(folds or {}))


@dataclass
class MetricReport:
    n_runs: int
    auc_roc: float
    auc_roc_ci: float | None
    auc_prc: float
    auc_prc_ci: float | None
    central_run: int
    threshold: float
    confusion: ConfusionMetrics
    confidence: float = 0.90

    def to_dict(self) -> dict:
        return {
            "n_runs": self.n_runs,
            "confidence": self.confidence,
            "auc_roc": {"mean": self.auc_roc, "ci_half_width": self.auc_roc_ci},
            "auc_prc": {"mean": self.auc_prc, "ci_half_width": self.auc_prc_ci},
            "central_run": self.central_run,
            "threshold": self.threshold,
            "confusion": {"TP": self.confusion.tp, "TN": self.confusion.tn, "FP": self.confusion.fp, "FN": self.confusion.fn},
            "metrics": {k: (None if math.isnan(v) else v) for k, v in self.confusion.as_dict().items()},
        }


def ci_z(confidence: float) -> float:
    """Two-sided normal quantile rounded to three decimals (1.645 at 90%)."""
    return round(NormalDist().inv_cdf(0.5 + confidence / 2.0), 3)


def ci_half_width(values, confidence: float = 0.90) -> float | None:
    v = np.asarray(values, dtype=np.float64)
    if len(v) < 2:
        return None
    return float(ci_z(confidence) * v.std(ddof=1) / math.sqrt(len(v)))


def aggregate_runs(runs: list[RunResult], confidence: float = 0.90) -> MetricReport:
    if not runs:
        raise ValueError("no runs to aggregate")
    rocs = np.array([r.auc_roc for r in runs])
    prcs = np.array([r.auc_prc for r in runs])
    mean_roc = float(rocs.mean())
    central = int(np.argmin(np.abs(rocs - mean_roc)))
    run = runs[central]
    t = eer_threshold(run.scores, run.labels)
    cm = confusion_metrics(run.scores, run.labels, t)
    return MetricReport(
        n_runs=len(runs),
        auc_roc=mean_roc,
        auc_roc_ci=ci_half_width(rocs, confidence),
        auc_prc=float(prcs.mean()),
        auc_prc_ci=ci_half_width(prcs, confidence),
        central_run=run.repeat,
        threshold=t,
        confusion=cm,
        confidence=confidence,
    )


# ----------------------------------------------------------------- cross-validation


@dataclass(frozen=True)
class ModelSpec:
    """Which forest to fit per fold and how.

    For RF, every ``meta_`` column of the dataset is split on at every node
    unless ``always_split`` is given explicitly. ``tune_budget=0`` skips
    tuning and uses ``rf`` as is.
    """

    kind: str = "rf"
    rf: RfConfig = RfConfig()
    fcf: FcfConfig = FcfConfig()
    tune_budget: int = 30
    tune_warmup: int = 19
    always_split: tuple[str, ...] | None = None

    def __post_init__(self):
        if self.kind not in ("rf", "fcf"):
            raise ValueError(f"model kind must be 'rf' or 'fcf', got {self.kind!r}")


def _impute_fold(train: np.ndarray, test: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Fill NaN with training-fold medians (0 where a column is all NaN)."""
    if np.isfinite(train).all() and np.isfinite(test).all():
        return train, test
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)  # all-NaN columns
        med = np.nanmedian(train, axis=0)
    med = np.where(np.isfinite(med), med, 0.0)
    return np.where(np.isfinite(train), train, med), np.where(np.isfinite(test), test, med)


def _fit_score(spec: ModelSpec, X_train, y_train, X_test, names, seed: int) -> np.ndarray:
    if spec.kind == "fcf":
        model = fit_fair_cut_forest(X_train, names, replace(spec.fcf, seed=seed))
        return fcf_score(model, X_test)
    always = spec.always_split
    if always is None:
        always = tuple(n for n in names if n.startswith("meta_"))
    base = replace(spec.rf, always_split=tuple(always), seed=seed)
    if spec.tune_budget > 0:
        tuned = tune_random_forest(
            X_train, y_train, names, base, spec.tune_budget, min(spec.tune_warmup, spec.tune_budget), seed=seed
        )
        base = tuned.config
    model = fit_random_forest(X_train, y_train, names, base)
    return rf_predict(model, X_test)


def _row_prediction(row_id: int, meta: dict, score: float, label: int) -> Prediction:
    return Prediction(
        row_id=row_id,
        subject=meta["subject"],
        score=float(score),
        label=int(label),
        side=meta.get("side"),
        level=meta.get("level"),
        channel=meta.get("channel"),
        window=meta.get("window"),
    )


def run_cv(ds, plan: FoldPlan, spec: ModelSpec, fusion=None, *, progress=None) -> list[RunResult]:
    """Score every row once per repeat from models fitted on the other folds.

    Returns one :class:`RunResult` per repeat with pooled (and, if
    ``fusion`` names a scope, fused) predictions. Seeds are derived from
    ``(plan.seed, repeat, fold)`` so results do not depend on execution
    order or thread count.
    """
    subjects = ds.subjects
    missing = sorted(set(subjects) - set(plan.strata))
    if missing:
        raise ValueError(f"fold plan lacks subjects {missing[:5]}")
    X = np.asarray(ds.matrix, dtype=np.float64)
    y = np.asarray(ds.labels).astype(np.int64)
    runs = []
    for r in range(plan.repeats):
        fold_of_row = np.array([plan.fold_of(r, s) for s in subjects])
        scores = np.full(len(y), np.nan)
        for f in range(plan.k):
            test = fold_of_row == f
            if not test.any():
                continue
            X_train, X_test = _impute_fold(X[~test], X[test])
            seed = derive_seed(plan.seed, r, f)
            scores[test] = _fit_score(spec, X_train, y[~test], X_test, ds.column_names, seed)
        preds = [_row_prediction(i, m, scores[i], y[i]) for i, m in enumerate(ds.row_meta)]
        if fusion is not None:
            preds = fuse(preds, fusion)
        folds = {s: plan.fold_of(r, s) for s in sorted(set(subjects))}
        runs.append(make_run(r, preds, folds))
        if progress is not None:
            progress(r, runs[-1])
        logger.info("repeat %d: AUC ROC %.4f", r, runs[-1].auc_roc)
    return runs


# ----------------------------------------------------------------- run files

RUN_COLUMNS = ("repeat", "fold", "row_id", "subject", "side", "level", "channel", "window", "fused_scope", "score", "label")


def write_runs_csv(path: str | Path, runs: list[RunResult]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(RUN_COLUMNS)
        for run in runs:
            for p in run.predictions:
                cells = [run.repeat, run.folds.get(p.subject, ""), p.row_id, p.subject]
                cells += ["" if v is None else v for v in (p.side, p.level, p.channel, p.window, p.fused_scope)]
                cells += [repr(float(p.score)), p.label]
                w.writerow(cells)


def read_runs_csv(path: str | Path) -> list[RunResult]:
    by_repeat: dict[int, list[Prediction]] = {}
    folds: dict[int, dict[str, int]] = {}
    with open(path, newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            r = int(row["repeat"])
            opt = {k: (row[k] or None) for k in ("side", "level", "fused_scope")}
            p = Prediction(
                row_id=int(row["row_id"]),
                subject=row["subject"],
                score=float(row["score"]),
                label=int(row["label"]),
                channel=int(row["channel"]) if row["channel"] else None,
                window=int(row["window"]) if row["window"] else None,
                **opt,
            )
            by_repeat.setdefault(r, []).append(p)
            if row["fold"] != "":
                folds.setdefault(r, {})[p.subject] = int(row["fold"])
    return [make_run(r, by_repeat[r], folds.get(r)) for r in sorted(by_repeat)]
