"""Random forest classifier with probability leaves.

CART trees are grown on bootstrap samples with Gini impurity. At each node
the candidate columns are ``mtry`` columns drawn at random from the ordinary
columns plus every "always split" column, which are evaluated at every node
regardless of the draw.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numba import njit, prange

from ..errors import SingleClassTrainingSet
from . import _rng
from .model import TrainedModel, check_columns


@dataclass(frozen=True)
class RfConfig:
    num_trees: int = 500
    mtry: int | None = None  # None -> floor(sqrt(ordinary columns))
    min_node_size: int = 1
    always_split: tuple[str, ...] = field(default_factory=tuple)
    seed: int = 0

    def resolved_mtry(self, n_columns: int) -> int:
        free = n_columns - len(self.always_split)
        if self.mtry is None:
            return max(1, int(np.sqrt(max(free, 1))))
        return self.mtry

    def validate(self, n_columns: int) -> None:
        mtry = self.resolved_mtry(n_columns)
        if not 1 <= mtry <= n_columns:
            raise ValueError(f"mtry must lie in [1, {n_columns}], got {mtry}")
        if self.min_node_size < 1:
            raise ValueError("min_node_size must be >= 1")
        if self.num_trees < 1:
            raise ValueError("num_trees must be >= 1")


@njit(cache=True)
def _grow_tree(XT, y, sample, mtry, min_node_size, free_cols, always_cols, state,
               feature, threshold, left, right, value, n_cand_always):
    # XT is the transposed design matrix: column gathers stay contiguous
    m_total = len(sample)
    stack_node = np.empty(2 * m_total + 2, dtype=np.int64)
    stack_lo = np.empty(2 * m_total + 2, dtype=np.int64)
    stack_hi = np.empty(2 * m_total + 2, dtype=np.int64)
    stack_node[0] = 0
    stack_lo[0] = 0
    stack_hi[0] = m_total
    top = 1
    n_nodes = 1

    perm = free_cols.copy()
    n_free_draw = min(mtry, len(free_cols))
    n_cand = n_free_draw + len(always_cols)
    cand = np.empty(n_cand, dtype=np.int64)
    vals = np.empty(m_total)
    labs = np.empty(m_total, dtype=np.int64)
    is_always = np.zeros(XT.shape[0], dtype=np.bool_)
    for a in always_cols:
        is_always[a] = True

    while top > 0:
        top -= 1
        node = stack_node[top]
        lo = stack_lo[top]
        hi = stack_hi[top]
        m = hi - lo
        pos = 0
        for i in range(lo, hi):
            pos += y[sample[i]]
        value[node] = pos / m
        feature[node] = -1
        if m <= min_node_size or pos == 0 or pos == m:
            continue

        _rng.shuffle_prefix(perm, n_free_draw, state)
        for i in range(n_free_draw):
            cand[i] = perm[i]
        for i in range(len(always_cols)):
            cand[n_free_draw + i] = always_cols[i]

        neg = m - pos
        parent = (pos * pos + neg * neg) / m
        best = parent
        best_f = -1
        best_t = 0.0
        for c in range(n_cand):
            f = cand[c]
            col = XT[f]
            for i in range(m):
                r = sample[lo + i]
                vals[i] = col[r]
                labs[i] = y[r]
            _rng.sort_pairs(vals, labs, m)
            if vals[m - 1] <= vals[0]:
                continue
            lp = 0
            ln = 0
            for i in range(m - 1):
                if labs[i] == 1:
                    lp += 1
                else:
                    ln += 1
                v0 = vals[i]
                v1 = vals[i + 1]
                if v1 <= v0:
                    continue
                nl = i + 1
                nr = m - nl
                rp = pos - lp
                rn = neg - ln
                score = (lp * lp + ln * ln) / nl + (rp * rp + rn * rn) / nr
                if score > best + 1e-12:
                    best = score
                    best_f = f
                    best_t = 0.5 * (v0 + v1)
                    if best_t >= v1:  # midpoint rounding between adjacent floats
                        best_t = v0
        if best_f < 0:
            continue

        cnt = 0
        for c in range(n_cand):
            if is_always[cand[c]]:
                cnt += 1
        n_cand_always[node] = cnt

        # partition sample[lo:hi] by the chosen split
        i = lo
        j = hi - 1
        while i <= j:
            if XT[best_f, sample[i]] <= best_t:
                i += 1
            else:
                tmp = sample[i]
                sample[i] = sample[j]
                sample[j] = tmp
                j -= 1
        feature[node] = best_f
        threshold[node] = best_t
        left[node] = n_nodes
        right[node] = n_nodes + 1
        stack_node[top] = n_nodes
        stack_lo[top] = lo
        stack_hi[top] = i
        stack_node[top + 1] = n_nodes + 1
        stack_lo[top + 1] = i
        stack_hi[top + 1] = hi
        top += 2
        n_nodes += 2
    return n_nodes


@njit(parallel=True, cache=True)
def _fit_forest(XT, y, n_trees, mtry, min_node_size, free_cols, always_cols, seed,
                feature, threshold, left, right, value, n_cand_always, inbag, node_count):
    n = XT.shape[1]
    for t in prange(n_trees):
        state = _rng.tree_state(seed, t)
        sample = np.empty(n, dtype=np.int64)
        for i in range(n):
            r = _rng.randint(state, n)
            sample[i] = r
            inbag[t, r] += 1
        node_count[t] = _grow_tree(XT, y, sample, mtry, min_node_size, free_cols, always_cols, state,
                                   feature[t], threshold[t], left[t], right[t], value[t], n_cand_always[t])


@njit(parallel=True, cache=True)
def _tree_outputs(X, feature, threshold, left, right, value):
    n = X.shape[0]
    n_trees = feature.shape[0]
    out = np.empty((n, n_trees))
    for i in prange(n):
        for t in range(n_trees):
            node = 0
            while feature[t, node] >= 0:
                if X[i, feature[t, node]] <= threshold[t, node]:
                    node = left[t, node]
                else:
                    node = right[t, node]
            out[i, t] = value[t, node]
    return out


def fit_random_forest(X, y, column_names, cfg: RfConfig) -> TrainedModel:
    X = np.ascontiguousarray(X, dtype=np.float64)
    y = np.asarray(y).astype(np.int64)
    n, p = X.shape
    if len(column_names) != p:
        raise ValueError("column_names does not match X")
    if set(np.unique(y)) - {0, 1}:
        raise ValueError("labels must be 0/1")
    if min(int(y.sum()), int(n - y.sum())) < 2:
        raise SingleClassTrainingSet(f"need >= 2 rows per class, got {int(y.sum())} positive of {n}")
    cfg.validate(p)
    names = list(column_names)
    missing = [c for c in cfg.always_split if c not in names]
    if missing:
        raise ValueError(f"always_split columns not in data: {missing}")
    always = np.array([names.index(c) for c in cfg.always_split], dtype=np.int64)
    free = np.array([j for j in range(p) if j not in set(always.tolist())], dtype=np.int64)
    mtry = cfg.resolved_mtry(p)

    T = cfg.num_trees
    cap = 2 * n + 1
    feature = np.full((T, cap), -1, dtype=np.int64)
    threshold = np.zeros((T, cap))
    left = np.full((T, cap), -1, dtype=np.int64)
    right = np.full((T, cap), -1, dtype=np.int64)
    value = np.zeros((T, cap))
    n_cand_always = np.full((T, cap), -1, dtype=np.int64)
    inbag = np.zeros((T, n), dtype=np.int32)
    node_count = np.zeros(T, dtype=np.int64)
    _fit_forest(np.ascontiguousarray(X.T), y, T, mtry, cfg.min_node_size, free, always, np.uint64(cfg.seed),
                feature, threshold, left, right, value, n_cand_always, inbag, node_count)
    width = int(node_count.max())
    trees = {
        "feature": feature[:, :width].copy(),
        "threshold": threshold[:, :width].copy(),
        "left": left[:, :width].copy(),
        "right": right[:, :width].copy(),
        "value": value[:, :width].copy(),
        "node_count": node_count,
    }
    model = TrainedModel("RF", trees, cfg, names, {"n_train": n})
    model.diagnostics["always_candidates"] = n_cand_always[:, :width].copy()
    outputs = _tree_outputs(X, *(trees[k] for k in ("feature", "threshold", "left", "right", "value")))
    model.diagnostics["oob_scores"] = oob_average(outputs, inbag == 0)
    return model


def oob_average(outputs: np.ndarray, out_of_bag: np.ndarray) -> np.ndarray:
    """Mean tree output per row over the trees that did not see it (NaN if none)."""
    mask = out_of_bag.T
    counts = mask.sum(axis=1)
    sums = np.where(mask, outputs, 0.0).sum(axis=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(counts > 0, sums / np.maximum(counts, 1), np.nan)


def rf_fit(ds, cfg: RfConfig) -> TrainedModel:
    """Fit on a :class:`~auscult.datasets.Dataset`."""
    return fit_random_forest(ds.matrix, ds.labels, ds.column_names, cfg)


def rf_predict(model: TrainedModel, rows, column_names=None) -> np.ndarray:
    """Fraction of pathological votes (mean leaf class fraction) per row."""
    X = check_columns(model, rows, column_names)
    t = model.trees
    outputs = _tree_outputs(X, t["feature"], t["threshold"], t["left"], t["right"], t["value"])
    return outputs.mean(axis=1)


def log_loss(y, p, eps: float = 1e-15) -> float:
    p = np.clip(np.asarray(p, dtype=np.float64), eps, 1 - eps)
    y = np.asarray(y, dtype=np.float64)
    return float(-np.mean(y * np.log(p) + (1 - y) * np.log(1 - p)))


def oob_log_loss(model: TrainedModel, y) -> float:
    """Out-of-bag log-loss over rows that have at least one OOB tree."""
    scores = model.diagnostics["oob_scores"]
    ok = np.isfinite(scores)
    return log_loss(np.asarray(y)[ok], scores[ok])
