"""Fair-cut forest: an isolation forest with projection splits.

Each node draws ``ndim`` non-constant columns, gives them standard-normal
coefficients scaled by the inverse of each column's spread in the node, and
projects the node's rows onto that direction. The split threshold is, with
probability ``pick_pooled_gain``, the midpoint that maximises the pooled
standard deviation gain

    g(t) = sd(all) - (n_L * sd(left) + n_R * sd(right)) / n

and otherwise a uniform draw between the smallest and largest projection.
Scores follow the usual isolation-forest normalisation
``2 ** (-E[h(x)] / c(psi))``; higher means more anomalous.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numba import njit, prange

from . import _rng
from .model import TrainedModel, check_columns


@dataclass(frozen=True)
class FcfConfig:
    num_trees: int = 500
    ndim: int = 3
    pick_pooled_gain: float = 1.0
    sample_size: int | None = None  # None -> all rows
    seed: int = 0

    def validate(self) -> None:
        if self.ndim < 1:
            raise ValueError("ndim must be >= 1")
        if not 0.0 <= self.pick_pooled_gain <= 1.0:
            raise ValueError("pick_pooled_gain must lie in [0, 1]")
        if self.num_trees < 1:
            raise ValueError("num_trees must be >= 1")


def harmonic(n: int) -> float:
    return float(sum(1.0 / k for k in range(1, n + 1)))


def average_path_length(m: int) -> float:
    """c(m) = 2 H(m-1) - 2 (m-1) / m, with c(0) = c(1) = 0."""
    if m <= 1:
        return 0.0
    return 2.0 * harmonic(m - 1) - 2.0 * (m - 1) / m


def depth_limit(sample_size: int) -> int:
    return 2 * max(1, math.ceil(math.log2(sample_size)))


@njit(cache=True)
def best_pooled_gain_split(v):
    """Threshold maximising pooled sd gain over sorted values ``v``.

    Returns ``(threshold, gain)``; threshold is NaN when all values are equal.
    """
    m = len(v)
    mean = 0.0
    for i in range(m):
        mean += v[i]
    mean /= m
    s1_tot = 0.0
    s2_tot = 0.0
    for i in range(m):
        d = v[i] - mean
        s1_tot += d
        s2_tot += d * d
    sd_all = np.sqrt(max(s2_tot / m - (s1_tot / m) ** 2, 0.0))
    best_gain = -np.inf
    best_t = np.nan
    s1 = 0.0
    s2 = 0.0
    for k in range(1, m):
        d = v[k - 1] - mean
        s1 += d
        s2 += d * d
        if v[k] <= v[k - 1]:
            continue
        nl = k
        nr = m - k
        sd_l = np.sqrt(max(s2 / nl - (s1 / nl) ** 2, 0.0))
        r1 = s1_tot - s1
        r2 = s2_tot - s2
        sd_r = np.sqrt(max(r2 / nr - (r1 / nr) ** 2, 0.0))
        gain = sd_all - (nl * sd_l + nr * sd_r) / m
        if gain > best_gain:
            best_gain = gain
            t = 0.5 * (v[k - 1] + v[k])
            best_t = t if t < v[k] else v[k - 1]
    return best_t, best_gain


@njit(cache=True)
def _project(X, row, cols, coefs, centers, k):
    acc = 0.0
    for j in range(k):
        acc += coefs[j] * (X[row, cols[j]] - centers[j])
    return acc


@njit(cache=True)
def _grow_tree(X, sample, ndim, pick_gain, max_depth, state,
               cols, coefs, centers, threshold, left, right, leaf_size, n_dims):
    m_total = len(sample)
    p = X.shape[1]
    cap = 2 * m_total + 2
    stack_node = np.empty(cap, dtype=np.int64)
    stack_lo = np.empty(cap, dtype=np.int64)
    stack_hi = np.empty(cap, dtype=np.int64)
    stack_depth = np.empty(cap, dtype=np.int64)
    stack_node[0] = 0
    stack_lo[0] = 0
    stack_hi[0] = m_total
    stack_depth[0] = 0
    top = 1
    n_nodes = 1
    perm = np.arange(p)
    proj = np.empty(m_total)
    sorted_proj = np.empty(m_total)

    while top > 0:
        top -= 1
        node = stack_node[top]
        lo = stack_lo[top]
        hi = stack_hi[top]
        depth = stack_depth[top]
        m = hi - lo
        leaf_size[node] = m
        left[node] = -1
        if m <= 1 or depth >= max_depth:
            continue

        # draw up to ndim columns that vary within the node
        k = 0
        i = 0
        while i < p and k < ndim:
            j = i + _rng.randint(state, p - i)
            tmp = perm[i]
            perm[i] = perm[j]
            perm[j] = tmp
            c = perm[i]
            i += 1
            mu = 0.0
            for r in range(lo, hi):
                mu += X[sample[r], c]
            mu /= m
            ss = 0.0
            for r in range(lo, hi):
                d = X[sample[r], c] - mu
                ss += d * d
            sd = np.sqrt(ss / m)
            if sd <= 1e-12 * (1.0 + abs(mu)):
                continue
            cols[node, k] = c
            centers[node, k] = mu
            coefs[node, k] = _rng.normal(state) / sd
            k += 1
        if k == 0:
            continue
        n_dims[node] = k

        for r in range(m):
            proj[r] = _project(X, sample[lo + r], cols[node], coefs[node], centers[node], k)
        vmin = proj[0]
        vmax = proj[0]
        for r in range(m):
            vmin = min(vmin, proj[r])
            vmax = max(vmax, proj[r])
        if vmax <= vmin:
            continue

        if pick_gain >= 1.0 or _rng.uniform(state) < pick_gain:
            sorted_proj[:m] = np.sort(proj[:m])
            t, _ = best_pooled_gain_split(sorted_proj[:m])
        else:
            t = vmin + _rng.uniform(state) * (vmax - vmin)
            if t >= vmax:
                t = vmin

        # partition rows and their projections together
        a = 0
        b = m - 1
        while a <= b:
            if proj[a] <= t:
                a += 1
            else:
                tmp = sample[lo + a]
                sample[lo + a] = sample[lo + b]
                sample[lo + b] = tmp
                tp = proj[a]
                proj[a] = proj[b]
                proj[b] = tp
                b -= 1
        threshold[node] = t
        left[node] = n_nodes
        right[node] = n_nodes + 1
        stack_node[top] = n_nodes
        stack_lo[top] = lo
        stack_hi[top] = lo + a
        stack_depth[top] = depth + 1
        stack_node[top + 1] = n_nodes + 1
        stack_lo[top + 1] = lo + a
        stack_hi[top + 1] = hi
        stack_depth[top + 1] = depth + 1
        top += 2
        n_nodes += 2
    return n_nodes


@njit(parallel=True, cache=True)
def _fit_forest(X, n_trees, sample_size, ndim, pick_gain, max_depth, seed,
                cols, coefs, centers, threshold, left, right, leaf_size, n_dims, node_count):
    n = X.shape[0]
    for t in prange(n_trees):
        state = _rng.tree_state(seed, t)
        rows = np.arange(n)
        if sample_size < n:
            _rng.shuffle_prefix(rows, sample_size, state)
        sample = rows[:sample_size].copy()
        node_count[t] = _grow_tree(X, sample, ndim, pick_gain, max_depth, state,
                                   cols[t], coefs[t], centers[t], threshold[t], left[t], right[t], leaf_size[t], n_dims[t])


@njit(parallel=True, cache=True)
def _path_lengths(X, cols, coefs, centers, threshold, left, right, leaf_size, n_dims, c_table):
    n = X.shape[0]
    n_trees = cols.shape[0]
    out = np.empty((n, n_trees))
    for i in prange(n):
        for t in range(n_trees):
            node = 0
            depth = 0
            while left[t, node] >= 0:
                v = _project(X, i, cols[t, node], coefs[t, node], centers[t, node], n_dims[t, node])
                node = left[t, node] if v <= threshold[t, node] else right[t, node]
                depth += 1
            out[i, t] = depth + c_table[leaf_size[t, node]]
    return out


def fit_fair_cut_forest(X, column_names, cfg: FcfConfig) -> TrainedModel:
    cfg.validate()
    X = np.ascontiguousarray(X, dtype=np.float64)
    n, p = X.shape
    if n < 2:
        raise ValueError("need at least 2 rows")
    if len(column_names) != p:
        raise ValueError("column_names does not match X")
    if not np.isfinite(X).all():
        raise ValueError("rows contain NaN/Inf; impute first")
    psi = n if cfg.sample_size is None else min(int(cfg.sample_size), n)
    if psi < 2:
        raise ValueError("sample_size must be >= 2")
    ndim = min(cfg.ndim, p)
    T = cfg.num_trees
    cap = 2 * psi + 1
    cols = np.zeros((T, cap, ndim), dtype=np.int64)
    coefs = np.zeros((T, cap, ndim))
    centers = np.zeros((T, cap, ndim))
    threshold = np.zeros((T, cap))
    left = np.full((T, cap), -1, dtype=np.int64)
    right = np.full((T, cap), -1, dtype=np.int64)
    leaf_size = np.zeros((T, cap), dtype=np.int64)
    n_dims = np.zeros((T, cap), dtype=np.int64)
    node_count = np.zeros(T, dtype=np.int64)
    _fit_forest(X, T, psi, ndim, float(cfg.pick_pooled_gain), depth_limit(psi), np.uint64(cfg.seed),
                cols, coefs, centers, threshold, left, right, leaf_size, n_dims, node_count)
    width = int(node_count.max())
    trees = {
        "cols": cols[:, :width].copy(),
        "coefs": coefs[:, :width].copy(),
        "centers": centers[:, :width].copy(),
        "threshold": threshold[:, :width].copy(),
        "left": left[:, :width].copy(),
        "right": right[:, :width].copy(),
        "leaf_size": leaf_size[:, :width].copy(),
        "n_dims": n_dims[:, :width].copy(),
        "node_count": node_count,
    }
    return TrainedModel("FCF", trees, cfg, list(column_names), {"n_train": n, "sample_size": psi})


def fcf_fit(ds, cfg: FcfConfig) -> TrainedModel:
    """Fit on the rows of a Dataset; labels are never looked at."""
    return fit_fair_cut_forest(ds.matrix, ds.column_names, cfg)


def path_lengths(model: TrainedModel, rows, column_names=None) -> np.ndarray:
    """Per-row, per-tree path length including the leaf-size credit c(size)."""
    X = check_columns(model, rows, column_names)
    t = model.trees
    psi = int(model.info["sample_size"])
    c_table = np.array([average_path_length(m) for m in range(psi + 1)])
    return _path_lengths(X, t["cols"], t["coefs"], t["centers"], t["threshold"], t["left"], t["right"],
                         t["leaf_size"], t["n_dims"], c_table)


def fcf_score(model: TrainedModel, rows, column_names=None) -> np.ndarray:
    """Anomaly score 2 ** (-E[h] / c(psi)) in (0, 1); higher is more anomalous."""
    h = path_lengths(model, rows, column_names).mean(axis=1)
    return 2.0 ** (-h / average_path_length(int(model.info["sample_size"])))
