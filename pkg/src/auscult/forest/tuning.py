"""Out-of-bag tuning of ``mtry`` and ``min_node_size``.

The search works in a unit square: ``mtry = round(p ** u)`` over the
ordinary (non always-split) columns and
``min_node_size = ceil((0.2 n) ** v)``. A warm-up phase evaluates random
points; the remaining budget is spent on expected improvement under a
Gaussian-process surrogate (squared-exponential kernel) fitted to the
standardised OOB log-losses, maximised over a grid of distinct integer
configurations. Every configuration is fitted with the same seed and
evaluated once; repeats hit a cache.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace

import numpy as np
from scipy import linalg, stats

from .rf import RfConfig, fit_random_forest, oob_log_loss

logger = logging.getLogger(__name__)

GRID_SIZE = 41
LENGTH_SCALES = (0.1, 0.2, 0.4, 0.8)


@dataclass
class TuningResult:
    config: RfConfig
    history: list[tuple[int, int, float]]  # (mtry, min_node_size, oob log-loss) in evaluation order

    @property
    def best_loss(self) -> float:
        return min(h[2] for h in self.history)


class _Space:
    def __init__(self, n_free: int, n_rows: int):
        self.n_free = max(1, n_free)
        self.node_top = max(1.0, 0.2 * n_rows)

    def decode(self, u: float, v: float) -> tuple[int, int]:
        mtry = int(np.clip(round(self.n_free**u), 1, self.n_free))
        node = int(max(1, np.ceil(self.node_top**v - 1e-9)))
        return mtry, node

    def encode(self, mtry: int, node: int) -> tuple[float, float]:
        u = np.log(mtry) / np.log(self.n_free) if self.n_free > 1 else 0.0
        v = np.log(node) / np.log(self.node_top) if self.node_top > 1 else 0.0
        return float(u), float(v)

    def grid(self) -> list[tuple[int, int]]:
        axis = np.linspace(0.0, 1.0, GRID_SIZE)
        seen: dict[tuple[int, int], None] = {}
        for u in axis:
            for v in axis:
                seen.setdefault(self.decode(u, v), None)
        return list(seen)


def _gp_posterior(train_x, train_y, query_x, length):
    def kern(a, b):
        d2 = ((a[:, None, :] - b[None, :, :]) ** 2).sum(axis=2)
        return np.exp(-0.5 * d2 / length**2)

    K = kern(train_x, train_x) + 1e-6 * np.eye(len(train_x))
    chol = linalg.cho_factor(K, lower=True)
    alpha = linalg.cho_solve(chol, train_y)
    Ks = kern(query_x, train_x)
    mean = Ks @ alpha
    v = linalg.cho_solve(chol, Ks.T)
    var = np.maximum(1.0 - np.einsum("ij,ji->i", Ks, v), 1e-12)
    log_ml = -0.5 * train_y @ alpha - np.log(np.diag(chol[0])).sum()
    return mean, np.sqrt(var), log_ml


def expected_improvement(mean, sd, best):
    """EI for minimisation."""
    z = (best - mean) / sd
    return (best - mean) * stats.norm.cdf(z) + sd * stats.norm.pdf(z)


def _propose(space: _Space, history, rng) -> tuple[int, int] | None:
    evaluated = {(m, n) for m, n, _ in history}
    candidates = [c for c in space.grid() if c not in evaluated]
    if not candidates:
        return None
    x = np.array([space.encode(m, n) for m, n, _ in history])
    y = np.array([h[2] for h in history])
    scale = y.std() if y.std() > 0 else 1.0
    y_std = (y - y.mean()) / scale
    q = np.array([space.encode(*c) for c in candidates])
    fits = [_gp_posterior(x, y_std, q, ell) for ell in LENGTH_SCALES]
    mean, sd, _ = max(fits, key=lambda f: f[2])
    ei = expected_improvement(mean, sd, y_std.min())
    return candidates[int(np.argmax(ei))]


def tune_random_forest(
    X,
    y,
    column_names,
    base: RfConfig = RfConfig(),
    budget: int = 30,
    warmup: int = 19,
    *,
    seed: int = 0,
    method: str = "bo",
    candidates=None,
) -> TuningResult:
    """Minimise OOB log-loss over (mtry, min_node_size).

    ``candidates`` replaces the random warm-up draws with explicit
    (mtry, min_node_size) pairs. ``method="random"`` spends the whole budget
    on random draws.
    """
    if not budget >= warmup >= 1:
        raise ValueError("need budget >= warmup >= 1")
    if method not in ("bo", "random"):
        raise ValueError("method must be 'bo' or 'random'")
    X = np.asarray(X, dtype=np.float64)
    n, p = X.shape
    space = _Space(p - len(base.always_split), n)
    rng = np.random.default_rng(seed)
    cache: dict[tuple[int, int], float] = {}
    history: list[tuple[int, int, float]] = []

    def evaluate(cfg_pair):
        if cfg_pair not in cache:
            mtry, node = cfg_pair
            model = fit_random_forest(X, y, column_names, replace(base, mtry=mtry, min_node_size=node))
            cache[cfg_pair] = oob_log_loss(model, y)
            history.append((mtry, node, cache[cfg_pair]))
            logger.debug("tune mtry=%d min_node_size=%d loss=%.5f", mtry, node, cache[cfg_pair])
        return cache[cfg_pair]

    if candidates is not None:
        warm = [tuple(int(v) for v in c) for c in candidates][:budget]
    else:
        warm = [space.decode(*rng.random(2)) for _ in range(warmup)]
    for pair in warm:
        evaluate(pair)
    attempts = len(warm)
    while attempts < budget:
        attempts += 1
        if method == "random":
            pair = space.decode(*rng.random(2))
        else:
            pair = _propose(space, history, rng)
            if pair is None:
                break
        evaluate(pair)

    mtry, node, _ = min(history, key=lambda h: h[2])
    return TuningResult(replace(base, mtry=mtry, min_node_size=node), history)


def rf_tune(train, budget: int = 30, warmup: int = 19, base: RfConfig = RfConfig(), **kwargs) -> RfConfig:
    """Tuned configuration for a training :class:`~auscult.datasets.Dataset`."""
    result = tune_random_forest(train.matrix, train.labels, train.column_names, base, budget, warmup, **kwargs)
    return result.config
