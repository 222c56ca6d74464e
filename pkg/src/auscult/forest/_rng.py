"""Counter-based random streams usable inside numba kernels.

Each tree owns a one-word splitmix64 state derived from ``(seed, tree)``,
so forests are identical whatever the number of threads building them.
"""

import numba
import numpy as np
from numba import njit

# the bundled TBB is too old for numba; prefer OpenMP / workqueue quietly
numba.config.THREADING_LAYER_PRIORITY = ["omp", "workqueue", "tbb"]

GOLDEN = np.uint64(0x9E3779B97F4A7C15)
MIX1 = np.uint64(0xBF58476D1CE4E5B9)
MIX2 = np.uint64(0x94D049BB133111EB)


@njit(cache=True)
def _mix(z):
    z = (z ^ (z >> np.uint64(30))) * MIX1
    z = (z ^ (z >> np.uint64(27))) * MIX2
    return z ^ (z >> np.uint64(31))


@njit(cache=True)
def tree_state(seed, tree):
    s = _mix(np.uint64(seed) * GOLDEN + np.uint64(0x632BE59BD9B4E019))
    s = _mix(s ^ (np.uint64(tree) * GOLDEN + np.uint64(1)))
    st = np.empty(1, dtype=np.uint64)
    st[0] = s
    return st


@njit(cache=True)
def next_u64(state):
    state[0] = state[0] + GOLDEN
    return _mix(state[0])


@njit(cache=True)
def uniform(state):
    return (next_u64(state) >> np.uint64(11)) * (1.0 / 9007199254740992.0)


@njit(cache=True)
def randint(state, n):
    """Uniform integer in [0, n)."""
    return min(int(uniform(state) * n), n - 1)


@njit(cache=True)
def normal(state):
    u1 = uniform(state)
    while u1 <= 0.0:
        u1 = uniform(state)
    u2 = uniform(state)
    return np.sqrt(-2.0 * np.log(u1)) * np.cos(2.0 * np.pi * u2)


@njit(cache=True)
def sort_pairs(keys, vals, n):
    """Sort ``keys[:n]`` ascending in place, permuting ``vals`` alongside.

    Non-allocating quicksort with an insertion-sort cutoff; deterministic.
    """
    stack = np.empty(128, dtype=np.int64)
    top = 0
    stack[0] = 0
    stack[1] = n - 1
    top = 2
    while top > 0:
        top -= 2
        lo = stack[top]
        hi = stack[top + 1]
        while hi - lo > 16:
            mid = (lo + hi) >> 1
            # median of three into keys[mid]
            if keys[mid] < keys[lo]:
                keys[mid], keys[lo] = keys[lo], keys[mid]
                vals[mid], vals[lo] = vals[lo], vals[mid]
            if keys[hi] < keys[lo]:
                keys[hi], keys[lo] = keys[lo], keys[hi]
                vals[hi], vals[lo] = vals[lo], vals[hi]
            if keys[hi] < keys[mid]:
                keys[hi], keys[mid] = keys[mid], keys[hi]
                vals[hi], vals[mid] = vals[mid], vals[hi]
            pivot = keys[mid]
            i = lo
            j = hi
            while i <= j:
                while keys[i] < pivot:
                    i += 1
                while keys[j] > pivot:
                    j -= 1
                if i <= j:
                    keys[i], keys[j] = keys[j], keys[i]
                    vals[i], vals[j] = vals[j], vals[i]
                    i += 1
                    j -= 1
            # recurse into the smaller part later, loop on the larger one
            if j - lo < hi - i:
                stack[top] = i
                stack[top + 1] = hi
                top += 2
                hi = j
            else:
                stack[top] = lo
                stack[top + 1] = j
                top += 2
                lo = i
        for a in range(lo + 1, hi + 1):
            k = keys[a]
            v = vals[a]
            b = a - 1
            while b >= lo and keys[b] > k:
                keys[b + 1] = keys[b]
                vals[b + 1] = vals[b]
                b -= 1
            keys[b + 1] = k
            vals[b + 1] = v


@njit(cache=True)
def shuffle_prefix(arr, k, state):
    """Partial Fisher-Yates: afterwards ``arr[:k]`` is a uniform k-subset."""
    n = len(arr)
    for i in range(min(k, n)):
        j = i + randint(state, n - i)
        tmp = arr[i]
        arr[i] = arr[j]
        arr[j] = tmp


def derive_seed(*parts: int) -> int:
    """Deterministic 63-bit seed from a tuple of integers."""
    ss = np.random.SeedSequence([int(p) & 0xFFFFFFFFFFFFFFFF for p in parts])
    return int(ss.generate_state(1, dtype=np.uint64)[0] >> np.uint64(1))
