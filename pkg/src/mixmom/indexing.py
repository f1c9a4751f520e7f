"""Canonical index maps shared by all moment machinery.

Symmetric tensors are stored on nondecreasing index tuples, folded moments on
strictly increasing tuples, and pair coordinates flatten unordered pairs
(i, j) with i <= j.  Everything uses colexicographic order: the rank of a
strictly increasing tuple is a sum of binomial coefficients (combinatorial
number system), which vectorizes to table lookups.  The orders here are part
of the on-disk container format, so they must never change silently.
"""

from __future__ import annotations

import itertools
from functools import lru_cache

import numpy as np


@lru_cache(maxsize=None)
def _binom_table(nmax: int, kmax: int):
    """Pascal's triangle as an (nmax+1) x (kmax+1) int64 array."""
    t = np.zeros((nmax + 1, kmax + 1), dtype=np.int64)
    t[:, 0] = 1
    for m in range(1, nmax + 1):
        for r in range(1, kmax + 1):
            t[m, r] = t[m - 1, r - 1] + t[m - 1, r]
    t.setflags(write=False)
    return t


def binom(m: int, r: int) -> int:
    if r < 0 or m < 0 or r > m:
        return 0
    return int(_binom_table(m, r)[m, r])


def pair_count(n: int) -> int:
    return n * (n + 1) // 2


def pair_index(i, j):
    """Colex rank of the unordered pair {i, j}; accepts arrays."""
    lo = np.minimum(i, j)
    hi = np.maximum(i, j)
    return hi * (hi + 1) // 2 + lo


@lru_cache(maxsize=None)
def pair_table(n: int):
    """(n2, 2) array mapping pair rank -> (i, j) with i <= j."""
    out = np.empty((pair_count(n), 2), dtype=np.int64)
    p = 0
    for j in range(n):
        for i in range(j + 1):
            out[p] = (i, j)
            p += 1
    out.setflags(write=False)
    return out


@lru_cache(maxsize=None)
def strict_tuples(n: int, r: int):
    """All strictly increasing r-tuples from range(n), rows in colex order."""
    if r == 0:
        return np.zeros((1, 0), dtype=np.int64)
    if n < r:
        return np.zeros((0, r), dtype=np.int64)
    arr = np.array(list(itertools.combinations(range(n), r)), dtype=np.int64)
    # lexsort's last key is primary, so feeding columns left-to-right sorts
    # by the last column first: exactly colex.
    order = np.lexsort(tuple(arr[:, j] for j in range(r)))
    arr = arr[order]
    arr.setflags(write=False)
    return arr


def strict_rank(tuples: np.ndarray) -> np.ndarray:
    """Colex ranks of strictly increasing tuples (rows)."""
    tuples = np.asarray(tuples, dtype=np.int64)
    if tuples.ndim == 1:
        tuples = tuples[None, :]
    r = tuples.shape[1]
    table = _binom_table(int(tuples.max(initial=0)) + 1, r)
    ranks = np.zeros(tuples.shape[0], dtype=np.int64)
    for j in range(r):
        ranks += table[tuples[:, j], j + 1]
    return ranks


def nondecreasing_count(n: int, r: int) -> int:
    return binom(n + r - 1, r)


@lru_cache(maxsize=None)
def nondecreasing_tuples(n: int, r: int):
    """All nondecreasing r-tuples from range(n), colex order.

    Obtained from strict tuples over range(n + r - 1) by the staircase map
    t_j -> t_j - j, which is rank-preserving in colex order.
    """
    st = strict_tuples(n + r - 1, r)
    arr = st - np.arange(r, dtype=np.int64)[None, :]
    arr.setflags(write=False)
    return arr


def nondecreasing_rank(tuples: np.ndarray) -> np.ndarray:
    """Colex ranks of nondecreasing tuples (rows); inverse of the table above."""
    tuples = np.asarray(tuples, dtype=np.int64)
    if tuples.ndim == 1:
        tuples = tuples[None, :]
    r = tuples.shape[1]
    return strict_rank(tuples + np.arange(r, dtype=np.int64)[None, :])


def multiset_rank(indices) -> int:
    """Canonical rank of an arbitrary index multiset (any order, repeats ok)."""
    s = np.sort(np.asarray(indices, dtype=np.int64))
    return int(nondecreasing_rank(s)[0])


@lru_cache(maxsize=None)
def perfect_matchings(m: int) -> tuple:
    """All perfect matchings of range(m) as tuples of (a, b) pairs, a < b.

    m = 2t gives (2t-1)!! matchings: 3 for m=4, 15 for m=6.
    """
    if m % 2 != 0:
        return ()
    if m == 0:
        return ((),)
    items = list(range(m))

    def rec(remaining):
        if not remaining:
            return [()]
        first = remaining[0]
        out = []
        for pos in range(1, len(remaining)):
            partner = remaining[pos]
            rest = remaining[1:pos] + remaining[pos + 1:]
            for tail in rec(rest):
                out.append(((first, partner),) + tail)
        return out

    return tuple(rec(items))


@lru_cache(maxsize=None)
def pair_singleton_partitions(m: int) -> tuple:
    """All partitions of range(m) into pairs and singletons.

    Returned as (pairs, singles) tuples; the count is the telephone number
    (1, 1, 2, 4, 10, 26, 76 for m = 0..6).
    """

    def rec(remaining):
        if not remaining:
            return [((), ())]
        first = remaining[0]
        rest = remaining[1:]
        out = []
        for pairs, singles in rec(rest):
            out.append((pairs, (first,) + singles))
        for pos in range(len(rest)):
            partner = rest[pos]
            rest2 = rest[:pos] + rest[pos + 1:]
            for pairs, singles in rec(rest2):
                out.append((((first, partner),) + pairs, singles))
        return out

    return tuple(rec(tuple(range(m))))
