"""Moment tensors of Gaussian mixtures.

Exact moments come from Wick/Isserlis enumeration over pair-singleton
partitions; empirical moments from streamed sample averages with compensated
summation.  Order-6 moments are never stored densely: the pipeline consumes
the distinct-index folded vector plus slice views, which are computed on
demand (from the generating parameters when exact, from retained samples when
empirical).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .errors import (
    DimensionTooSmall,
    IndexOutOfRange,
    UnsupportedOrder,
)
from .indexing import (
    nondecreasing_rank,
    nondecreasing_tuples,
    pair_count,
    pair_index,
    pair_singleton_partitions,
    pair_table,
    perfect_matchings,
    strict_tuples,
)
from .model import GmmParams, SampleBatch

SQRT3 = np.sqrt(3.0)
SQRT15 = np.sqrt(15.0)


# ---------------------------------------------------------------------------
# symmetric tensors on canonical storage


class SymTensor:
    """Symmetric tensor stored on nondecreasing index tuples (colex order)."""

    SUPPORTED_ORDERS = (2, 3, 4, 6)

    def __init__(self, dim: int, order: int, values: np.ndarray):
        if order not in self.SUPPORTED_ORDERS:
            raise UnsupportedOrder(f"order {order} not in {self.SUPPORTED_ORDERS}")
        values = np.asarray(values, dtype=np.float64)
        expected = nondecreasing_tuples(dim, order).shape[0]
        if values.shape != (expected,):
            raise ValueError(
                f"canonical storage must have length {expected}, got {values.shape}"
            )
        self.dim = dim
        self.order = order
        self.values = values

    def entry(self, *indices) -> float:
        return float(self.entries(np.asarray(indices)[None, :])[0])

    def entries(self, tuples: np.ndarray) -> np.ndarray:
        """Values at arbitrary index tuples (rows); order does not matter."""
        tuples = np.asarray(tuples, dtype=np.int64)
        if tuples.ndim == 1:
            tuples = tuples[None, :]
        if tuples.shape[1] != self.order:
            raise ValueError(f"expected {self.order} indices per row")
        if tuples.min(initial=0) < 0 or tuples.max(initial=-1) >= self.dim:
            raise IndexOutOfRange(f"indices must lie in [0, {self.dim})")
        return self.values[nondecreasing_rank(np.sort(tuples, axis=1))]

    def dense(self) -> np.ndarray:
        """Full dense tensor; guarded against accidental huge allocations."""
        size = self.dim**self.order
        if size > 100_000_000:
            raise MemoryError(
                f"dense {self.dim}^{self.order} tensor is too large to materialize"
            )
        grids = np.indices((self.dim,) * self.order).reshape(self.order, -1).T
        return self.entries(grids).reshape((self.dim,) * self.order)

    @classmethod
    def from_dense(cls, tensor: np.ndarray) -> "SymTensor":
        order = tensor.ndim
        dim = tensor.shape[0]
        tups = nondecreasing_tuples(dim, order)
        values = tensor[tuple(tups[:, j] for j in range(order))]
        return cls(dim, order, np.ascontiguousarray(values))

    def __add__(self, other: "SymTensor") -> "SymTensor":
        if (self.dim, self.order) != (other.dim, other.order):
            raise ValueError("shape mismatch")
        return SymTensor(self.dim, self.order, self.values + other.values)

    def scaled(self, c: float) -> "SymTensor":
        return SymTensor(self.dim, self.order, c * self.values)


# ---------------------------------------------------------------------------
# exact moments (Wick / Isserlis)


def isserlis_moment(cov: np.ndarray, mean: np.ndarray, indices) -> float:
    """E[x_{i1} ... x_{it}] for x ~ N(mean, cov).

    Sums over all partitions of the index positions into pairs and singletons:
    products of cov entries over pairs times mean entries over singletons.
    For a zero mean only the perfect matchings survive ((2t-1)!! of them; odd
    t gives 0).
    """
    idx = tuple(int(i) for i in indices)
    t = len(idx)
    if t > 6:
        raise UnsupportedOrder(f"moment order {t} > 6 is not supported")
    if t == 0:
        return 1.0
    cov = np.asarray(cov, dtype=np.float64)
    mean = np.asarray(mean, dtype=np.float64)
    total = 0.0
    for pairs, singles in pair_singleton_partitions(t):
        term = 1.0
        for a, b in pairs:
            term *= cov[idx[a], idx[b]]
        for s in singles:
            term *= mean[idx[s]]
        if term != 0.0:
            total += term
    return float(total)


def _mixture_moment_values(params: GmmParams, tuples: np.ndarray) -> np.ndarray:
    """Vectorized mixture moments at the given index tuples (rows)."""
    tuples = np.asarray(tuples, dtype=np.int64)
    order = tuples.shape[1]
    if order > 6:
        raise UnsupportedOrder(f"moment order {order} > 6 is not supported")
    zero_mean = params.is_zero_mean()
    if zero_mean:
        partitions = tuple((m, ()) for m in perfect_matchings(order))
    else:
        partitions = pair_singleton_partitions(order)
    cols = [tuples[:, j] for j in range(order)]
    out = np.zeros(tuples.shape[0])
    for i in range(params.k):
        sig = params.covariances[i]
        mu = params.means[i]
        comp = np.zeros(tuples.shape[0])
        for pairs, singles in partitions:
            term = np.ones(tuples.shape[0])
            for a, b in pairs:
                term = term * sig[cols[a], cols[b]]
            for s in singles:
                term = term * mu[cols[s]]
            comp += term
        out += params.weights[i] * comp
    return out


# ---------------------------------------------------------------------------
# folded moments and the F4 / F6 maps


@dataclass
class FoldedMoments:
    """Distinct-index moment vectors: entries at strictly increasing tuples."""

    n: int
    m4_bar: np.ndarray
    m6_bar: np.ndarray | None = None

    def __post_init__(self):
        if self.m4_bar.shape != (strict_tuples(self.n, 4).shape[0],):
            raise ValueError("m4_bar has the wrong length")
        if self.m6_bar is not None and self.m6_bar.shape != (
            strict_tuples(self.n, 6).shape[0],
        ):
            raise ValueError("m6_bar has the wrong length")

    def tuples4(self) -> np.ndarray:
        return strict_tuples(self.n, 4)

    def tuples6(self) -> np.ndarray:
        return strict_tuples(self.n, 6)


@lru_cache(maxsize=None)
def pairing_table4(n: int) -> np.ndarray:
    """(n4, 3, 2) pair ranks: the 3 perfect matchings of each strict 4-tuple."""
    tups = strict_tuples(n, 4)
    out = np.empty((tups.shape[0], 3, 2), dtype=np.int64)
    for m, matching in enumerate(perfect_matchings(4)):
        for slot, (a, b) in enumerate(matching):
            out[:, m, slot] = pair_index(tups[:, a], tups[:, b])
    out.setflags(write=False)
    return out


@lru_cache(maxsize=None)
def pairing_table6(n: int) -> np.ndarray:
    """(n6, 15, 3) pair ranks: the 15 perfect matchings of each strict 6-tuple."""
    tups = strict_tuples(n, 6)
    out = np.empty((tups.shape[0], 15, 3), dtype=np.int64)
    for m, matching in enumerate(perfect_matchings(6)):
        for slot, (a, b) in enumerate(matching):
            out[:, m, slot] = pair_index(tups[:, a], tups[:, b])
    out.setflags(write=False)
    return out


def _n_from_pair_dim(n2: int) -> int:
    n = int(round((np.sqrt(8 * n2 + 1) - 1) / 2))
    if pair_count(n) != n2:
        raise ValueError(f"{n2} is not a valid pair-coordinate dimension")
    return n


def f4_apply(x4: np.ndarray) -> np.ndarray:
    """F4: pair-indexed n2 x n2 matrix -> vector over strictly increasing 4-tuples.

    Output coordinate (j1<j2<j3<j4) sums x4 over the three pairings, divided
    by sqrt(3) so that m4_bar = sqrt(3) * F4(X4) holds exactly.  Reads are
    symmetrized over the (row, col) pair labels, so antisymmetric input parts
    and the pair-diagonal are ignored.
    """
    x4 = np.asarray(x4, dtype=np.float64)
    n = _n_from_pair_dim(x4.shape[0])
    tbl = pairing_table4(n)
    p, q = tbl[:, :, 0], tbl[:, :, 1]
    vals = (x4[p, q] + x4[q, p]) / 2.0
    return vals.sum(axis=1) / SQRT3


def f6_apply(x6: np.ndarray) -> np.ndarray:
    """F6: pair-indexed order-3 tensor -> vector over strictly increasing 6-tuples.

    Sums the 15 pairings, averaging over the 3! orderings of the pair slots,
    divided by sqrt(15) so m6_bar = sqrt(15) * F6(X6).
    """
    x6 = np.asarray(x6, dtype=np.float64)
    n = _n_from_pair_dim(x6.shape[0])
    tbl = pairing_table6(n)
    perms = ((0, 1, 2), (0, 2, 1), (1, 0, 2), (1, 2, 0), (2, 0, 1), (2, 1, 0))
    acc = np.zeros(tbl.shape[0])
    for a, b, c in perms:
        acc += x6[tbl[:, :, a], tbl[:, :, b], tbl[:, :, c]].sum(axis=1)
    return acc / (6.0 * SQRT15)


def sym_to_iso(mat: np.ndarray) -> np.ndarray:
    """Isometric pair coordinates of a symmetric matrix (off-diagonals * sqrt2)."""
    n = mat.shape[0]
    pt = pair_table(n)
    i, j = pt[:, 0], pt[:, 1]
    scale = np.where(i == j, 1.0, np.sqrt(2.0))
    return mat[i, j] * scale


def iso_to_sym(vec: np.ndarray) -> np.ndarray:
    n = _n_from_pair_dim(vec.shape[0])
    pt = pair_table(n)
    i, j = pt[:, 0], pt[:, 1]
    scale = np.where(i == j, 1.0, np.sqrt(2.0))
    vals = vec / scale
    out = np.zeros((n, n))
    out[i, j] = vals
    out[j, i] = vals
    return out


def iso_to_raw(vec: np.ndarray) -> np.ndarray:
    """Convert isometric pair coordinates to raw pair products (entry values)."""
    n = _n_from_pair_dim(vec.shape[0])
    pt = pair_table(n)
    scale = np.where(pt[:, 0] == pt[:, 1], 1.0, np.sqrt(2.0))
    return vec / scale


# ---------------------------------------------------------------------------
# the moment bundle


@dataclass
class MomentSet:
    """Moment views the pipeline consumes.

    m3 is present only when order 3 was requested (general mode).  Order 6 is
    held as the distinct-index vector m6_bar; entries with repeated indices
    (needed by the order-6 slice views) are computed on demand from `params`
    (exact provenance) or `samples` (empirical provenance).
    """

    n: int
    m4: SymTensor
    m3: SymTensor | None = None
    m6_bar: np.ndarray | None = None
    provenance: str = "exact"
    n_samples: int | None = None
    params: GmmParams | None = None
    samples: np.ndarray | None = None
    m2: np.ndarray | None = None
    _m4_dense: np.ndarray | None = field(default=None, repr=False)

    def orders(self) -> tuple:
        out = []
        if self.m3 is not None:
            out.append(3)
        out.append(4)
        if self.m6_bar is not None:
            out.append(6)
        return tuple(out)

    # -- order-4 views ------------------------------------------------------

    def m4_dense(self) -> np.ndarray:
        if self._m4_dense is None:
            self._m4_dense = self.m4.dense()
        return self._m4_dense

    def _check_index(self, *idx):
        for j in idx:
            if not (0 <= j < self.n):
                raise IndexOutOfRange(f"index {j} outside [0, {self.n})")

    def m4_slice1(self, j1: int, j2: int, j3: int) -> np.ndarray:
        """Vector p -> M4(e_j1, e_j2, e_j3, e_p)."""
        self._check_index(j1, j2, j3)
        return self.m4_dense()[j1, j2, j3, :].copy()

    def m4_slice2(self, j1: int, j2: int) -> np.ndarray:
        """Matrix (p, q) -> M4(e_j1, e_j2, e_p, e_q)."""
        self._check_index(j1, j2)
        return self.m4_dense()[j1, j2, :, :].copy()

    def second_moment(self) -> np.ndarray:
        """Mixture second moment E[x x^T]."""
        if self.m2 is None:
            if self.params is not None:
                p = self.params
                self.m2 = np.einsum("i,iab->ab", p.weights, p.covariances) + (
                    p.means.T * p.weights
                ) @ p.means
            elif self.samples is not None:
                x = self.samples
                self.m2 = x.T @ x / x.shape[0]
            else:
                raise UnsupportedOrder(
                    "second moment unavailable: no parameters or samples"
                )
        return self.m2

    def m4_slice1_centered(self, j1: int, j2: int, j3: int) -> np.ndarray:
        """Fourth-moment slice minus the Wick products of the mixture second
        moment.

        For a zero-mean mixture the result keeps the slice structure with
        every component covariance replaced by its deviation from the mixture
        covariance.  The deviations carry none of the scale shared by all
        components, which makes these slices far better conditioned under
        sampling noise; they also satisfy one linear relation (the weighted
        deviations sum to zero), so span ranks drop accordingly.
        """
        b = self.second_moment()
        s = self.m4_slice1(j1, j2, j3)
        return s - (b[j1, j2] * b[j3] + b[j1, j3] * b[j2] + b[j2, j3] * b[j1])

    def m4_slice2_centered(self, j1: int, j2: int) -> np.ndarray:
        """Pair slice minus the Wick products of the mixture second moment."""
        b = self.second_moment()
        s = self.m4_slice2(j1, j2)
        return s - (
            b[j1, j2] * b + np.outer(b[j1], b[j2]) + np.outer(b[j2], b[j1])
        )

    def m3_matricize(self) -> np.ndarray:
        """n x n^2 matrix whose j-th row is vec E[x_j x x^T] (row-major)."""
        if self.m3 is None:
            raise UnsupportedOrder("order-3 moments were not computed")
        return self.m3.dense().reshape(self.n, self.n * self.n)

    # -- order-6 views ------------------------------------------------------

    @property
    def supports_order6_slices(self) -> bool:
        if self.m6_bar is None:
            return False
        return self.params is not None or self.samples is not None

    def m6_entries(self, tuples: np.ndarray) -> np.ndarray:
        """Order-6 entries at arbitrary tuples (repeats allowed)."""
        tuples = np.asarray(tuples, dtype=np.int64)
        if tuples.ndim == 1:
            tuples = tuples[None, :]
        if tuples.min(initial=0) < 0 or tuples.max(initial=-1) >= self.n:
            raise IndexOutOfRange(f"indices must lie in [0, {self.n})")
        if self.params is not None:
            return _mixture_moment_values(self.params, tuples)
        if self.samples is not None:
            x = self.samples
            out = np.empty(tuples.shape[0])
            for r, t in enumerate(tuples):
                prod = x[:, t[0]].copy()
                for j in t[1:]:
                    prod *= x[:, j]
                out[r] = prod.mean()
            return out
        raise UnsupportedOrder(
            "order-6 entries with repeated indices are unavailable: "
            "no generating parameters or retained samples"
        )

    def m6_slice1(self, j1: int, j2: int, j3: int, j4: int, j5: int) -> np.ndarray:
        """Vector p -> M6(e_j1, ..., e_j5, e_p)."""
        self._check_index(j1, j2, j3, j4, j5)
        tuples = np.empty((self.n, 6), dtype=np.int64)
        tuples[:, :5] = (j1, j2, j3, j4, j5)
        tuples[:, 5] = np.arange(self.n)
        return self.m6_entries(tuples)

    def m6_slice2(self, j1: int, j2: int, j3: int, j4: int) -> np.ndarray:
        """Matrix (p, q) -> M6(e_j1, ..., e_j4, e_p, e_q)."""
        self._check_index(j1, j2, j3, j4)
        pt = pair_table(self.n)
        tuples = np.empty((pt.shape[0], 6), dtype=np.int64)
        tuples[:, :4] = (j1, j2, j3, j4)
        tuples[:, 4:] = pt
        vals = self.m6_entries(tuples)
        out = np.zeros((self.n, self.n))
        out[pt[:, 0], pt[:, 1]] = vals
        out[pt[:, 1], pt[:, 0]] = vals
        return out

    # -- folding ------------------------------------------------------------

    def fold(self) -> FoldedMoments:
        if self.n < 4:
            raise DimensionTooSmall("folded 4th moments need n >= 4")
        m4_bar = self.m4.entries(strict_tuples(self.n, 4))
        m6_bar = None
        if self.m6_bar is not None:
            if self.n < 6:
                raise DimensionTooSmall("folded 6th moments need n >= 6")
            m6_bar = self.m6_bar.copy()
        return FoldedMoments(self.n, m4_bar, m6_bar)


def fold(moments: MomentSet) -> FoldedMoments:
    """Distinct-index views of the order-4 and order-6 moments."""
    return moments.fold()


# ---------------------------------------------------------------------------
# constructors


def exact_moments(params: GmmParams, orders=(3, 4, 6)) -> MomentSet:
    """Exact mixture moments via weighted Wick enumeration."""
    orders = set(orders)
    bad = orders - {2, 3, 4, 6}
    if bad:
        raise UnsupportedOrder(f"unsupported orders {sorted(bad)}")
    n = params.n
    m4 = SymTensor(n, 4, _mixture_moment_values(params, nondecreasing_tuples(n, 4)))
    m3 = None
    if 3 in orders:
        m3 = SymTensor(n, 3, _mixture_moment_values(params, nondecreasing_tuples(n, 3)))
    m6_bar = None
    if 6 in orders:
        if n < 6:
            raise DimensionTooSmall("order-6 folded moments need n >= 6")
        m6_bar = _mixture_moment_values(params, strict_tuples(n, 6))
    return MomentSet(
        n=n, m4=m4, m3=m3, m6_bar=m6_bar, provenance="exact", params=params
    )


def _kahan_add(total, comp, term):
    y = term - comp
    t = total + y
    comp = (t - total) - y
    return t, comp


def empirical_moments(
    batch: SampleBatch,
    orders=(3, 4, 6),
    keep_samples: bool = True,
    batch_size: int = 65536,
) -> MomentSet:
    """Streamed sample moments with Kahan-compensated batch accumulation.

    Order 4 (and 3) come from Gram products of the row-wise pair products;
    order 6 is averaged per distinct 6-tuple.  keep_samples retains the data
    so order-6 slice views remain available downstream.
    """
    orders = set(orders)
    bad = orders - {2, 3, 4, 6}
    if bad:
        raise UnsupportedOrder(f"unsupported orders {sorted(bad)}")
    x = batch.data
    n_samples, n = x.shape
    pt = pair_table(n)
    n2 = pt.shape[0]

    want3 = 3 in orders
    want6 = 6 in orders and n >= 6
    if 6 in orders and n < 6:
        raise DimensionTooSmall("order-6 folded moments need n >= 6")

    s2 = np.zeros((n, n))
    c2 = np.zeros((n, n))
    s4 = np.zeros((n2, n2))
    c4 = np.zeros((n2, n2))
    s3 = np.zeros((n, n2)) if want3 else None
    c3 = np.zeros((n, n2)) if want3 else None
    if want6:
        t6 = strict_tuples(n, 6)
        s6 = np.zeros(t6.shape[0])
        c6 = np.zeros(t6.shape[0])
        # product of two triple products when the triple table is small
        t3 = strict_tuples(n, 3)
        use_triples = t3.shape[0] <= 512
        if use_triples:
            from .indexing import strict_rank

            left = strict_rank(t6[:, :3])
            right = strict_rank(t6[:, 3:])

    for start in range(0, n_samples, batch_size):
        xb = x[start : start + batch_size]
        zb = xb[:, pt[:, 0]] * xb[:, pt[:, 1]]
        s2, c2 = _kahan_add(s2, c2, xb.T @ xb)
        s4, c4 = _kahan_add(s4, c4, zb.T @ zb)
        if want3:
            s3, c3 = _kahan_add(s3, c3, xb.T @ zb)
        if want6:
            if use_triples:
                tb = xb[:, t3[:, 0]] * xb[:, t3[:, 1]] * xb[:, t3[:, 2]]
                part = np.einsum("bi,bi->i", tb[:, left], tb[:, right])
            else:
                part = np.empty(t6.shape[0])
                for r, t in enumerate(t6):
                    prod = xb[:, t[0]] * xb[:, t[1]]
                    for j in t[2:]:
                        prod = prod * xb[:, j]
                    part[r] = prod.sum()
            s6, c6 = _kahan_add(s6, c6, part)

    tups4 = nondecreasing_tuples(n, 4)
    rows = pair_index(tups4[:, 0], tups4[:, 1])
    cols = pair_index(tups4[:, 2], tups4[:, 3])
    m4 = SymTensor(n, 4, s4[rows, cols] / n_samples)

    m3 = None
    if want3:
        tups3 = nondecreasing_tuples(n, 3)
        m3 = SymTensor(
            n, 3, s3[tups3[:, 0], pair_index(tups3[:, 1], tups3[:, 2])] / n_samples
        )

    m6_bar = s6 / n_samples if want6 else None

    return MomentSet(
        n=n,
        m4=m4,
        m3=m3,
        m6_bar=m6_bar,
        provenance=f"empirical:{n_samples}",
        n_samples=n_samples,
        samples=x if keep_samples else None,
        m2=s2 / n_samples,
    )


# ---------------------------------------------------------------------------
# projection to a lower-dimensional frame (general-mode step 2)


def _dense6_from_canonical(values: np.ndarray, n: int) -> np.ndarray:
    """Scatter canonical order-6 values into a dense n^6 tensor, blockwise."""
    out = np.empty((n,) * 6)
    tail = np.indices((n,) * 4).reshape(4, -1).T
    rows = np.empty((tail.shape[0], 6), dtype=np.int64)
    rows[:, 2:] = tail
    for i1 in range(n):
        rows[:, 0] = i1
        for i2 in range(n):
            rows[:, 1] = i2
            ranks = nondecreasing_rank(np.sort(rows, axis=1))
            out[i1, i2] = values[ranks].reshape((n,) * 4)
    return out


def project_moments(
    moments: MomentSet, w: np.ndarray, max_dense_dim: int = 24
) -> MomentSet:
    """Express the moments in the frame of the orthonormal columns of w.

    Exact provenance contracts the moment tensors with w directly (the
    order-6 tensor is materialized densely once, transiently; the dimension
    cap keeps that allocation sane).  Empirical provenance projects the
    retained samples and re-estimates.
    """
    n = moments.n
    m = w.shape[1]
    if w.shape[0] != n:
        raise ValueError("frame has the wrong ambient dimension")

    if moments.samples is not None:
        proj = SampleBatch(moments.samples @ w)
        orders = (4, 6) if m >= 6 else (4,)
        return empirical_moments(proj, orders=orders, keep_samples=True)

    if moments.params is None:
        raise UnsupportedOrder(
            "projection requires retained samples or generating parameters"
        )
    if moments.m6_bar is None:
        raise UnsupportedOrder("projection requires order-6 moments")
    if n > max_dense_dim:
        raise DimensionTooSmall(
            f"dense order-6 contraction capped at n <= {max_dense_dim} (got {n})"
        )

    def contract_all(t: np.ndarray) -> np.ndarray:
        # contract every axis with w once; the GEMM on a transposed reshape
        # view avoids tensordot's internal permutation copy, which matters
        # for the order-6 tensor
        for _ in range(t.ndim):
            lead = t.shape[0]
            rest = t.shape[1:]
            t = (t.reshape(lead, -1).T @ w).reshape(rest + (m,))
        return t

    m4 = SymTensor.from_dense(contract_all(moments.m4_dense()))

    vals6 = _mixture_moment_values(moments.params, nondecreasing_tuples(n, 6))
    d6 = contract_all(_dense6_from_canonical(vals6, n))
    if m >= 6:
        m6_bar = d6[tuple(strict_tuples(m, 6).T)]
    else:
        m6_bar = None
    del d6

    # the projected mixture itself, for on-demand slice entries; its means are
    # numerically tiny multiples of the frame error, so they are dropped
    p = moments.params
    proj_params = GmmParams(
        p.weights.copy(),
        np.zeros((p.k, m)),
        np.einsum("kab,ai,bj->kij", p.covariances, w, w),
        check=False,
    )
    return MomentSet(
        n=m,
        m4=m4,
        m3=None,
        m6_bar=m6_bar,
        provenance="exact",
        params=proj_params,
    )
