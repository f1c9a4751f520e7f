"""Moment unfolding: express the folded order-4/6 moments in a span basis.

Once the k-dimensional span U of the vectorized covariances is known, the
folded moments become linear in the compressed tensors
Y4 = sum_i w_i c_i c_i^T and Y6 = sum_i w_i c_i^{x3} where c_i are the
coordinates of Sigma_i in U.  The coefficient systems H4, H6 are built by
pushing symmetrized outer products of the basis matrices through the same
pairing sums that define the folded moments, and the tensors are read off
as least-squares solutions.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Any

import numpy as np
import scipy.linalg

from .diagnostics import RunLog
from .errors import UnfoldIllConditioned
from .indexing import (
    binom,
    nondecreasing_count,
    nondecreasing_tuples,
    pair_table,
    strict_tuples,
)
from .moments import (
    SQRT3,
    SQRT15,
    FoldedMoments,
    iso_to_raw,
    pairing_table4,
    pairing_table6,
    sym_to_iso,
)
from .spans import Subspace

_PERMS3 = list(itertools.permutations(range(3)))
_PERMS2 = list(itertools.permutations(range(2)))


@dataclass
class CoefficientSystem:
    h4: np.ndarray  # (C(n,4), k(k+1)/2)
    h6: np.ndarray | None  # (C(n,6), C(k+2,3)) when order-6 data exists
    pair_index: np.ndarray  # (k2, 2) nondecreasing pairs in colex order
    triple_index: np.ndarray  # (k3, 3)


@dataclass
class UnfoldedMoments:
    y4: np.ndarray  # (k, k) symmetric
    y6: np.ndarray  # (k, k, k) symmetric
    basis: Subspace


def _raw_basis_vectors(u: Subspace | np.ndarray) -> np.ndarray:
    basis = u.basis if isinstance(u, Subspace) else np.asarray(u, dtype=float)
    return np.column_stack(
        [iso_to_raw(basis[:, j]) for j in range(basis.shape[1])]
    )


def _h4_rows(raw: np.ndarray, pairing: np.ndarray, pairs: np.ndarray) -> np.ndarray:
    """Coefficient rows of the order-4 system for the given strict tuples.

    pairing has shape (rows, 3, 2) holding pair ranks; column (i, j) of the
    output is mult(i, j) * F4 applied to the symmetrized outer product of
    basis vectors i and j.
    """
    g = raw[pairing]  # (rows, 3, 2, k)
    rows = np.empty((pairing.shape[0], pairs.shape[0]))
    for c, (i, j) in enumerate(pairs):
        acc = 0.0
        for perm in _PERMS2:
            sel = (g[:, :, 0, (i, j)[perm[0]]], g[:, :, 1, (i, j)[perm[1]]])
            acc = acc + sel[0] * sel[1]
        vals = acc.sum(axis=1) / len(_PERMS2)
        mult = 1.0 if i == j else 2.0
        rows[:, c] = mult * vals / SQRT3
    return rows


def _h6_rows(raw: np.ndarray, pairing: np.ndarray, triples: np.ndarray) -> np.ndarray:
    g = raw[pairing]  # (rows, 15, 3, k)
    rows = np.empty((pairing.shape[0], triples.shape[0]))
    for c, (i, j, l) in enumerate(triples):
        acc = 0.0
        for perm in _PERMS3:
            idx = (i, j, l)
            acc = acc + (
                g[:, :, 0, idx[perm[0]]]
                * g[:, :, 1, idx[perm[1]]]
                * g[:, :, 2, idx[perm[2]]]
            )
        vals = acc.sum(axis=1) / len(_PERMS3)
        if i == j == l:
            mult = 1.0
        elif i == j or j == l or i == l:
            mult = 3.0
        else:
            mult = 6.0
        rows[:, c] = mult * vals / SQRT15
    return rows


def build_h4(u: Subspace | np.ndarray) -> np.ndarray:
    raw = _raw_basis_vectors(u)
    k = raw.shape[1]
    n = _ambient_from_pairs(raw.shape[0])
    return _h4_rows(raw, pairing_table4(n), pair_table(k))


def build_h6(u: Subspace | np.ndarray) -> np.ndarray:
    raw = _raw_basis_vectors(u)
    k = raw.shape[1]
    n = _ambient_from_pairs(raw.shape[0])
    return _h6_rows(raw, pairing_table6(n), nondecreasing_tuples(k, 3))


def build_coefficient_system(u: Subspace | np.ndarray, with_h6: bool = True) -> CoefficientSystem:
    raw = _raw_basis_vectors(u)
    k = raw.shape[1]
    return CoefficientSystem(
        h4=build_h4(u),
        h6=build_h6(u) if with_h6 else None,
        pair_index=pair_table(k),
        triple_index=nondecreasing_tuples(k, 3),
    )


def _ambient_from_pairs(d2: int) -> int:
    n = int((np.sqrt(8 * d2 + 1) - 1) / 2)
    if n * (n + 1) // 2 != d2:
        raise ValueError("length is not a pair-count")
    return n


def _wick4_strict(b: np.ndarray) -> np.ndarray:
    """Order-4 moments of a single zero-mean Gaussian with covariance b,
    evaluated at the strictly increasing 4-tuples."""
    t = strict_tuples(b.shape[0], 4)
    return (
        b[t[:, 0], t[:, 1]] * b[t[:, 2], t[:, 3]]
        + b[t[:, 0], t[:, 2]] * b[t[:, 1], t[:, 3]]
        + b[t[:, 0], t[:, 3]] * b[t[:, 1], t[:, 2]]
    )


def _wick6_strict(b: np.ndarray) -> np.ndarray:
    """Order-6 moments of a single zero-mean Gaussian with covariance b,
    evaluated at the strictly increasing 6-tuples."""
    from .indexing import perfect_matchings

    t = strict_tuples(b.shape[0], 6)
    acc = np.zeros(t.shape[0])
    for matching in perfect_matchings(6):
        term = np.ones(t.shape[0])
        for i, j in matching:
            term = term * b[t[:, i], t[:, j]]
        acc += term
    return acc


def _solve_qr(h: np.ndarray, rhs: np.ndarray) -> tuple[np.ndarray, np.ndarray, float]:
    x, _, _, _ = scipy.linalg.lstsq(h, rhs, lapack_driver="gelsy")
    sing = np.linalg.svd(h, compute_uv=False)
    resid = float(np.linalg.norm(h @ x - rhs))
    return x, sing, resid


def _solve_gram_streamed(
    n: int,
    order: int,
    raw: np.ndarray,
    cols: np.ndarray,
    rhs_full: np.ndarray,
    chunk: int = 200_000,
) -> tuple[np.ndarray, np.ndarray, float]:
    from .indexing import pair_index as pair_rank

    k_cols = cols.shape[0]
    gram = np.zeros((k_cols, k_cols))
    gvec = np.zeros(k_cols)
    rhs_sq = float(rhs_full @ rhs_full)
    tuples = strict_tuples(n, order)
    if order == 4:
        slots = np.array([[(0, 1), (2, 3)], [(0, 2), (1, 3)], [(0, 3), (1, 2)]])
    else:
        from .indexing import perfect_matchings

        slots = np.array(perfect_matchings(6))
    for start in range(0, tuples.shape[0], chunk):
        t = tuples[start : start + chunk]
        pairing = pair_rank(
            t[:, slots[:, :, 0]], t[:, slots[:, :, 1]]
        )  # (B, matchings, order/2)
        if order == 4:
            block = _h4_rows(raw, pairing, cols)
        else:
            block = _h6_rows(raw, pairing, cols)
        gram += block.T @ block
        gvec += block.T @ rhs_full[start : start + chunk]
    eigvals, eigvecs = np.linalg.eigh(gram)
    eigvals = eigvals[::-1]
    eigvecs = eigvecs[:, ::-1]
    cutoff = 1e-14 * max(eigvals[0], 1e-300)
    inv = np.where(eigvals > cutoff, 1.0 / np.maximum(eigvals, cutoff), 0.0)
    x = eigvecs @ (inv * (eigvecs.T @ gvec))
    sing = np.sqrt(np.clip(eigvals, 0.0, None))
    resid_sq = max(x @ gram @ x - 2.0 * (x @ gvec) + rhs_sq, 0.0)
    return x, sing, float(np.sqrt(resid_sq))


def solve_unfold(
    folded: FoldedMoments,
    u: Subspace,
    *,
    second_moment: np.ndarray | None = None,
    rank_tol: float = 1e-9,
    memory_budget: int = 50_000_000,
    log: RunLog | None = None,
) -> tuple[UnfoldedMoments, list[dict[str, Any]]]:
    """Solve the two linear systems for the compressed moment tensors.

    When the mixture second moment is given, its single-Gaussian Wick part
    is subtracted from both right-hand sides before solving and the matching
    rank-one contribution is restored on the solutions afterwards.  The two
    routes agree exactly in exact arithmetic; on sampled moments the centered
    route keeps the solve error proportional to the component separation
    instead of the scale shared by all components.
    """
    log = log or RunLog()
    n = folded.n
    raw = _raw_basis_vectors(u)
    k = raw.shape[1]
    pairs = pair_table(k)
    triples = nondecreasing_tuples(k, 3)
    rows: list[dict[str, Any]] = []

    y_bar = None
    if second_moment is not None:
        y_bar = u.basis.T @ sym_to_iso(second_moment)

    def run(order: int, cols: np.ndarray, rhs: np.ndarray, name: str):
        n_rows = binom(n, order)
        if n_rows * cols.shape[0] <= memory_budget:
            pairing = pairing_table4(n) if order == 4 else pairing_table6(n)
            h = _h4_rows(raw, pairing, cols) if order == 4 else _h6_rows(raw, pairing, cols)
            x, sing, resid = _solve_qr(h, rhs)
            path = "qr"
        else:
            x, sing, resid = _solve_gram_streamed(n, order, raw, cols, rhs)
            path = "gram"
        smax = float(sing[0]) if sing.size else 0.0
        smin = float(sing[cols.shape[0] - 1]) if sing.size >= cols.shape[0] else 0.0
        rel = resid / max(float(np.linalg.norm(rhs)), 1e-300)
        row = {
            "system": name,
            "sigma_min": smin,
            "sigma_max": smax,
            "residual": rel,
            "solver_path": path,
        }
        rows.append(row)
        log.add_row("unfold", row)
        if smin <= rank_tol * max(smax, 1e-300):
            log.problem(
                UnfoldIllConditioned,
                name,
                f"coefficient system nearly singular (sigma_min={smin:.3e}, "
                f"sigma_max={smax:.3e})",
            )
        return x

    rhs4 = folded.m4_bar
    if second_moment is not None:
        rhs4 = rhs4 - _wick4_strict(second_moment)
    x4 = run(4, pairs, rhs4 / SQRT3, "h4")
    y4 = np.zeros((k, k))
    for p, (i, j) in enumerate(pairs):
        y4[i, j] = y4[j, i] = x4[p]
    if y_bar is not None:
        y4 += np.outer(y_bar, y_bar)

    if folded.m6_bar is None:
        raise ValueError("unfolding requires folded order-6 moments")
    rhs6 = folded.m6_bar
    if second_moment is not None:
        rhs6 = rhs6 - _wick6_strict(second_moment)
    x6 = run(6, triples, rhs6 / SQRT15, "h6")
    y6 = np.zeros((k, k, k))
    for p, t in enumerate(triples):
        for perm in set(itertools.permutations(t)):
            y6[perm] = x6[p]
    if y_bar is not None:
        y6 += np.einsum("i,j,l->ijl", y_bar, y_bar, y_bar)

    return UnfoldedMoments(y4=y4, y6=y6, basis=u), rows
