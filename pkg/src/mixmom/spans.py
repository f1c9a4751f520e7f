"""Span finding: recover the span of the mixture covariances from
fourth-moment slices, in two independent coordinate runs that are then
merged.

A slice of the fourth moment indexed by three coordinates (a, b, c) is a
vector in the free index whose component mixture terms all live in the span
of the covariance columns touched by {a, b, c} (plus the mean directions in
general mode).  Collecting slices over a small index set H therefore gives a
matrix whose column space is span{Sigma_i[:, a] : a in H} (+ means); a
second pass left-projects pair slices against that space, which kills every
rank-one cross term and leaves span{vec(P Sigma_i)}.  Two disjoint index
sets give two such projected spans, and the merge solves a small alignment
problem to undo the projections.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Any, Sequence

import numpy as np

from .diagnostics import RunLog, SpanDiagnostics, spectrum_row
from .errors import (
    DimensionTooSmall,
    IndexOutOfRange,
    MergeIllConditioned,
    RankDeficient,
)
from .indexing import binom
from .linalg import eigh_desc, fix_signs, svd_basis
from .moments import MomentSet, sym_to_iso


@dataclass
class Subspace:
    """Orthonormal basis with a tag naming the ambient coordinate system."""

    basis: np.ndarray
    ambient: str = ""

    def __post_init__(self):
        self.basis = np.asarray(self.basis, dtype=float)
        if self.basis.ndim != 2:
            raise ValueError("basis must be a 2-d array of columns")
        gram = self.basis.T @ self.basis
        if not np.allclose(gram, np.eye(self.dim), atol=1e-8):
            raise ValueError("basis columns are not orthonormal")

    @property
    def dim(self) -> int:
        return self.basis.shape[1]

    @property
    def ambient_dim(self) -> int:
        return self.basis.shape[0]

    def projector(self) -> np.ndarray:
        return self.basis @ self.basis.T

    def project_out(self, x: np.ndarray) -> np.ndarray:
        return x - self.basis @ (self.basis.T @ x)

    def complement_basis(self) -> np.ndarray:
        from .linalg import orth_complement

        return orth_complement(self.basis)

    def distance(self, other: "Subspace") -> float:
        """Largest principal-angle sine between the two spans."""
        if other.ambient_dim != self.ambient_dim:
            raise ValueError("subspaces live in different ambient spaces")
        d = max(
            float(np.linalg.norm(self.project_out(other.basis), 2)),
            float(np.linalg.norm(other.project_out(self.basis), 2)),
        )
        return d


@dataclass
class IndexSets:
    """The two disjoint coordinate sets driving the span runs, plus how
    slice columns are enumerated from each."""

    h1: tuple[int, ...]
    h2: tuple[int, ...]
    columns: str = "multiset"  # or "partition"
    order6_slice1: bool = False
    order6_slice2: bool = False

    @property
    def h_size(self) -> int:
        return len(self.h1)

    def to_dict(self) -> dict[str, Any]:
        return {
            "h1": list(self.h1),
            "h2": list(self.h2),
            "columns": self.columns,
            "order6_slice1": self.order6_slice1,
            "order6_slice2": self.order6_slice2,
        }


def _rank_target(k: int, h: int, mode: str, centered: bool = False) -> int:
    if centered:
        # the weighted covariance deviations sum to zero, losing one matrix
        # worth of column rank
        return (k - 1) * h
    return k * h if mode == "zero_mean" else k * (h + 1)


def _slice1_count(h: int, columns: str) -> int:
    if columns == "partition":
        sizes = [len(p) for p in np.array_split(np.arange(h), 3)]
        return int(np.prod(sizes))
    return binom(h + 2, 3)


def choose_index_sets(
    n: int,
    k: int,
    mode: str,
    order6_available: bool,
    columns: str = "multiset",
    h_size: int | None = None,
    centered: bool = False,
) -> IndexSets:
    """Pick the largest index-set size h such that both span runs have
    enough columns and the merge still has room (2 * rank + 1 <= n).

    Order-6 slice columns are mixed in only when the order-4 slices alone
    cannot reach the needed rank with a column of headroom.  Centered runs
    have no order-6 counterpart, so augmentation stays off there.
    """
    if mode not in ("zero_mean", "general"):
        raise ValueError(f"unknown mode {mode!r}")
    if columns not in ("multiset", "partition"):
        raise ValueError(f"unknown column scheme {columns!r}")
    can6 = order6_available and n >= 6 and not centered
    k_proj = k - 1 if centered else k

    def build(h: int) -> IndexSets:
        c3 = _slice1_count(h, columns)
        r = _rank_target(k, h, mode, centered)
        aug1 = can6 and c3 < r + k
        aug2 = can6 and binom(h + 1, 2) < k_proj + 1
        return IndexSets(
            tuple(range(h)), tuple(range(h, 2 * h)), columns, aug1, aug2
        )

    if h_size is not None:
        if h_size < 1 or 2 * h_size > n:
            raise DimensionTooSmall(
                f"index sets of size {h_size} do not fit in dimension {n}"
            )
        # explicit sizes skip the rank feasibility gate; an infeasible choice
        # runs anyway and surfaces as RankDeficient in the diagnostics
        return build(h_size)

    best = None
    for h in range(1, n // 2 + 1):
        r = _rank_target(k, h, mode, centered)
        if 2 * r + 1 > n:
            break
        cols3 = _slice1_count(h, columns)
        if cols3 < r + k and can6:
            cols3 += binom(h + 4, 5)
        if cols3 < r:
            continue
        cols2 = binom(h + 1, 2)
        if cols2 < k_proj + 1 and can6:
            cols2 += binom(h + 3, 4)
        if cols2 < k_proj:
            continue
        best = h
    if best is None:
        raise DimensionTooSmall(
            f"no feasible index-set size for n={n}, k={k} in {mode} mode"
        )
    return build(best)


def _rescale_group(
    ref_cols: Sequence[np.ndarray], other_cols: Sequence[np.ndarray]
) -> list[np.ndarray]:
    """Rescale a block of columns so its median norm matches the reference
    block's.

    Column scaling leaves the span untouched, but it keeps a block whose
    entries live on a different moment scale (order-6 slices next to order-4
    ones) from dominating the singular spectrum.  That matters for sampled
    moments, where the per-entry noise is proportional to the entry scale.
    """
    if not other_cols:
        return []
    ref = np.median([np.linalg.norm(c) for c in ref_cols])
    other = np.median([np.linalg.norm(c) for c in other_cols])
    if other <= 0.0 or ref <= 0.0:
        return list(other_cols)
    scale = ref / other
    return [c * scale for c in other_cols]


def _slice1_tuples(h: Sequence[int], columns: str) -> list[tuple[int, int, int]]:
    idx = list(h)
    if columns == "partition":
        parts = [list(p) for p in np.array_split(np.asarray(idx), 3)]
        return [tuple(t) for t in itertools.product(*parts)]
    return list(itertools.combinations_with_replacement(idx, 3))


def _validate_indices(h: Sequence[int], n: int) -> list[int]:
    idx = [int(a) for a in h]
    if len(set(idx)) != len(idx):
        raise ValueError("index set has repeated entries")
    for a in idx:
        if a < 0 or a >= n:
            raise IndexOutOfRange(f"index {a} outside dimension {n}")
    return idx


def find_column_span(
    moments: MomentSet,
    k: int,
    h_indices: Sequence[int],
    mode: str,
    *,
    columns: str = "multiset",
    use_order6: bool = False,
    centered: bool = False,
    rank_tol: float = 1e-9,
    log: RunLog | None = None,
    step: str = "qs",
) -> tuple[Subspace, dict[str, Any]]:
    """First span pass: stack order-4 (and optionally order-6) slices over
    the index set and keep the top singular directions."""
    log = log or RunLog()
    if centered and use_order6:
        raise ValueError("centered slices have no order-6 augmentation")
    n = moments.n
    idx = _validate_indices(h_indices, n)
    r = _rank_target(k, len(idx), mode, centered)

    slice1 = moments.m4_slice1_centered if centered else moments.m4_slice1
    cols4 = [slice1(a, b, c) for a, b, c in _slice1_tuples(idx, columns)]
    cols6 = []
    if use_order6:
        for t in itertools.combinations_with_replacement(idx, 5):
            cols6.append(moments.m6_slice1(*t))
    q = np.column_stack(cols4 + _rescale_group(cols4, cols6))

    avail = min(q.shape)
    basis, sing = svd_basis(q, min(r, avail))
    row = spectrum_row(step, r, sing, rank_tol)
    log.add_row("span", row)
    if row["sigma_r"] <= rank_tol * max(sing[0] if sing.size else 0.0, 1e-300):
        log.problem(
            RankDeficient,
            step,
            f"column span needs rank {r} but sigma_{r} is "
            f"{row['sigma_r']:.3e} (top {sing[0] if sing.size else 0.0:.3e})",
            rank_target=r,
            columns=q.shape[1],
        )
    return Subspace(basis, "n"), row


def find_projected_sigma_span(
    moments: MomentSet,
    k: int,
    h_indices: Sequence[int],
    s_span: Subspace,
    mode: str,
    *,
    use_order6: bool = False,
    centered: bool = False,
    rank_tol: float = 1e-9,
    log: RunLog | None = None,
    step: str = "qus",
) -> tuple[Subspace, dict[str, Any]]:
    """Second span pass: left-project pair slices against the column span.

    Every mixture term carrying a covariance column or a mean in its left
    factor is annihilated, so the k surviving directions are the vectorized
    left-projected covariances.  Both fixed indices must come from the index
    set: the rank-one terms of a pair slice involve the covariance columns at
    the fixed indices, and the projection only annihilates those columns when
    they are covered by the first-pass span.
    """
    log = log or RunLog()
    if centered and use_order6:
        raise ValueError("centered slices have no order-6 augmentation")
    n = moments.n
    idx = _validate_indices(h_indices, n)
    s = s_span.basis
    rank = k - 1 if centered else k

    def projected(mat: np.ndarray) -> np.ndarray:
        return (mat - s @ (s.T @ mat)).reshape(-1)

    slice2 = moments.m4_slice2_centered if centered else moments.m4_slice2
    cols4 = [
        projected(slice2(a, b))
        for a, b in itertools.combinations_with_replacement(idx, 2)
    ]
    cols6 = []
    if use_order6:
        for t in itertools.combinations_with_replacement(idx, 4):
            cols6.append(projected(moments.m6_slice2(*t)))
    q = np.column_stack(cols4 + _rescale_group(cols4, cols6))

    avail = min(q.shape)
    basis, sing = svd_basis(q, min(rank, avail))
    row = spectrum_row(step, rank, sing, rank_tol)
    log.add_row("span", row)
    if row["sigma_r"] <= rank_tol * max(sing[0] if sing.size else 0.0, 1e-300):
        log.problem(
            RankDeficient,
            step,
            f"projected span needs rank {rank} but sigma_{rank} is "
            f"{row['sigma_r']:.3e}",
            rank_target=rank,
            columns=q.shape[1],
        )
    return Subspace(basis, "vec"), row


@dataclass
class MergeResult:
    raw_basis: np.ndarray  # (n * lift, k) orthonormal, before symmetrization
    u: Subspace | None = None  # zero-mean: k-dim span in iso coordinates
    z: Subspace | None = None  # general: mean span in R^n
    sigma_o: Subspace | None = None  # general: projected-covariance span (iso)
    sigma_s1s2: float = 0.0
    sigma_proj_b3: float = 0.0
    rows: list[dict[str, Any]] = field(default_factory=list)


def _merge_lifted(
    s1: np.ndarray,
    s2: np.ndarray,
    u1: np.ndarray,
    u2: np.ndarray,
    k_null: int,
    rank_tol: float,
    log: RunLog,
) -> tuple[np.ndarray, np.ndarray | None, float, float, list[dict[str, Any]]]:
    """Undo the two left projections.

    u1, u2 hold vectorized (n, lift) matrices.  With S3 the complement of
    [S1, S2], left-multiplying by S3^T maps both projected spans onto the
    same space, which fixes the change of basis V; then (P1 + P2) applied to
    matrices is inverted by its pseudo-inverse, whose null space (if k_null
    is positive) is exactly S1 ^ S2.
    """
    n = s1.shape[0]
    k = u1.shape[1]
    lift = u1.shape[0] // n
    if u1.shape[0] != n * lift:
        raise ValueError("lifted columns do not factor over the base dimension")
    rows: list[dict[str, Any]] = []

    stacked = np.hstack([s1, s2])
    two_s = stacked.shape[1]
    if two_s >= n:
        raise DimensionTooSmall(
            f"merge needs 2s < n but got s1+s2 dims {two_s} in dimension {n}"
        )
    # in general mode the two spans share the k_null mean directions, so the
    # stack's expected rank is 2s - k_null
    stack_rank = two_s - k_null
    u_full, sv, _ = np.linalg.svd(stacked, full_matrices=True)
    sigma_s1s2 = float(sv[stack_rank - 1]) if sv.size >= stack_rank else 0.0
    rows.append(spectrum_row("merge_s1s2", stack_rank, sv, rank_tol))
    if sigma_s1s2 <= rank_tol * max(float(sv[0]) if sv.size else 0.0, 1e-300):
        log.problem(
            MergeIllConditioned,
            "merge",
            f"[S1, S2] nearly rank deficient (sigma_{stack_rank}={sigma_s1s2:.3e})",
        )
    s3 = fix_signs(u_full[:, two_s:])

    def lift_apply(mat_left: np.ndarray, u: np.ndarray) -> np.ndarray:
        out = np.empty((mat_left.shape[0] * lift, u.shape[1]))
        for j in range(u.shape[1]):
            out[:, j] = (mat_left @ u[:, j].reshape(n, lift)).reshape(-1)
        return out

    b3_u1 = lift_apply(s3.T, u1)
    b3_u2 = lift_apply(s3.T, u2)
    sv1 = np.linalg.svd(b3_u1, compute_uv=False)
    sigma_proj_b3 = float(sv1[k - 1]) if sv1.size >= k else 0.0
    rows.append(spectrum_row("merge_b3u1", k, sv1, rank_tol))
    if sigma_proj_b3 <= rank_tol * max(float(sv1[0]) if sv1.size else 0.0, 1e-300):
        log.problem(
            MergeIllConditioned,
            "merge",
            f"basis alignment ill posed (sigma_{k}(B3^T U1)={sigma_proj_b3:.3e})",
        )
    v_align, *_ = np.linalg.lstsq(b3_u1, b3_u2, rcond=None)

    m = 2.0 * np.eye(n) - s1 @ s1.T - s2 @ s2.T
    eigvals, eigvecs = eigh_desc(m)
    cutoff = rank_tol * max(eigvals[0], 1e-300)
    keep = n - k_null
    if k_null > 0:
        gap_ok = eigvals[keep - 1] > cutoff and abs(eigvals[keep]) <= max(
            np.sqrt(cutoff * max(eigvals[keep - 1], 1e-300)), cutoff
        )
        z_basis = fix_signs(eigvecs[:, keep:])
        if not gap_ok:
            log.problem(
                MergeIllConditioned,
                "merge",
                "null space of P1 + P2 is not cleanly separated "
                f"(kept eig {eigvals[keep - 1]:.3e}, dropped {eigvals[keep]:.3e})",
            )
    else:
        z_basis = None
        if eigvals[-1] <= cutoff:
            keep = int(np.sum(eigvals > cutoff))
            log.problem(
                MergeIllConditioned,
                "merge",
                f"P1 + P2 unexpectedly singular (smallest eig {eigvals[-1]:.3e})",
            )

    inv_vals = 1.0 / eigvals[:keep]
    vk = eigvecs[:, :keep]
    rhs = u1 @ v_align + u2
    merged = np.empty_like(rhs)
    for j in range(k):
        mat = rhs[:, j].reshape(n, lift)
        merged[:, j] = (vk @ (inv_vals[:, None] * (vk.T @ mat))).reshape(-1)

    basis, sing = svd_basis(merged, k)
    rows.append(spectrum_row("merge_span", k, sing, rank_tol))
    if (sing.size < k) or sing[k - 1] <= rank_tol * max(sing[0], 1e-300):
        log.problem(
            MergeIllConditioned,
            "merge",
            f"merged span collapsed (sigma_{k}={sing[k - 1] if sing.size >= k else 0.0:.3e})",
        )
    return basis, z_basis, sigma_s1s2, sigma_proj_b3, rows


def _sym_iso_basis(raw_basis: np.ndarray, n: int) -> Subspace:
    cols = []
    for j in range(raw_basis.shape[1]):
        mat = raw_basis[:, j].reshape(n, n)
        cols.append(sym_to_iso(0.5 * (mat + mat.T)))
    stacked = np.column_stack(cols)
    basis, _ = svd_basis(stacked, raw_basis.shape[1])
    return Subspace(basis, "iso")


def merge_projections(
    s1: Subspace,
    s2: Subspace,
    u1: Subspace,
    u2: Subspace,
    mode: str,
    *,
    rank_tol: float = 1e-9,
    log: RunLog | None = None,
) -> MergeResult:
    """Combine the two projected covariance spans into the unprojected one.

    Zero-mean mode returns the k-dimensional span of the vectorized
    covariances (in isometric symmetric coordinates).  General mode returns
    the mean span Z (the joint null space of the two projections) plus the
    span of the covariances compressed to the complement of Z.
    """
    log = log or RunLog()
    if mode not in ("zero_mean", "general"):
        raise ValueError(f"unknown mode {mode!r}")
    k = u1.dim
    n = s1.ambient_dim
    k_null = 0 if mode == "zero_mean" else k
    raw, z_basis, sig_s, sig_b3, rows = _merge_lifted(
        s1.basis, s2.basis, u1.basis, u2.basis, k_null, rank_tol, log
    )
    res = MergeResult(
        raw_basis=raw,
        sigma_s1s2=sig_s,
        sigma_proj_b3=sig_b3,
        rows=rows,
    )
    lift = raw.shape[0] // n
    if mode == "zero_mean":
        if lift == n:
            res.u = _sym_iso_basis(raw, n)
        return res

    res.z = Subspace(z_basis, "n")
    if lift == n:
        proj = np.eye(n) - z_basis @ z_basis.T
        cols = []
        for j in range(raw.shape[1]):
            mat = raw[:, j].reshape(n, n) @ proj
            cols.append(sym_to_iso(0.5 * (mat + mat.T)))
        basis, _ = svd_basis(np.column_stack(cols), k)
        res.sigma_o = Subspace(basis, "iso")
    return res


@dataclass
class SpanResult:
    mode: str
    index_sets: IndexSets
    u: Subspace | None
    z: Subspace | None
    sigma_o: Subspace | None
    diagnostics: SpanDiagnostics
    merge: MergeResult


def find_matrix_span(
    moments: MomentSet,
    k: int,
    mode: str,
    *,
    index_sets: IndexSets | None = None,
    columns: str = "multiset",
    h_size: int | None = None,
    centered: bool = False,
    rank_tol: float = 1e-9,
    log: RunLog | None = None,
) -> SpanResult:
    """Full span stage: two disjoint index-set runs plus the merge.

    With centered=True (zero-mean mode, k >= 2) the slices have the mixture
    second moment's Wick part removed, so the two passes track the k - 1
    dimensional span of the covariance deviations; the full covariance span
    is that plus the mixture covariance itself, which is estimated directly.
    Centering leaves exact moments untouched in principle but removes the
    scale shared by all components, which is what dominates the sampling
    noise of the raw slices.
    """
    log = log or RunLog()
    if centered:
        if mode != "zero_mean":
            raise ValueError("centered span finding applies to zero-mean mode")
        if k < 2:
            raise ValueError("centered span finding needs k >= 2")
    n = moments.n
    order6_ok = moments.supports_order6_slices
    idx = index_sets or choose_index_sets(
        n, k, mode, order6_ok, columns=columns, h_size=h_size, centered=centered
    )
    if (idx.order6_slice1 or idx.order6_slice2) and not order6_ok:
        raise ValueError("index sets request order-6 slices but none are available")

    spans = []
    projected = []
    qs_rows = []
    qus_rows = []
    for tag, h in (("h1", idx.h1), ("h2", idx.h2)):
        s_span, row_s = find_column_span(
            moments,
            k,
            h,
            mode,
            columns=idx.columns,
            use_order6=idx.order6_slice1,
            centered=centered,
            rank_tol=rank_tol,
            log=log,
            step=f"qs_{tag}",
        )
        u_span, row_u = find_projected_sigma_span(
            moments,
            k,
            h,
            s_span,
            mode,
            use_order6=idx.order6_slice2,
            centered=centered,
            rank_tol=rank_tol,
            log=log,
            step=f"qus_{tag}",
        )
        spans.append(s_span)
        projected.append(u_span)
        qs_rows.append(row_s)
        qus_rows.append(row_u)

    merge = merge_projections(
        spans[0], spans[1], projected[0], projected[1], mode,
        rank_tol=rank_tol, log=log,
    )
    diag = SpanDiagnostics(
        sigma_qs=min(r["sigma_r"] for r in qs_rows),
        sigma_qus=min(r["sigma_r"] for r in qus_rows),
        sigma_s1s2=merge.sigma_s1s2,
        sigma_proj_b3=merge.sigma_proj_b3,
    )
    for row in merge.rows:
        log.add_row("span", row)

    u = merge.u
    if centered and u is not None:
        u_sigma = sym_to_iso(moments.second_moment())
        norm = np.linalg.norm(u_sigma)
        if norm > 0.0:
            u_sigma = u_sigma / norm
        stacked = np.column_stack([u_sigma, u.basis])
        basis, sing = svd_basis(stacked, k)
        row = spectrum_row("u_assemble", k, sing, rank_tol)
        log.add_row("span", row)
        if row["sigma_r"] <= rank_tol * max(sing[0] if sing.size else 0.0, 1e-300):
            log.problem(
                RankDeficient,
                "u_assemble",
                "mixture covariance lies inside the deviation span "
                f"(sigma_{k}={row['sigma_r']:.3e})",
                rank_target=k,
            )
        u = Subspace(basis, "iso")

    return SpanResult(
        mode=mode,
        index_sets=idx,
        u=u,
        z=merge.z,
        sigma_o=merge.sigma_o,
        diagnostics=diag,
        merge=merge,
    )
