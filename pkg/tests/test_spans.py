"""Span finding: index-set selection, the two slice passes, and the merge.

Ground-truth subspaces are assembled directly from the generating parameters
(covariance columns, vectorized deviations, mean spans), so every distance
assertion checks the estimator against geometry it never saw.
"""

import itertools

import numpy as np
import pytest

from mixmom.errors import DimensionTooSmall, IndexOutOfRange
from mixmom.linalg import eigh_desc, fix_signs, orth_complement, psd_pinv_apply, svd_basis
from mixmom.model import GmmParams
from mixmom.moments import exact_moments, sym_to_iso
from mixmom.spans import (
    IndexSets,
    Subspace,
    choose_index_sets,
    find_column_span,
    find_matrix_span,
    find_projected_sigma_span,
    merge_projections,
)

from oracle import rand_orthonormal, rand_psd


def mixture(seed=0, n=10, k=2, zero_mean=True, scale=0.3, spread=0.25):
    rng = np.random.default_rng(seed)
    w = rng.uniform(0.3, 1.0, size=k)
    w /= w.sum()
    means = np.zeros((k, n)) if zero_mean else rng.normal(0.0, spread, size=(k, n))
    covs = np.stack([rand_psd(rng, n, scale=scale) for _ in range(k)])
    return GmmParams(w, means, covs)


def span_of(cols, ambient=""):
    mat = np.column_stack(cols)
    basis, _ = svd_basis(mat, np.linalg.matrix_rank(mat, tol=1e-10))
    return Subspace(basis, ambient)


def true_s_span(p, h, mode):
    cols = [p.covariances[i][:, a] for i in range(p.k) for a in h]
    if mode == "general":
        cols += [p.means[i] for i in range(p.k)]
    return span_of(cols, "n")


class TestLinalgHelpers:
    def test_fix_signs_makes_leading_entry_positive(self):
        b = np.array([[0.0, -2.0], [-1.0, 1.0]])
        f = fix_signs(b)
        assert f[1, 0] > 0 and f[0, 1] > 0

    def test_fix_signs_idempotent(self):
        rng = np.random.default_rng(0)
        b = rng.normal(size=(6, 3))
        np.testing.assert_array_equal(fix_signs(fix_signs(b)), fix_signs(b))

    def test_orth_complement(self):
        rng = np.random.default_rng(1)
        b = rand_orthonormal(rng, 7, 3)
        c = orth_complement(b)
        assert c.shape == (7, 4)
        np.testing.assert_allclose(c.T @ c, np.eye(4), atol=1e-12)
        np.testing.assert_allclose(b.T @ c, 0.0, atol=1e-12)

    def test_eigh_desc_order(self):
        rng = np.random.default_rng(2)
        a = rand_psd(rng, 5)
        w, v = eigh_desc(a)
        assert np.all(np.diff(w) <= 1e-15)
        np.testing.assert_allclose(v @ np.diag(w) @ v.T, a, atol=1e-12)

    def test_psd_pinv_apply(self):
        rng = np.random.default_rng(3)
        b = rand_orthonormal(rng, 6, 4)
        g = b @ np.diag([4.0, 3.0, 2.0, 1.0]) @ b.T  # rank 4 in dim 6
        rhs = rng.normal(size=(6, 2))
        x, w = psd_pinv_apply(g, rhs)
        np.testing.assert_allclose(g @ x, b @ b.T @ rhs, atol=1e-10)
        assert w.shape == (6,)


class TestSubspace:
    def test_rejects_non_orthonormal(self):
        with pytest.raises(ValueError):
            Subspace(np.ones((4, 2)))

    def test_distance_extremes(self):
        e = np.eye(5)
        a = Subspace(e[:, :2])
        assert a.distance(a) < 1e-12
        assert Subspace(e[:, :2]).distance(Subspace(e[:, 2:4])) == pytest.approx(1.0)

    def test_distance_is_principal_angle_sine(self):
        t = 0.3
        a = Subspace(np.array([[1.0], [0.0]]))
        b = Subspace(np.array([[np.cos(t)], [np.sin(t)]]))
        assert a.distance(b) == pytest.approx(np.sin(t), abs=1e-12)

    def test_projector_and_project_out(self):
        rng = np.random.default_rng(4)
        s = Subspace(rand_orthonormal(rng, 6, 2))
        x = rng.normal(size=6)
        np.testing.assert_allclose(
            s.projector() @ x + s.project_out(x), x, atol=1e-12
        )
        assert np.abs(s.basis.T @ s.project_out(x)).max() < 1e-12

    def test_mismatched_ambient_rejected(self):
        with pytest.raises(ValueError):
            Subspace(np.eye(4)[:, :1]).distance(Subspace(np.eye(5)[:, :1]))


class TestChooseIndexSets:
    def test_zero_mean_16_3(self):
        # rank 3h and merge room 2r+1 <= 16 force h = 2; the order-4 column
        # counts (4 slice-1 columns against rank 6 + k) need the order-6 help
        idx = choose_index_sets(16, 3, "zero_mean", order6_available=True)
        assert idx.h_size == 2
        assert idx.order6_slice1 and idx.order6_slice2
        assert idx.h1 == (0, 1) and idx.h2 == (2, 3)

    def test_zero_mean_16_2(self):
        idx = choose_index_sets(16, 2, "zero_mean", order6_available=True)
        assert idx.h_size == 3
        assert not idx.order6_slice1 and not idx.order6_slice2

    def test_zero_mean_10_2(self):
        idx = choose_index_sets(10, 2, "zero_mean", order6_available=True)
        assert idx.h_size == 2
        assert idx.order6_slice1 and not idx.order6_slice2

    def test_general_20_2(self):
        idx = choose_index_sets(20, 2, "general", order6_available=True)
        assert idx.h_size == 3
        assert not idx.order6_slice1 and not idx.order6_slice2

    def test_general_12_2_infeasible(self):
        with pytest.raises(DimensionTooSmall):
            choose_index_sets(12, 2, "general", order6_available=True)

    def test_without_order6_needs_more_room(self):
        # (16, 3) cannot reach rank 6 from 4 order-4 columns alone
        with pytest.raises(DimensionTooSmall):
            choose_index_sets(16, 3, "zero_mean", order6_available=False)

    def test_centered_never_uses_order6(self):
        idx = choose_index_sets(
            10, 2, "zero_mean", order6_available=True, centered=True
        )
        assert not idx.order6_slice1 and not idx.order6_slice2
        # deviation rank target is (k-1) h = h, so h can grow to 4
        assert idx.h_size == 4

    def test_explicit_h_size(self):
        idx = choose_index_sets(16, 2, "zero_mean", True, h_size=5)
        assert idx.h1 == (0, 1, 2, 3, 4)
        assert idx.h2 == (5, 6, 7, 8, 9)

    def test_explicit_h_size_must_fit(self):
        with pytest.raises(DimensionTooSmall):
            choose_index_sets(16, 2, "zero_mean", True, h_size=9)

    def test_bad_mode_and_columns(self):
        with pytest.raises(ValueError):
            choose_index_sets(16, 2, "both", True)
        with pytest.raises(ValueError):
            choose_index_sets(16, 2, "zero_mean", True, columns="rows")


class TestColumnSpan:
    def test_zero_mean_exact_recovers_covariance_columns(self):
        p = mixture(seed=5, n=10, k=2)
        ms = exact_moments(p, orders=(4, 6))
        h = [0, 1, 2]
        span, row = find_column_span(ms, 2, h, "zero_mean")
        truth = true_s_span(p, h, "zero_mean")
        assert span.dim == truth.dim == 6
        assert span.distance(truth) < 1e-9
        assert row["sigma_r"] > 0

    def test_general_exact_includes_means(self):
        p = mixture(seed=6, n=12, k=2, zero_mean=False)
        ms = exact_moments(p, orders=(3, 4, 6))
        h = [0, 1, 2]
        span, _ = find_column_span(ms, 2, h, "general")
        truth = true_s_span(p, h, "general")
        assert span.dim == truth.dim == 8  # k (h + 1)
        assert span.distance(truth) < 1e-9

    def test_order6_augmentation_keeps_span(self):
        p = mixture(seed=7, n=16, k=3)
        ms = exact_moments(p, orders=(4, 6))
        h = [0, 1]
        span, _ = find_column_span(ms, 3, h, "zero_mean", use_order6=True)
        truth = true_s_span(p, h, "zero_mean")
        assert span.distance(truth) < 1e-8

    def test_centered_tracks_deviations(self):
        p = mixture(seed=8, n=10, k=3)
        ms = exact_moments(p, orders=(4, 6))
        b = ms.second_moment()
        h = [0, 1, 2]
        span, _ = find_column_span(ms, 3, h, "zero_mean", centered=True)
        truth = span_of(
            [(p.covariances[i] - b)[:, a] for i in range(3) for a in h], "n"
        )
        assert span.dim == truth.dim == 6  # (k - 1) h
        assert span.distance(truth) < 1e-9

    def test_centered_rejects_order6(self):
        p = mixture(seed=8, n=10, k=2)
        ms = exact_moments(p, orders=(4, 6))
        with pytest.raises(ValueError):
            find_column_span(ms, 2, [0, 1], "zero_mean", centered=True,
                             use_order6=True)

    def test_repeated_indices_rejected(self):
        p = mixture(seed=9, n=8, k=2)
        ms = exact_moments(p, orders=(4,))
        with pytest.raises(ValueError):
            find_column_span(ms, 2, [0, 0, 1], "zero_mean")
        with pytest.raises(IndexOutOfRange):
            find_column_span(ms, 2, [0, 8], "zero_mean")


class TestProjectedSigmaSpan:
    def test_zero_mean_exact(self):
        p = mixture(seed=10, n=10, k=2)
        ms = exact_moments(p, orders=(4, 6))
        h = [0, 1, 2]
        s_span, _ = find_column_span(ms, 2, h, "zero_mean")
        u_span, row = find_projected_sigma_span(ms, 2, h, s_span, "zero_mean")
        proj = np.eye(10) - s_span.projector()
        truth = span_of([(proj @ p.covariances[i]).reshape(-1) for i in range(2)])
        assert u_span.dim == 2
        assert u_span.distance(truth) < 1e-9

    def test_centered_exact(self):
        p = mixture(seed=11, n=10, k=2)
        ms = exact_moments(p, orders=(4, 6))
        b = ms.second_moment()
        h = [0, 1, 2, 3]
        s_span, _ = find_column_span(ms, 2, h, "zero_mean", centered=True)
        u_span, _ = find_projected_sigma_span(
            ms, 2, h, s_span, "zero_mean", centered=True
        )
        proj = np.eye(10) - s_span.projector()
        truth = span_of(
            [(proj @ (p.covariances[i] - b)).reshape(-1) for i in range(2)]
        )
        assert u_span.dim == 1  # k - 1
        assert u_span.distance(truth) < 1e-9


class TestMerge:
    def build_zero_mean_inputs(self, seed, n=10, k=2):
        # keep 2s < n so the merge has a complement to align bases in
        p = mixture(seed=seed, n=n, k=k)
        h1 = list(range(2))
        h2 = list(range(2, 4))
        s1 = true_s_span(p, h1, "zero_mean")
        s2 = true_s_span(p, h2, "zero_mean")
        u_cols = lambda s: [
            ((np.eye(n) - s.projector()) @ p.covariances[i]).reshape(-1)
            for i in range(k)
        ]
        return p, s1, s2, span_of(u_cols(s1)), span_of(u_cols(s2))

    @pytest.mark.parametrize("seed", range(5))
    def test_zero_mean_identity(self, seed):
        # synthetic construction: feed the merge the true projected spans and
        # check it reproduces the unprojected covariance span
        p, s1, s2, u1, u2 = self.build_zero_mean_inputs(seed)
        res = merge_projections(s1, s2, u1, u2, "zero_mean")
        truth = span_of([sym_to_iso(c) for c in p.covariances], "iso")
        assert res.u.distance(truth) < 1e-10
        assert res.z is None

    def test_zero_mean_identity_k3(self):
        p, s1, s2, u1, u2 = self.build_zero_mean_inputs(21, n=14, k=3)
        res = merge_projections(s1, s2, u1, u2, "zero_mean")
        truth = span_of([sym_to_iso(c) for c in p.covariances], "iso")
        assert res.u.distance(truth) < 1e-10

    def test_basis_freedom_does_not_matter(self):
        # rotate u1's basis arbitrarily; the merged span must not move
        p, s1, s2, u1, u2 = self.build_zero_mean_inputs(3)
        rng = np.random.default_rng(99)
        rot, _ = np.linalg.qr(rng.normal(size=(2, 2)))
        u1_rot = Subspace(fix_signs(u1.basis @ rot))
        a = merge_projections(s1, s2, u1, u2, "zero_mean")
        b = merge_projections(s1, s2, u1_rot, u2, "zero_mean")
        assert a.u.distance(b.u) < 1e-10

    def test_merge_needs_room(self):
        # 2s >= n leaves no complement to align the bases in
        rng = np.random.default_rng(12)
        n = 8
        s1 = Subspace(rand_orthonormal(rng, n, 4))
        s2 = Subspace(rand_orthonormal(rng, n, 4))
        u1 = Subspace(rand_orthonormal(rng, n * n, 2))
        u2 = Subspace(rand_orthonormal(rng, n * n, 2))
        with pytest.raises(DimensionTooSmall):
            merge_projections(s1, s2, u1, u2, "zero_mean")

    def test_unknown_mode_rejected(self):
        p, s1, s2, u1, u2 = self.build_zero_mean_inputs(4)
        with pytest.raises(ValueError):
            merge_projections(s1, s2, u1, u2, "mixed")


class TestFindMatrixSpan:
    def test_zero_mean_exact(self):
        p = mixture(seed=13, n=16, k=3)
        ms = exact_moments(p, orders=(4, 6))
        res = find_matrix_span(ms, 3, "zero_mean")
        truth = span_of([sym_to_iso(c) for c in p.covariances], "iso")
        assert res.u.dim == 3
        assert res.u.distance(truth) < 1e-8
        assert res.z is None and res.sigma_o is None
        assert res.diagnostics.sigma_qs > 0

    def test_zero_mean_centered_exact(self):
        p = mixture(seed=14, n=10, k=2)
        ms = exact_moments(p, orders=(4, 6))
        res = find_matrix_span(ms, 2, "zero_mean", centered=True)
        truth = span_of([sym_to_iso(c) for c in p.covariances], "iso")
        assert res.u.dim == 2
        assert res.u.distance(truth) < 1e-8

    def test_general_exact(self):
        p = mixture(seed=15, n=20, k=2, zero_mean=False)
        ms = exact_moments(p, orders=(3, 4, 6))
        res = find_matrix_span(ms, 2, "general")
        z_truth = span_of([p.means[i] for i in range(2)], "n")
        assert res.z.dim == 2
        assert res.z.distance(z_truth) < 1e-8
        proj = np.eye(20) - z_truth.projector()
        o_truth = span_of(
            [sym_to_iso(proj @ p.covariances[i] @ proj) for i in range(2)], "iso"
        )
        assert res.sigma_o.distance(o_truth) < 1e-7
        assert res.u is None

    def test_centered_requires_zero_mean_mode(self):
        p = mixture(seed=16, n=20, k=2, zero_mean=False)
        ms = exact_moments(p, orders=(3, 4, 6))
        with pytest.raises(ValueError):
            find_matrix_span(ms, 2, "general", centered=True)

    def test_centered_requires_two_components(self):
        p = mixture(seed=17, n=10, k=1)
        ms = exact_moments(p, orders=(4, 6))
        with pytest.raises(ValueError):
            find_matrix_span(ms, 1, "zero_mean", centered=True)

    def test_explicit_index_sets_respected(self):
        p = mixture(seed=18, n=16, k=2)
        ms = exact_moments(p, orders=(4, 6))
        idx = IndexSets((1, 3, 5), (2, 4, 6))
        res = find_matrix_span(ms, 2, "zero_mean", index_sets=idx)
        assert res.index_sets is idx
        truth = span_of([sym_to_iso(c) for c in p.covariances], "iso")
        assert res.u.distance(truth) < 1e-8

    def test_order6_request_without_support_rejected(self):
        p = mixture(seed=19, n=16, k=2)
        ms = exact_moments(p, orders=(4, 6))
        ms.params = None  # drop slice support
        idx = IndexSets((0, 1), (2, 3), order6_slice1=True)
        with pytest.raises(ValueError):
            find_matrix_span(ms, 2, "zero_mean", index_sets=idx)
