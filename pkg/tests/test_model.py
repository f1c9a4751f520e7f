"""Mixture parameters, smoothing perturbation, and sampling."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mixmom.errors import DegenerateCovariance, InvalidRho, PerturbationInfeasible
from mixmom.model import (
    GmmParams,
    SampleBatch,
    SmoothingConfig,
    normalize_for_smoothing,
    sample,
    smooth_perturb,
)

from oracle import rand_psd


def small_params(seed=0, n=4, k=2, zero_mean=False):
    # scaled to sit inside the pre-perturbation bounds (||mu|| <= 1/2, Sigma <= I/2)
    rng = np.random.default_rng(seed)
    w = rng.uniform(0.2, 1.0, size=k)
    w /= w.sum()
    means = np.zeros((k, n)) if zero_mean else rng.normal(0.0, 0.05, size=(k, n))
    covs = np.stack([rand_psd(rng, n, scale=0.08) for _ in range(k)])
    return GmmParams(w, means, covs)


class TestGmmParams:
    def test_shape_accessors(self):
        p = small_params(n=5, k=3)
        assert p.n == 5
        assert p.k == 3
        assert p.omega_min == p.weights.min()

    def test_rejects_negative_weight(self):
        with pytest.raises(ValueError):
            GmmParams(
                np.array([1.2, -0.2]),
                np.zeros((2, 3)),
                np.stack([np.eye(3)] * 2),
            )

    def test_rejects_unnormalized_weights(self):
        with pytest.raises(ValueError):
            GmmParams(
                np.array([0.5, 0.6]),
                np.zeros((2, 3)),
                np.stack([np.eye(3)] * 2),
            )

    def test_rejects_asymmetric_covariance(self):
        c = np.eye(3)
        c[0, 1] = 0.5
        with pytest.raises(DegenerateCovariance):
            GmmParams(np.array([1.0]), np.zeros((1, 3)), c[None])

    def test_rejects_indefinite_covariance(self):
        c = np.diag([1.0, -0.5, 1.0])
        with pytest.raises(DegenerateCovariance):
            GmmParams(np.array([1.0]), np.zeros((1, 3)), c[None])

    def test_check_false_skips_validation(self):
        c = np.diag([1.0, -0.5, 1.0])
        p = GmmParams(np.array([2.0]), np.zeros((1, 3)), c[None], check=False)
        assert p.k == 1

    def test_json_roundtrip(self):
        p = small_params(seed=3)
        q = GmmParams.from_json(p.to_json())
        np.testing.assert_allclose(q.weights, p.weights, rtol=0, atol=1e-15)
        np.testing.assert_allclose(q.means, p.means, rtol=0, atol=1e-15)
        np.testing.assert_allclose(q.covariances, p.covariances, rtol=0, atol=1e-15)

    def test_is_zero_mean(self):
        assert small_params(zero_mean=True).is_zero_mean()
        assert not small_params(zero_mean=False).is_zero_mean()

    def test_copy_is_deep(self):
        p = small_params()
        q = p.copy()
        q.means[0, 0] += 1.0
        assert p.means[0, 0] != q.means[0, 0]


class TestNormalize:
    def test_large_input_scaled_into_bounds(self):
        rng = np.random.default_rng(7)
        covs = np.stack([rand_psd(rng, 4, scale=9.0) for _ in range(2)])
        means = rng.normal(0.0, 3.0, size=(2, 4))
        p = GmmParams(np.array([0.5, 0.5]), means, covs)
        q, c = normalize_for_smoothing(p)
        assert 0 < c < 1
        for cov in q.covariances:
            assert np.linalg.eigvalsh(cov)[-1] <= 0.5 + 1e-12
        assert max(np.linalg.norm(m) for m in q.means) <= 0.5 + 1e-12
        # rescaling is x -> c x: means scale by c, covariances by c^2
        np.testing.assert_allclose(q.means, c * p.means, atol=1e-15)
        np.testing.assert_allclose(q.covariances, c * c * p.covariances, atol=1e-15)

    def test_idempotent_inside_bounds(self):
        p = small_params()
        q, c = normalize_for_smoothing(p)
        assert c == 1.0
        assert q is p


class TestSmoothingConfig:
    def test_negative_rho_rejected(self):
        with pytest.raises(InvalidRho):
            SmoothingConfig(rho=-0.01)

    def test_rho_at_upper_limit_rejected(self):
        p = small_params(n=16)
        cfg = SmoothingConfig(rho=1.0 / 4.0)  # exactly 1/sqrt(16)
        with pytest.raises(InvalidRho):
            smooth_perturb(p, cfg)

    def test_rho_just_below_limit_accepted(self):
        p = small_params(n=16)
        out = smooth_perturb(p, SmoothingConfig(rho=1.0 / 4.0 - 1e-9))
        assert out.n == 16


class TestSmoothPerturb:
    def test_rho_zero_is_identity(self):
        p = small_params()
        out = smooth_perturb(p, SmoothingConfig(rho=0.0))
        np.testing.assert_array_equal(out.weights, p.weights)
        np.testing.assert_array_equal(out.means, p.means)
        np.testing.assert_array_equal(out.covariances, p.covariances)

    def test_rho_zero_zero_mean_forces_means(self):
        p = small_params()
        out = smooth_perturb(p, SmoothingConfig(rho=0.0, zero_mean=True))
        np.testing.assert_array_equal(out.means, np.zeros_like(p.means))

    def test_diagonal_repair_value(self):
        # frozen by hand: boost = diag_margin * sqrt(n) * rho = 5 * 2 * 0.01 = 0.1
        n = 4
        p = GmmParams(
            np.array([1.0]), np.zeros((1, n)), np.zeros((1, n, n)), check=False
        )
        out = smooth_perturb(p, SmoothingConfig(rho=0.01, seed=11, zero_mean=True))
        np.testing.assert_allclose(np.diag(out.covariances[0]), 0.1, atol=1e-15)

    def test_diagonal_repair_preserves_original_diagonal(self):
        p = small_params(seed=5)
        cfg = SmoothingConfig(rho=0.02, seed=1)
        out = smooth_perturb(p, cfg)
        boost = cfg.diag_margin * np.sqrt(p.n) * cfg.rho
        for i in range(p.k):
            np.testing.assert_allclose(
                np.diag(out.covariances[i]),
                np.diag(p.covariances[i]) + boost,
                atol=1e-14,
            )

    def test_offdiagonal_noise_is_symmetric_and_bounded(self):
        p = small_params(seed=5, n=8)
        rho = 0.05
        out = smooth_perturb(p, SmoothingConfig(rho=rho, seed=2))
        for i in range(p.k):
            d = out.covariances[i] - p.covariances[i]
            np.testing.assert_allclose(d, d.T, atol=1e-15)
            off = d[~np.eye(8, dtype=bool)]
            # Gaussian tails: 6 sigma is overwhelming for 56 draws
            assert np.max(np.abs(off)) < 6 * rho

    def test_output_is_psd(self):
        p = small_params(seed=9, n=10, k=3)
        out = smooth_perturb(p, SmoothingConfig(rho=0.05, seed=3))
        for c in out.covariances:
            assert np.linalg.eigvalsh(c)[0] >= -1e-10

    def test_weights_untouched(self):
        p = small_params(seed=4)
        out = smooth_perturb(p, SmoothingConfig(rho=0.03, seed=8))
        np.testing.assert_array_equal(out.weights, p.weights)

    def test_general_mode_perturbs_means(self):
        p = small_params(seed=6)
        out = smooth_perturb(p, SmoothingConfig(rho=0.05, seed=5))
        d = out.means - p.means
        assert np.all(np.abs(d) > 0)
        assert np.max(np.abs(d)) < 6 * 0.05

    def test_deterministic_in_seed(self):
        p = small_params(seed=6)
        a = smooth_perturb(p, SmoothingConfig(rho=0.05, seed=5))
        b = smooth_perturb(p, SmoothingConfig(rho=0.05, seed=5))
        c = smooth_perturb(p, SmoothingConfig(rho=0.05, seed=6))
        np.testing.assert_array_equal(a.covariances, b.covariances)
        assert np.max(np.abs(a.covariances - c.covariances)) > 0

    def test_oversized_input_rejected(self):
        rng = np.random.default_rng(0)
        covs = np.stack([rand_psd(rng, 4, scale=5.0)])
        p = GmmParams(np.array([1.0]), np.zeros((1, 4)), covs)
        with pytest.raises(PerturbationInfeasible):
            smooth_perturb(p, SmoothingConfig(rho=0.05))

    @given(st.integers(min_value=0, max_value=50))
    @settings(max_examples=15, deadline=None)
    def test_perturbation_size_scales_with_rho(self, seed):
        p = small_params(seed=1, n=6)
        small = smooth_perturb(p, SmoothingConfig(rho=0.01, seed=seed))
        # off-diagonal deviation has standard deviation rho exactly
        d = small.covariances - p.covariances
        off = d[:, ~np.eye(6, dtype=bool)]
        assert np.max(np.abs(off)) < 6 * 0.01


class TestSampling:
    def test_shapes_and_labels(self):
        p = small_params(seed=2, n=5, k=3)
        batch = sample(p, 200, seed=4)
        assert batch.data.shape == (200, 5)
        assert batch.labels.shape == (200,)
        assert set(np.unique(batch.labels)) <= {0, 1, 2}
        assert batch.n_samples == 200
        assert batch.n == 5

    def test_deterministic_in_seed(self):
        p = small_params(seed=2)
        a = sample(p, 100, seed=9)
        b = sample(p, 100, seed=9)
        np.testing.assert_array_equal(a.data, b.data)

    def test_mean_clt_anchor(self):
        # single component: sample mean approaches mu at rate sigma/sqrt(N)
        n = 3
        mu = np.array([0.3, -0.2, 0.1])
        p = GmmParams(np.array([1.0]), mu[None], 0.04 * np.eye(n)[None])
        batch = sample(p, 200_000, seed=1)
        err = np.linalg.norm(batch.data.mean(axis=0) - mu)
        assert err < 5 * 0.2 * np.sqrt(n / 200_000)

    def test_covariance_clt_anchor(self):
        rng = np.random.default_rng(3)
        c = rand_psd(rng, 3, scale=0.3)
        p = GmmParams(np.array([1.0]), np.zeros((1, 3)), c[None])
        batch = sample(p, 400_000, seed=2)
        emp = batch.data.T @ batch.data / batch.n_samples
        assert np.max(np.abs(emp - c)) < 0.01

    def test_weight_proportions(self):
        p = small_params(seed=8, k=3)
        batch = sample(p, 100_000, seed=3)
        freq = np.bincount(batch.labels, minlength=3) / batch.n_samples
        np.testing.assert_allclose(freq, p.weights, atol=0.01)

    def test_degenerate_covariance_sampling(self):
        # rank-1 covariance must still sample (eigenvalue square root path)
        v = np.array([1.0, 2.0, -1.0])
        c = np.outer(v, v)
        p = GmmParams(np.array([1.0]), np.zeros((1, 3)), c[None])
        batch = sample(p, 1000, seed=5)
        # every sample lies on the line spanned by v (up to the clipped
        # zero-eigenvalue noise floor of the eigenvalue square root)
        coeff = batch.data @ v / (v @ v)
        np.testing.assert_allclose(batch.data, np.outer(coeff, v), atol=1e-6)

    def test_rejects_empty_batch(self):
        with pytest.raises(ValueError):
            sample(small_params(), 0, seed=0)

    def test_batch_rejects_nonfinite(self):
        with pytest.raises(ValueError):
            SampleBatch(np.array([[1.0, np.nan]]))
