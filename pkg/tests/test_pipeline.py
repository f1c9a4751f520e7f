"""End-to-end recovery on exact moments, the general-mode helper stages,
component matching, and the instance generators."""

import numpy as np
import pytest

from mixmom.errors import UnsupportedOrder
from mixmom.instances import PRESETS, counterexample_pair, random_instance, x4_matrix
from mixmom.linalg import svd_basis
from mixmom.model import GmmParams
from mixmom.moments import exact_moments
from mixmom.pipeline import (
    PipelineConfig,
    learn_general,
    learn_zero_mean,
    match_and_score,
    recover_full_covariances,
    recover_means,
)
from mixmom.spans import Subspace


class TestLearnZeroMeanExact:
    def test_recovers_parameters(self):
        p = random_instance(10, 2, seed=1, zero_mean=True)
        est, rep = learn_zero_mean(exact_moments(p, orders=(4, 6)), 2)
        m = match_and_score(p, est)
        assert m.max_error < 1e-8
        assert rep.mode == "zero_mean"
        assert abs(sum(rep.raw_weights) - 1.0) < 1e-8
        assert est.is_zero_mean()

    def test_three_components(self):
        p = random_instance(16, 3, seed=2, zero_mean=True)
        est, _ = learn_zero_mean(exact_moments(p, orders=(4, 6)), 3)
        assert match_and_score(p, est).max_error < 1e-8

    def test_centered_span_gives_same_answer(self):
        p = random_instance(10, 2, seed=3, zero_mean=True)
        ms = exact_moments(p, orders=(4, 6))
        plain, _ = learn_zero_mean(ms, 2, PipelineConfig(centered_span=False))
        centered, _ = learn_zero_mean(ms, 2, PipelineConfig(centered_span=True))
        for est in (plain, centered):
            assert match_and_score(p, est).max_error < 1e-8

    def test_needs_order6(self):
        p = random_instance(10, 2, seed=4, zero_mean=True)
        ms = exact_moments(p, orders=(4,))
        ms.params = None  # also remove on-demand slice support
        with pytest.raises(UnsupportedOrder):
            learn_zero_mean(ms, 2)

    def test_report_is_canonically_serializable(self):
        p = random_instance(10, 2, seed=5, zero_mean=True)
        ms = exact_moments(p, orders=(4, 6))
        _, rep_a = learn_zero_mean(ms, 2)
        _, rep_b = learn_zero_mean(ms, 2)
        assert rep_a.canonical_json() == rep_b.canonical_json()
        # timings differ between runs and are excluded from the canonical form
        assert "timings" not in rep_a.canonical_json()
        assert "timings" in rep_a.to_json()


class TestLearnGeneralExact:
    def test_recovers_parameters(self):
        p = random_instance(14, 2, seed=6)
        est, rep = learn_general(exact_moments(p, orders=(3, 4, 6)), 2)
        m = match_and_score(p, est)
        assert m.max_error < 1e-8
        assert rep.mode == "general"
        assert rep.sub_report is not None
        assert rep.sub_report["mode"] == "zero_mean"

    def test_needs_order3(self):
        p = random_instance(14, 2, seed=7, zero_mean=True)
        with pytest.raises(UnsupportedOrder):
            learn_general(exact_moments(p, orders=(4, 6)), 2)


class TestRecoverMeans:
    def test_exact_means(self):
        p = random_instance(14, 2, seed=8)
        ms = exact_moments(p, orders=(3, 4))
        z_basis, _ = svd_basis(p.means.T, 2)
        z = Subspace(z_basis, "n")
        proj = np.eye(14) - z.projector()
        sigma_o = [proj @ p.covariances[i] @ proj for i in range(2)]
        mus = recover_means(ms.m3, p.weights, sigma_o, z)
        np.testing.assert_allclose(mus, p.means, rtol=0, atol=1e-9)


class TestRecoverFullCovariances:
    def test_exact_covariances(self):
        p = random_instance(14, 2, seed=9)
        ms = exact_moments(p, orders=(3, 4))
        z_basis, _ = svd_basis(p.means.T, 2)
        z = Subspace(z_basis, "n")
        proj = np.eye(14) - z.projector()
        sigma_o = [proj @ p.covariances[i] @ proj for i in range(2)]
        covs = recover_full_covariances(
            ms.m4, p.weights, p.means, sigma_o, z
        )
        np.testing.assert_allclose(covs, p.covariances, rtol=0, atol=1e-8)


class TestMatchAndScore:
    def test_permuted_copy_scores_zero(self):
        p = random_instance(8, 3, seed=10)
        perm = [2, 0, 1]
        q = GmmParams(
            p.weights[perm], p.means[perm], p.covariances[perm], check=False
        )
        m = match_and_score(p, q)
        assert m.max_error < 1e-15
        # perm maps truth index to estimate index
        assert m.perm == (1, 2, 0)

    def test_errors_reported_per_component(self):
        p = random_instance(8, 2, seed=11)
        q = p.copy()
        q.means[0] += 0.01
        q.weights = np.array(q.weights)
        m = match_and_score(p, q)
        assert m.mean_errors[0] == pytest.approx(0.01 * np.sqrt(8), rel=1e-6)
        assert m.mean_errors[1] == 0.0
        assert m.max_error == pytest.approx(0.01 * np.sqrt(8), rel=1e-6)

    def test_component_count_mismatch(self):
        p = random_instance(8, 2, seed=12)
        q = random_instance(8, 3, seed=12)
        with pytest.raises(ValueError):
            match_and_score(p, q)

    def test_large_k_uses_threshold_matching(self):
        # k > 8 exercises the bipartite-matching branch
        p = random_instance(6, 9, seed=13)
        perm = np.roll(np.arange(9), 4)
        q = GmmParams(
            p.weights[perm], p.means[perm], p.covariances[perm], check=False
        )
        m = match_and_score(p, q)
        assert m.max_error < 1e-12


class TestPipelineConfig:
    def test_rank_tol_by_provenance(self):
        cfg = PipelineConfig()
        assert cfg.resolve_rank_tol("exact") == 1e-9
        assert cfg.resolve_rank_tol("empirical:streamed") == 1e-4
        assert PipelineConfig(rank_tol=1e-6).resolve_rank_tol("exact") == 1e-6

    def test_centered_by_provenance(self):
        cfg = PipelineConfig()
        assert not cfg.resolve_centered("exact", 2)
        assert cfg.resolve_centered("empirical:streamed", 2)
        assert not cfg.resolve_centered("empirical:streamed", 1)
        assert PipelineConfig(centered_span=True).resolve_centered("exact", 2)
        assert not PipelineConfig(centered_span=False).resolve_centered(
            "empirical:streamed", 2
        )


class TestInstances:
    def test_random_instance_inside_smoothing_bounds(self):
        for seed in range(5):
            p = random_instance(12, 3, seed=seed)
            for c in p.covariances:
                assert np.linalg.eigvalsh(c)[-1] <= 0.5
            for m in p.means:
                assert np.linalg.norm(m) <= 0.5
            assert p.weights.min() > 0.05

    def test_deterministic_by_seed(self):
        a = random_instance(10, 2, seed=3)
        b = random_instance(10, 2, seed=3)
        np.testing.assert_array_equal(a.covariances, b.covariances)
        c = random_instance(10, 2, seed=4)
        assert np.max(np.abs(a.covariances - c.covariances)) > 0

    def test_lowrank_preset(self):
        p = random_instance(10, 2, seed=5, preset="lowrank", zero_mean=True)
        for c in p.covariances:
            w = np.linalg.eigvalsh(c)
            assert w[-1] == pytest.approx(0.45, abs=1e-12)
            assert np.max(np.abs(w[:-1])) < 1e-12

    def test_uniform_weights(self):
        p = random_instance(10, 4, seed=6, uniform_weights=True)
        np.testing.assert_allclose(p.weights, 0.25, atol=1e-15)

    def test_unknown_preset(self):
        with pytest.raises(ValueError):
            random_instance(10, 2, seed=0, preset="sparse")
        assert set(PRESETS) == {"random", "lowrank"}

    def test_zero_mean_flag(self):
        assert random_instance(10, 2, seed=7, zero_mean=True).is_zero_mean()
        assert not random_instance(10, 2, seed=7).is_zero_mean()


class TestCounterexample:
    def test_same_fourth_moment_different_x4(self):
        a, b = counterexample_pair()
        ma = exact_moments(a, orders=(4,))
        mb = exact_moments(b, orders=(4,))
        assert np.max(np.abs(ma.m4.values - mb.m4.values)) < 1e-12
        gap = np.linalg.norm(x4_matrix(a) - x4_matrix(b))
        assert gap > 0.5
