"""Test-instance generators and the matched-fourth-moment fixture."""

from __future__ import annotations

import numpy as np

from .indexing import pair_count, pair_table
from .model import GmmParams
from .seeding import INSTANCE_STREAM, stream_rng

PRESETS = ("random", "lowrank")


def random_instance(
    n: int,
    k: int,
    seed: int = 0,
    *,
    zero_mean: bool = False,
    preset: str = "random",
    uniform_weights: bool = False,
) -> GmmParams:
    """Draw an unperturbed instance already inside the smoothing bounds
    (covariances below I/2, mean norms below 1/2).

    The "random" preset uses well-conditioned dense covariances; "lowrank"
    uses rank-one covariances (plus nothing else), the regime where the
    span conditioning is driven entirely by the smoothing perturbation.
    """
    if preset not in PRESETS:
        raise ValueError(f"unknown preset {preset!r}")
    rng = stream_rng(seed, INSTANCE_STREAM)
    if uniform_weights:
        weights = np.full(k, 1.0 / k)
    else:
        weights = rng.dirichlet(np.full(k, 5.0))
        weights = 0.3 / k + 0.7 * weights
        weights /= weights.sum()

    covs = np.empty((k, n, n))
    for i in range(k):
        if preset == "lowrank":
            v = rng.standard_normal(n)
            v /= np.linalg.norm(v)
            covs[i] = 0.45 * np.outer(v, v)
        else:
            a = rng.standard_normal((n, n))
            s = a @ a.T / n
            top = float(np.linalg.eigvalsh(s)[-1])
            covs[i] = s * (0.45 / top)

    means = np.zeros((k, n))
    if not zero_mean:
        for i in range(k):
            d = rng.standard_normal(n)
            d /= np.linalg.norm(d)
            means[i] = d * rng.uniform(0.15, 0.45)
    return GmmParams(weights, means, covs)


def counterexample_pair() -> tuple[GmmParams, GmmParams]:
    """Two zero-mean 3-component mixtures in dimension 5 with identical
    fourth moments but different pair-product covariance matrices X4.

    Each covariance is 2 on the diagonal plus symmetric 1s in two
    off-diagonal positions; the two mixtures use the same six position
    pairs, grouped differently.
    """
    n, k = 5, 3
    groups_a = [((0, 1), (3, 4)), ((0, 2), (1, 4)), ((0, 3), (2, 4))]
    groups_b = [((0, 1), (2, 4)), ((0, 2), (3, 4)), ((0, 3), (1, 4))]

    def build(groups) -> GmmParams:
        covs = np.empty((k, n, n))
        for c, (p, q) in enumerate(groups):
            m = 2.0 * np.eye(n)
            m[p] = m[p[::-1]] = 1.0
            m[q] = m[q[::-1]] = 1.0
            covs[c] = m
        return GmmParams(np.full(k, 1.0 / 3.0), np.zeros((k, n)), covs)

    return build(groups_a), build(groups_b)


def x4_matrix(params: GmmParams, convention: str = "raw") -> np.ndarray:
    """The weighted pair-product second moment sum_i w_i r_i r_i^T where
    r_i collects the entries of Sigma_i over unordered index pairs."""
    n = params.n
    d2 = pair_count(n)
    pt = pair_table(n)
    out = np.zeros((d2, d2))
    for i in range(params.k):
        r = params.covariances[i][pt[:, 0], pt[:, 1]]
        if convention == "iso":
            r = r * np.where(pt[:, 0] == pt[:, 1], 1.0, np.sqrt(2.0))
        elif convention != "raw":
            raise ValueError(f"unknown convention {convention!r}")
        out += params.weights[i] * np.outer(r, r)
    return out
