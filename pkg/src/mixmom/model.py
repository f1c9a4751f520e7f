"""Mixture parameters, the smoothing perturbation, and sampling."""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateCovariance, InvalidRho, PerturbationInfeasible
from .seeding import PERTURB_STREAM, SAMPLE_STREAM, stream_rng

PSD_TOL = 1e-10  # eigenvalues >= -PSD_TOL * trace count as PSD


@dataclass
class GmmParams:
    """A k-component Gaussian mixture in R^n.

    weights: (k,), means: (k, n), covariances: (k, n, n).  Validation can be
    switched off for estimator outputs, whose weights and covariances are only
    approximately normalized / PSD.
    """

    weights: np.ndarray
    means: np.ndarray
    covariances: np.ndarray
    check: bool = True

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        self.means = np.asarray(self.means, dtype=np.float64)
        self.covariances = np.asarray(self.covariances, dtype=np.float64)
        if self.means.ndim != 2 or self.covariances.ndim != 3:
            raise ValueError("means must be (k, n), covariances (k, n, n)")
        k, n = self.means.shape
        if self.weights.shape != (k,) or self.covariances.shape != (k, n, n):
            raise ValueError("inconsistent shapes for weights/means/covariances")
        if self.check:
            if np.any(self.weights <= 0):
                raise ValueError("weights must be positive")
            if abs(self.weights.sum() - 1.0) > 1e-8:
                raise ValueError("weights must sum to 1")
            for i in range(k):
                c = self.covariances[i]
                if np.max(np.abs(c - c.T)) > 1e-10:
                    raise DegenerateCovariance(f"covariance {i} is not symmetric")
                w = np.linalg.eigvalsh(c)
                if w[0] < -PSD_TOL * max(np.trace(c), 1.0):
                    raise DegenerateCovariance(
                        f"covariance {i} has eigenvalue {w[0]:.3e} below PSD tolerance"
                    )

    @property
    def n(self) -> int:
        return self.means.shape[1]

    @property
    def k(self) -> int:
        return self.means.shape[0]

    @property
    def omega_min(self) -> float:
        return float(self.weights.min())

    def is_zero_mean(self, tol: float = 0.0) -> bool:
        return bool(np.max(np.abs(self.means)) <= tol)

    def copy(self) -> "GmmParams":
        return GmmParams(
            self.weights.copy(), self.means.copy(), self.covariances.copy(),
            check=False,
        )

    def to_json(self) -> str:
        doc = {
            "n": self.n,
            "k": self.k,
            "weights": self.weights.tolist(),
            "means": self.means.tolist(),
            "covariances": self.covariances.tolist(),
        }
        return json.dumps(doc, indent=1)

    @classmethod
    def from_json(cls, text: str, check: bool = True) -> "GmmParams":
        doc = json.loads(text)
        p = cls(
            np.array(doc["weights"], dtype=np.float64),
            np.array(doc["means"], dtype=np.float64),
            np.array(doc["covariances"], dtype=np.float64),
            check=check,
        )
        if p.n != doc["n"] or p.k != doc["k"]:
            raise ValueError("JSON header (n, k) disagrees with array shapes")
        return p


@dataclass
class SmoothingConfig:
    """Scale and seed of the smoothing perturbation.

    rho must satisfy 0 <= rho < 1/n (rho = 0 is the identity perturbation).
    diag_margin is the multiplier c_d of the deterministic diagonal repair
    diag + c_d * sqrt(n) * rho.
    """

    rho: float
    seed: int = 0
    diag_margin: float = 5.0
    zero_mean: bool = False

    def __post_init__(self):
        if self.rho < 0:
            raise InvalidRho(f"rho must be nonnegative, got {self.rho}")
        if self.diag_margin < 0:
            raise ValueError("diag_margin must be nonnegative")


@dataclass
class SampleBatch:
    """N samples (rows) plus optional component labels (diagnostics only)."""

    data: np.ndarray
    labels: np.ndarray | None = None
    seed: int | None = None

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float64)
        if self.data.ndim != 2 or self.data.shape[0] < 1:
            raise ValueError("data must be an (N, n) array with N >= 1")
        if not np.all(np.isfinite(self.data)):
            raise ValueError("samples must be finite")

    @property
    def n_samples(self) -> int:
        return self.data.shape[0]

    @property
    def n(self) -> int:
        return self.data.shape[1]


def normalize_for_smoothing(params: GmmParams):
    """Rescale x -> c*x so that every ||mu|| <= 1/2 and Sigma <= I/2.

    Returns (scaled params, c).  Parameters already inside the bounds are
    returned unchanged (c = 1), so the map is idempotent.  Recovered
    parameters can be reported in the original scale via mu/c, Sigma/c^2.
    """
    cov_top = max(
        (float(np.linalg.eigvalsh(c)[-1]) for c in params.covariances), default=0.0
    )
    mean_top = max((float(np.linalg.norm(m)) for m in params.means), default=0.0)
    bound = max(2.0 * cov_top, 4.0 * mean_top**2, 1.0)
    c = 1.0 / np.sqrt(bound)
    if c == 1.0:
        return params, 1.0
    return (
        GmmParams(
            params.weights.copy(),
            c * params.means,
            c * c * params.covariances,
            check=False,
        ),
        c,
    )


def smooth_perturb(params: GmmParams, cfg: SmoothingConfig) -> GmmParams:
    """Apply the smoothing perturbation.

    Off-diagonal covariance entries (and, in general mode, means) receive
    i.i.d. N(0, rho^2) noise; diagonals are repaired deterministically to
    original + diag_margin * sqrt(n) * rho.  Weights are untouched.  In
    zero-mean mode the means are forced to zero.
    """
    n, k = params.n, params.k
    # valid range: the off-diagonal noise matrix has spectral norm about
    # rho * sqrt(n), which must stay below the unit data scale
    if cfg.rho >= 1.0 / np.sqrt(n):
        raise InvalidRho(
            f"rho={cfg.rho} must be below 1/sqrt(n) = {1.0 / np.sqrt(n):.4g}"
        )
    if cfg.rho == 0.0:
        out = params.copy()
        if cfg.zero_mean:
            out.means[:] = 0.0
        return out

    cov_top = max(float(np.linalg.eigvalsh(c)[-1]) for c in params.covariances)
    mean_top = max(float(np.linalg.norm(m)) for m in params.means)
    if cov_top > 0.5 + 1e-9 or mean_top > 0.5 + 1e-9:
        raise PerturbationInfeasible(
            "input exceeds the pre-perturbation scaling bounds; "
            "apply normalize_for_smoothing first"
        )

    rng = stream_rng(cfg.seed, PERTURB_STREAM)
    covs = np.empty_like(params.covariances)
    means = np.empty_like(params.means)
    boost = cfg.diag_margin * np.sqrt(n) * cfg.rho
    for i in range(k):
        noise = rng.normal(0.0, cfg.rho, size=(n, n))
        upper = np.triu(noise, 1)
        sym = upper + upper.T
        c = params.covariances[i] + sym
        c[np.diag_indices(n)] = np.diag(params.covariances[i]) + boost
        w = np.linalg.eigvalsh(c)
        if w[0] < -PSD_TOL * max(np.trace(c), 1.0):
            raise PerturbationInfeasible(
                f"component {i} not PSD after diagonal repair "
                f"(min eigenvalue {w[0]:.3e}); increase diag_margin"
            )
        covs[i] = c
        if cfg.zero_mean:
            means[i] = 0.0
        else:
            means[i] = params.means[i] + rng.normal(0.0, cfg.rho, size=n)
    if cfg.zero_mean and not params.is_zero_mean(tol=0.0):
        # the zero-mean model replaces the adversary's means outright
        means[:] = 0.0
    return GmmParams(params.weights.copy(), means, covs, check=False)


def _cov_factor(c: np.ndarray, idx: int) -> np.ndarray:
    """Cholesky factor, falling back to an eigenvalue square root for PSD-singular input."""
    try:
        return np.linalg.cholesky(c)
    except np.linalg.LinAlgError:
        w, v = np.linalg.eigh(c)
        if w[0] < -PSD_TOL * max(np.trace(c), 1.0):
            raise DegenerateCovariance(
                f"covariance {idx} is not PSD within tolerance"
            ) from None
        return v * np.sqrt(np.clip(w, 0.0, None))[None, :]


def sample(params: GmmParams, n_samples: int, seed: int) -> SampleBatch:
    """Draw N i.i.d. samples: h ~ Categorical(weights), x ~ N(mu_h, Sigma_h)."""
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    n, k = params.n, params.k
    rng = stream_rng(seed, SAMPLE_STREAM)
    labels = rng.choice(k, size=n_samples, p=params.weights / params.weights.sum())
    factors = [_cov_factor(params.covariances[i], i) for i in range(k)]
    x = np.empty((n_samples, n))
    for i in range(k):
        idx = np.nonzero(labels == i)[0]
        if idx.size == 0:
            continue
        z = rng.standard_normal((idx.size, n))
        x[idx] = params.means[i][None, :] + z @ factors[i].T
    return SampleBatch(x, labels=labels, seed=seed)
