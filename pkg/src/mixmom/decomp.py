"""Whitening and orthogonal tensor decomposition of the compressed moments.

Y4 = sum_i w_i c_i c_i^T is used to whiten, after which the compressed
order-6 tensor becomes an odd-order orthogonally decomposable tensor whose
eigenpairs are (w_i^{-1/2}, sqrt(w_i) a_i).  The eigenpairs are extracted by
the tensor power method with random restarts and deflation; odd order pins
the sign of each pair, so eigenvalues are reported positive.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any

import numpy as np

from .diagnostics import RunLog
from .errors import PowerMethodNoConvergence, WhitenRankDeficient
from .seeding import POWER_STREAM, stream_rng


@dataclass
class PowerMethodConfig:
    n_restarts: int | None = None  # default 50 * k
    n_iterations: int = 100
    tol: float = 1e-12
    seed: int = 0


@dataclass
class WhitenResult:
    w: np.ndarray  # (k, k), maps compressed coords to the whitened frame
    v2: np.ndarray  # eigenvectors of y4, descending
    lam2: np.ndarray  # eigenvalues of y4 after clamping
    lam2_raw: np.ndarray
    clamped: int


@dataclass
class OrthoDecomposition:
    eigvals: np.ndarray  # (k,) positive, descending
    eigvecs: np.ndarray  # (k, k) orthonormal columns
    rounds: list[dict[str, Any]] = field(default_factory=list)


def whiten(
    y4: np.ndarray,
    y6: np.ndarray,
    *,
    rank_tol: float = 1e-9,
    log: RunLog | None = None,
) -> tuple[np.ndarray, WhitenResult]:
    """Return the whitened order-6 tensor G = y6(W, W, W) and the map W."""
    from .linalg import eigh_desc

    log = log or RunLog()
    k = y4.shape[0]
    lam, v = eigh_desc(y4)
    lmax = max(float(lam[0]), 0.0)
    if lmax <= 0.0:
        log.problem(
            WhitenRankDeficient, "whiten", "compressed covariance moment is not positive"
        )
        lmax = 1e-300
    clamp_level = rank_tol * lmax
    clamped = int(np.sum(lam < clamp_level))
    if float(lam[k - 1]) <= clamp_level:
        log.problem(
            WhitenRankDeficient,
            "whiten",
            f"sigma_{k}(Y4) = {float(lam[k - 1]):.3e} at or below "
            f"{clamp_level:.3e}; whitening clamped {clamped} eigenvalues",
        )
    elif clamped:
        log.info("whiten", f"clamped {clamped} eigenvalues", clamped=clamped)
    lam_clamped = np.maximum(lam, clamp_level)
    w = v * (lam_clamped ** -0.5)
    g = np.einsum("abc,ai,bj,ck->ijk", y6, w, w, w, optimize=True)
    return g, WhitenResult(w=w, v2=v, lam2=lam_clamped, lam2_raw=lam, clamped=clamped)


def _power_round(
    residual: np.ndarray,
    rng: np.random.Generator,
    cfg: PowerMethodConfig,
) -> tuple[np.ndarray, float, bool, int]:
    k = residual.shape[0]
    n_restarts = cfg.n_restarts if cfg.n_restarts is not None else 50 * k
    theta = rng.standard_normal((k, n_restarts))
    theta /= np.linalg.norm(theta, axis=0, keepdims=True)
    for _ in range(cfg.n_iterations):
        theta = np.einsum("abc,bl,cl->al", residual, theta, theta, optimize=True)
        norms = np.linalg.norm(theta, axis=0, keepdims=True)
        theta /= np.maximum(norms, 1e-300)
    vals = np.einsum("abc,al,bl,cl->l", residual, theta, theta, theta, optimize=True)
    best = int(np.argmax(np.abs(vals)))
    v = theta[:, best]

    converged = False
    for _ in range(cfg.n_iterations):
        nxt = np.einsum("abc,b,c->a", residual, v, v)
        nrm = np.linalg.norm(nxt)
        if nrm <= 1e-300:
            break
        nxt /= nrm
        if min(np.linalg.norm(nxt - v), np.linalg.norm(nxt + v)) < cfg.tol:
            v = nxt
            converged = True
            break
        v = nxt
    lam = float(np.einsum("abc,a,b,c->", residual, v, v, v))
    if lam < 0:
        v = -v
        lam = -lam
    return v, lam, converged, n_restarts


def ortho_power_decompose(
    g: np.ndarray,
    config: PowerMethodConfig | None = None,
    log: RunLog | None = None,
) -> OrthoDecomposition:
    """Extract all k eigenpairs of a symmetric order-3 tensor by restarted
    power iterations with deflation, largest eigenvalue first."""
    cfg = config or PowerMethodConfig()
    log = log or RunLog()
    k = g.shape[0]
    rng = stream_rng(cfg.seed, POWER_STREAM)
    residual = np.array(g, dtype=float, copy=True)
    vecs = np.empty((k, k))
    vals = np.empty(k)
    rounds: list[dict[str, Any]] = []
    for r in range(k):
        v, lam, converged, used = _power_round(residual, rng, cfg)
        if not converged:
            log.problem(
                PowerMethodNoConvergence,
                "decomp",
                f"round {r} did not converge within {cfg.n_iterations} polish steps",
            )
        vecs[:, r] = v
        vals[r] = lam
        residual -= lam * np.einsum("a,b,c->abc", v, v, v)
        rounds.append(
            {
                "round": r,
                "lambda": lam,
                "gap": 0.0,
                "restarts_used": used,
                "converged": bool(converged),
            }
        )
    order = np.argsort(-vals, kind="stable")
    vals = vals[order]
    vecs = vecs[:, order]
    for i, row in enumerate(rounds):
        row["gap"] = float(vals[i] - vals[i + 1]) if i + 1 < k else float(vals[i])
        row["lambda"] = float(vals[i])
        log.add_row("decomp", row)
    return OrthoDecomposition(eigvals=vals, eigvecs=vecs, rounds=rounds)


def assemble_parameters(
    dec: OrthoDecomposition,
    whiten_result: WhitenResult,
    u: "Subspace",
) -> tuple[np.ndarray, np.ndarray]:
    """Turn tensor eigenpairs back into mixture weights and covariances.

    Each eigenpair (lam, v) corresponds to a component with weight lam^-2
    whose covariance coordinates in the span basis are lam * V2 Lam2^{1/2} v.
    Components are returned sorted by decreasing weight.
    """
    from .moments import iso_to_sym
    from .spans import Subspace  # noqa: F401  (typing only)

    unscale = whiten_result.v2 * np.sqrt(whiten_result.lam2)
    k = dec.eigvals.shape[0]
    n = int((np.sqrt(8 * u.ambient_dim + 1) - 1) / 2)
    weights = dec.eigvals**-2.0
    covs = np.empty((k, n, n))
    for i in range(k):
        c = dec.eigvals[i] * (unscale @ dec.eigvecs[:, i])
        mat = iso_to_sym(u.basis @ c)
        covs[i] = 0.5 * (mat + mat.T)
    order = np.argsort(-weights, kind="stable")
    return weights[order], covs[order]
