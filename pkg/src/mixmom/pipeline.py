"""End-to-end recovery drivers for zero-mean and general mixtures.

The zero-mean path is span finding -> folding -> unfolding -> whitened
tensor decomposition.  The general path first splits off the mean span Z,
runs the zero-mean path on moments projected to the complement of Z, then
reads means off the third moment and re-anchors full covariances through an
adjusted fourth moment.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field, replace
from typing import Any

import numpy as np

from .decomp import (
    OrthoDecomposition,
    PowerMethodConfig,
    WhitenResult,
    assemble_parameters,
    ortho_power_decompose,
    whiten,
)
from .diagnostics import RunLog
from .errors import (
    AnchorIllConditioned,
    MeansIllConditioned,
    UnsupportedOrder,
)
from .indexing import nondecreasing_tuples
from .linalg import orth_complement
from .model import GmmParams
from .moments import (
    MomentSet,
    SymTensor,
    fold,
    iso_to_sym,
    project_moments,
    sym_to_iso,
)
from .spans import Subspace, find_matrix_span
from .unfold import solve_unfold


@dataclass
class PipelineConfig:
    strict: bool = False
    rank_tol: float | None = None  # default by provenance: 1e-9 exact, 1e-4 empirical
    h_size: int | None = None
    columns: str = "multiset"
    centered_span: bool | None = None  # default by provenance: sampled runs center
    power: PowerMethodConfig = field(default_factory=PowerMethodConfig)
    memory_budget: int = 50_000_000
    max_dense_dim: int = 24

    def resolve_rank_tol(self, provenance: str) -> float:
        if self.rank_tol is not None:
            return self.rank_tol
        return 1e-4 if provenance.startswith("empirical") else 1e-9

    def resolve_centered(self, provenance: str, k: int) -> bool:
        if k < 2:
            return False
        if self.centered_span is not None:
            return self.centered_span
        return provenance.startswith("empirical")


@dataclass
class RecoveryReport:
    mode: str
    n: int
    k: int
    raw_weights: list[float]
    weights: list[float]
    means: list[list[float]]
    covariances: list[Any]
    index_sets: dict[str, Any]
    span: dict[str, float]
    events: list[dict[str, Any]]
    tables: dict[str, Any]
    timings: dict[str, float]
    sub_report: dict[str, Any] | None = None
    match: dict[str, Any] | None = None

    def to_dict(self, include_timings: bool = True) -> dict[str, Any]:
        doc = {
            "mode": self.mode,
            "n": self.n,
            "k": self.k,
            "raw_weights": self.raw_weights,
            "weights": self.weights,
            "means": self.means,
            "covariances": self.covariances,
            "index_sets": self.index_sets,
            "span": self.span,
            "events": self.events,
            "tables": self.tables,
            "sub_report": self.sub_report,
            "match": self.match,
        }
        if include_timings:
            doc["timings"] = self.timings
        return doc

    def to_json(self, include_timings: bool = True) -> str:
        return json.dumps(self.to_dict(include_timings), indent=2, sort_keys=True)

    def canonical_json(self) -> str:
        """Deterministic serialization: everything except wall-clock timings."""
        return json.dumps(self.to_dict(include_timings=False), sort_keys=True)


def _build_report(
    mode: str,
    params: GmmParams,
    raw_weights: np.ndarray,
    span_result,
    log: RunLog,
) -> RecoveryReport:
    return RecoveryReport(
        mode=mode,
        n=params.n,
        k=params.k,
        raw_weights=[float(w) for w in raw_weights],
        weights=[float(w) for w in params.weights],
        means=[[float(x) for x in m] for m in params.means],
        covariances=[[[float(x) for x in row] for row in c] for c in params.covariances],
        index_sets=span_result.index_sets.to_dict(),
        span=span_result.diagnostics.to_dict(),
        events=[ev.to_dict() for ev in log.events],
        tables=log.tables,
        timings=dict(log.timings),
    )


def learn_zero_mean(
    moments: MomentSet,
    k: int,
    config: PipelineConfig | None = None,
    log: RunLog | None = None,
) -> tuple[GmmParams, RecoveryReport]:
    """Recover weights and covariances of a zero-mean mixture from its
    order-4 and order-6 moments."""
    cfg = config or PipelineConfig()
    if moments.m6_bar is None and not moments.supports_order6_slices:
        raise UnsupportedOrder("zero-mean recovery needs order-6 moments")
    rank_tol = cfg.resolve_rank_tol(moments.provenance)
    centered = cfg.resolve_centered(moments.provenance, k)
    log = log or RunLog(cfg.strict)

    with log.timed("span"):
        span = find_matrix_span(
            moments,
            k,
            "zero_mean",
            columns=cfg.columns,
            h_size=cfg.h_size,
            centered=centered,
            rank_tol=rank_tol,
            log=log,
        )
    with log.timed("fold"):
        folded = fold(moments)
    with log.timed("unfold"):
        unf, _ = solve_unfold(
            folded,
            span.u,
            second_moment=moments.second_moment() if centered else None,
            rank_tol=rank_tol,
            memory_budget=cfg.memory_budget,
            log=log,
        )
    with log.timed("decomp"):
        g, wres = whiten(unf.y4, unf.y6, rank_tol=rank_tol, log=log)
        dec = ortho_power_decompose(g, cfg.power, log)
        raw_weights, covs = assemble_parameters(dec, wres, span.u)

    total = float(raw_weights.sum())
    weights = raw_weights / total if total > 0 else np.full(k, 1.0 / k)
    params = GmmParams(weights, np.zeros((k, moments.n)), covs, check=False)
    report = _build_report("zero_mean", params, raw_weights, span, log)
    return params, report


def recover_means(
    m3: SymTensor,
    weights: np.ndarray,
    sigma_o: list[np.ndarray],
    z: Subspace,
    *,
    rank_tol: float = 1e-9,
    log: RunLog | None = None,
) -> np.ndarray:
    """Read component means off the matricized third moment.

    The dual basis of the projected covariances is biorthogonal to every
    covariance cross term in the third moment, so contracting against it
    isolates w_i mu_i exactly.
    """
    log = log or RunLog()
    n = m3.dim
    k = len(sigma_o)
    a = np.stack([s.reshape(-1) for s in sigma_o])  # (k, n^2)
    sing = np.linalg.svd(a, compute_uv=False)
    smin = float(sing[k - 1]) if sing.size >= k else 0.0
    log.add_row(
        "means",
        {"step": "means", "sigma_min": smin, "sigma_max": float(sing[0])},
    )
    if smin <= rank_tol * max(float(sing[0]), 1e-300):
        log.problem(
            MeansIllConditioned,
            "means",
            f"projected covariances nearly dependent (sigma_{k}={smin:.3e})",
        )
    t = np.linalg.pinv(a)  # (n^2, k), columns biorthogonal to the rows of a
    m3_mat = m3.dense().reshape(n, n * n)
    mus = np.empty((k, n))
    proj = z.projector()
    for i in range(k):
        wi = max(float(weights[i]), 1e-300)
        mus[i] = proj @ (m3_mat @ t[:, i]) / wi
    return mus


def recover_full_covariances(
    m4: SymTensor,
    weights: np.ndarray,
    means: np.ndarray,
    sigma_o: list[np.ndarray],
    z: Subspace,
    config: PipelineConfig | None = None,
    log: RunLog | None = None,
    provenance: str = "exact",
) -> np.ndarray:
    """Recover the unprojected covariances through the adjusted fourth moment.

    Adding back 2 * sum_i w_i mu_i^{x4} turns the general fourth moment into
    the fourth moment of a zero-mean mixture with covariances
    B_i = Sigma_i + mu_i mu_i^T; the span of those is found with the
    zero-mean machinery (order-4 slices only) and each B_i is anchored by
    matching its two-sided projection against sigma_o_i.
    """
    cfg = config or PipelineConfig()
    log = log or RunLog()
    rank_tol = cfg.resolve_rank_tol(provenance)
    n = m4.dim
    k = len(sigma_o)

    tuples = nondecreasing_tuples(n, 4)
    adjust = np.zeros(m4.values.shape)
    for i in range(k):
        adjust += 2.0 * float(weights[i]) * np.prod(means[i][tuples], axis=1)
    m4_adj = SymTensor(n, 4, m4.values + adjust)
    aux = MomentSet(n=n, m4=m4_adj, provenance=provenance)

    span = find_matrix_span(
        aux,
        k,
        "zero_mean",
        columns=cfg.columns,
        rank_tol=rank_tol,
        log=log,
    )
    s = span.u.basis  # iso coordinates, k columns

    proj = np.eye(n) - z.basis @ z.basis.T
    ps = np.empty_like(s)
    for j in range(k):
        mat = iso_to_sym(s[:, j])
        ps[:, j] = sym_to_iso(proj @ mat @ proj)
    sing = np.linalg.svd(ps, compute_uv=False)
    smin = float(sing[k - 1]) if sing.size >= k else 0.0
    log.add_row(
        "anchor",
        {"step": "anchor", "sigma_min": smin, "sigma_max": float(sing[0])},
    )
    if smin <= rank_tol * max(float(sing[0]), 1e-300):
        log.problem(
            AnchorIllConditioned,
            "anchor",
            f"two-sided projection of the B-span nearly singular "
            f"(sigma_{k}={smin:.3e})",
        )

    covs = np.empty((k, n, n))
    for i in range(k):
        target = sym_to_iso(sigma_o[i])
        c, *_ = np.linalg.lstsq(ps, target, rcond=None)
        b = iso_to_sym(s @ c)
        mat = b - np.outer(means[i], means[i])
        covs[i] = 0.5 * (mat + mat.T)
    return covs


def learn_general(
    moments: MomentSet,
    k: int,
    config: PipelineConfig | None = None,
) -> tuple[GmmParams, RecoveryReport]:
    """Recover weights, means and covariances of a general mixture from its
    order-3, order-4 and order-6 moments."""
    cfg = config or PipelineConfig()
    if moments.m3 is None:
        raise UnsupportedOrder("general recovery needs order-3 moments")
    rank_tol = cfg.resolve_rank_tol(moments.provenance)
    log = RunLog(cfg.strict)
    n = moments.n

    with log.timed("span"):
        span = find_matrix_span(
            moments,
            k,
            "general",
            columns=cfg.columns,
            h_size=cfg.h_size,
            rank_tol=rank_tol,
            log=log,
        )
    z = span.z
    w_frame = orth_complement(z.basis)

    with log.timed("project"):
        proj_moments = project_moments(moments, w_frame, cfg.max_dense_dim)

    with log.timed("sub_run"):
        sub_cfg = replace(cfg, h_size=None)
        sub_params, sub_report = learn_zero_mean(proj_moments, k, sub_cfg)

    raw_weights = np.asarray(sub_report.raw_weights)
    sigma_o = [
        w_frame @ sub_params.covariances[i] @ w_frame.T for i in range(k)
    ]

    with log.timed("means"):
        mus = recover_means(
            moments.m3, raw_weights, sigma_o, z, rank_tol=rank_tol, log=log
        )

    with log.timed("anchor"):
        covs = recover_full_covariances(
            moments.m4,
            raw_weights,
            mus,
            sigma_o,
            z,
            cfg,
            log,
            provenance=moments.provenance,
        )

    total = float(raw_weights.sum())
    weights = raw_weights / total if total > 0 else np.full(k, 1.0 / k)
    params = GmmParams(weights, mus, covs, check=False)
    report = _build_report("general", params, raw_weights, span, log)
    report.sub_report = sub_report.to_dict(include_timings=False)
    return params, report


@dataclass
class MatchResult:
    perm: tuple[int, ...]  # est index assigned to each truth component
    max_error: float
    weight_errors: list[float]
    mean_errors: list[float]
    cov_errors: list[float]

    def to_dict(self) -> dict[str, Any]:
        return {
            "perm": list(self.perm),
            "max_error": self.max_error,
            "weight_errors": self.weight_errors,
            "mean_errors": self.mean_errors,
            "cov_errors": self.cov_errors,
        }


def _bottleneck_assignment(cost: np.ndarray) -> tuple[int, ...]:
    k = cost.shape[0]
    if k <= 8:
        best, best_val = None, np.inf
        for perm in itertools.permutations(range(k)):
            val = float(cost[np.arange(k), perm].max())
            if val < best_val:
                best, best_val = perm, val
        return best
    from scipy.sparse import csr_matrix
    from scipy.sparse.csgraph import maximum_bipartite_matching

    levels = np.unique(cost)
    lo, hi = 0, len(levels) - 1

    def feasible(t: float):
        adj = csr_matrix((cost <= t).astype(np.int8))
        match = maximum_bipartite_matching(adj, perm_type="column")
        return match if (match >= 0).all() else None

    best_match = feasible(levels[hi])
    while lo < hi:
        mid = (lo + hi) // 2
        m = feasible(levels[mid])
        if m is not None:
            best_match, hi = m, mid
        else:
            lo = mid + 1
    return tuple(int(j) for j in best_match)


def match_and_score(truth: GmmParams, est: GmmParams) -> MatchResult:
    """Bottleneck matching of estimated components to the truth; errors are
    absolute weight gaps, mean 2-norms and covariance spectral norms."""
    if truth.k != est.k:
        raise ValueError("component counts differ")
    k = truth.k
    cost = np.empty((k, k))
    for i in range(k):
        for j in range(k):
            dw = abs(float(truth.weights[i]) - float(est.weights[j]))
            dm = float(np.linalg.norm(truth.means[i] - est.means[j]))
            ds = float(
                np.linalg.norm(truth.covariances[i] - est.covariances[j], 2)
            )
            cost[i, j] = max(dw, dm, ds)
    perm = _bottleneck_assignment(cost)
    werr, merr, serr = [], [], []
    for i, j in enumerate(perm):
        werr.append(abs(float(truth.weights[i]) - float(est.weights[j])))
        merr.append(float(np.linalg.norm(truth.means[i] - est.means[j])))
        serr.append(
            float(np.linalg.norm(truth.covariances[i] - est.covariances[j], 2))
        )
    return MatchResult(
        perm=perm,
        max_error=float(cost[np.arange(k), perm].max()),
        weight_errors=werr,
        mean_errors=merr,
        cov_errors=serr,
    )
