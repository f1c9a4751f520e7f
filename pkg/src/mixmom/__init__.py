"""Method-of-moments recovery of smoothed Gaussian mixtures.

Zero-mean mixtures are identified from their order-4 and order-6 moments by
finding the span of the vectorized covariances, unfolding the compressed
moment tensors over that span, and decomposing the whitened order-6 tensor.
General mixtures additionally split off the mean span and re-anchor full
covariances through an adjusted fourth moment.
"""

__version__ = "0.1.0"

from .decomp import (
    OrthoDecomposition,
    PowerMethodConfig,
    WhitenResult,
    assemble_parameters,
    ortho_power_decompose,
    whiten,
)
from .diagnostics import DiagnosticEvent, RunLog, SpanDiagnostics
from .errors import (
    AnchorIllConditioned,
    DegenerateCovariance,
    DimensionTooSmall,
    IndexOutOfRange,
    InvalidRho,
    MeansIllConditioned,
    MergeIllConditioned,
    MixmomError,
    PerturbationInfeasible,
    PowerMethodNoConvergence,
    RankDeficient,
    UnfoldIllConditioned,
    UnsupportedOrder,
    WhitenRankDeficient,
)
from .instances import counterexample_pair, random_instance, x4_matrix
from .model import (
    GmmParams,
    SampleBatch,
    SmoothingConfig,
    normalize_for_smoothing,
    sample,
    smooth_perturb,
)
from .moments import (
    FoldedMoments,
    MomentSet,
    SymTensor,
    empirical_moments,
    exact_moments,
    f4_apply,
    f6_apply,
    fold,
    isserlis_moment,
    iso_to_raw,
    iso_to_sym,
    project_moments,
    sym_to_iso,
)
from .pipeline import (
    MatchResult,
    PipelineConfig,
    RecoveryReport,
    learn_general,
    learn_zero_mean,
    match_and_score,
    recover_full_covariances,
    recover_means,
)
from .serialization import (
    load_moments,
    momentset_debug_json,
    momentset_from_bytes,
    momentset_to_bytes,
    save_moments,
)
from .spans import (
    IndexSets,
    MergeResult,
    SpanResult,
    Subspace,
    choose_index_sets,
    find_column_span,
    find_matrix_span,
    find_projected_sigma_span,
    merge_projections,
)
from .unfold import (
    CoefficientSystem,
    UnfoldedMoments,
    build_coefficient_system,
    build_h4,
    build_h6,
    solve_unfold,
)

__all__ = [name for name in dir() if not name.startswith("_")]
