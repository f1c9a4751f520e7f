"""Exception taxonomy for the learning pipeline.

Conditioning problems (RankDeficient and friends) are recorded as diagnostics
by default and only raised in strict mode; hard contract violations
(InvalidRho, UnsupportedOrder, ...) always raise.
"""


class MixmomError(Exception):
    """Base class for all package errors."""


class InvalidRho(MixmomError):
    """Perturbation scale outside (0, 1/n) (rho = 0 is allowed as a no-op)."""


class PerturbationInfeasible(MixmomError):
    """Diagonal repair failed to produce a PSD covariance."""


class DegenerateCovariance(MixmomError):
    """A covariance matrix is not symmetric PSD within tolerance."""


class UnsupportedOrder(MixmomError):
    """Moment order outside the supported set."""


class DimensionTooSmall(MixmomError):
    """The ambient dimension cannot support the requested construction."""


class IndexOutOfRange(MixmomError, IndexError):
    """Slice index outside [0, n)."""


class RankDeficient(MixmomError):
    """A span-finding singular value fell below the rank tolerance."""


class MergeIllConditioned(MixmomError):
    """The merge step's rank conditions are violated numerically."""


class UnfoldIllConditioned(MixmomError):
    """sigma_min of an unfolding system fell below the rank tolerance."""


class WhitenRankDeficient(MixmomError):
    """Y4 is numerically rank deficient; whitening is unreliable."""


class PowerMethodNoConvergence(MixmomError):
    """Best power-iteration restart did not stabilize within the budget."""


class MeansIllConditioned(MixmomError):
    """Stacked projected covariances are too close to rank deficient."""


class AnchorIllConditioned(MixmomError):
    """The anchoring system for full covariance recovery is ill conditioned."""
