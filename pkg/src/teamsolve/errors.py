"""Exception and warning types shared across the package."""


class TeamsolveError(Exception):
    """Base class for all errors raised by this package."""


class MalformedProblem(TeamsolveError):
    """Problem description is internally inconsistent (dimensions, counts)."""


class SingularNoise(TeamsolveError):
    """An observation noise scale matrix failed a positive-definiteness test."""


class SingularGain(TeamsolveError):
    """A discrete-time state gain matrix failed an invertibility test."""


class FutureAccess(TeamsolveError):
    """An information stencil asked for an observation sample after time t."""


class IncompatibleStencil(TeamsolveError):
    """A policy feature time does not land on the simulation grid."""


class MissingIncrements(TeamsolveError):
    """Ensemble lacks the stored noise increments needed for reweighting."""


class ShapeMismatch(TeamsolveError):
    """Arrays that must agree on grid / path count / dimension do not."""


class NaNPayoff(TeamsolveError):
    """A payoff evaluation produced NaN; the current sweep is aborted."""


class ExplodingAdjoint(TeamsolveError):
    """A backward adjoint value exceeded the stability bound (1e6)."""


class ConfigError(TeamsolveError):
    """Run configuration is missing fields, has unknown fields, or bad values."""


class EffectiveSampleSizeWarning(UserWarning):
    """Importance weights are degenerate: n_eff fell below 5% of the paths."""


class NonsmoothCostWarning(UserWarning):
    """Finite-difference gradients disagree across step sizes by > 20%."""


class GridTooCoarseWarning(UserWarning):
    """Doubling quadrature nodes moved the payoff by more than the threshold."""


class DegenerateFeaturesWarning(UserWarning):
    """A constant feature coordinate was collapsed before binning."""


class NoConvergenceWarning(UserWarning):
    """An iterative solve hit its iteration budget; best iterate returned."""
