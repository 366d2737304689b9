"""Exception types raised across the package.

Every error that signals a violated contract (bad parameters, lost
precision, budget exhaustion) gets its own class so callers can react
to the specific failure instead of parsing messages.
"""


class DaflowError(Exception):
    """Base class for all package errors."""


class NonHyperbolicMatrix(DaflowError):
    """Torus matrix is not hyperbolic (|trace| <= 2) or not unimodular."""


class DifferentSurfaces(DaflowError):
    """Two points passed to a binary operation live on different surfaces."""


class OutOfAtlas(DaflowError):
    """Raw coordinates are farther than one gluing step from any chart."""


class TooFarFromCone(DaflowError):
    """Point is outside the developed neighbourhood of the cone point."""


class PowerSearchExceeded(DaflowError):
    """No power of the linear map fixes all separatrix germs within the bound."""


class NoRootInRange(DaflowError):
    """The radial fixed-point equation has no root (amplitude not attracting)."""


class CoverFailure(DaflowError):
    """Expansion/contraction cover certificate failed at a sample point."""

    def __init__(self, message, witness=None):
        super().__init__(message)
        self.witness = witness


class RootBracketFailure(DaflowError):
    """Bracketed root solve for the inverse map found no sign change."""


class ToleranceNotMet(DaflowError):
    """An iterative solve stopped above the requested residual."""


class AtConePoint(DaflowError):
    """Jacobian or field requested at a cone point, where it is undefined."""


class SeriesDivergence(DaflowError):
    """Stable-field series tail cannot be certified (amplitude out of range)."""


class ConeCapture(DaflowError):
    """Forward orbit landed numerically on a cone point mid-series."""


class StepUnderflow(DaflowError):
    """Adaptive integrator step size shrank below the useful minimum."""


class Captured(DaflowError):
    """Trajectory entered the capture radius of a cone point."""

    def __init__(self, cone_id, time):
        super().__init__(f"trajectory captured by cone point {cone_id} at t={time}")
        self.cone_id = cone_id
        self.time = time


class NoReturnWithinBudget(DaflowError):
    """First-return integration exceeded its flow-time budget."""


class NonMonotoneBranch(DaflowError):
    """Sampled return-map branch is not strictly increasing."""


class ConnectionDetected(DaflowError):
    """Rauzy induction hit a connection (equal competing lengths)."""


class MarginExhausted(DaflowError):
    """Numeric Rauzy induction margin fell below the trust threshold."""

    def __init__(self, message, depth):
        super().__init__(message)
        self.depth = depth


class DepthExceedsAgreement(DaflowError):
    """Semi-conjugacy requested at a depth beyond the verified path prefix."""


class SingularOrbit(DaflowError):
    """Orbit hit a singular parameter; restart from a perturbed seed."""
