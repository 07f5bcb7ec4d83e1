"""Exception types shared across the package.

Every failure mode that callers are expected to catch has its own class;
anything else is a plain ValueError/RuntimeError from the offending call.
"""


class GridTooCoarse(ValueError):
    """Grid cannot support the requested stencil (too few nodes or spacing ratio > 2)."""


class RegularityViolation(ValueError):
    """Warp fails the origin/end compatibility conditions (w=0, |w'|=1 at tips)."""


class OutOfDomain(ValueError):
    """Requested radius or arclength position lies outside the sampled domain."""


class NotConverged(RuntimeError):
    """Two refinement levels disagree by more than the requested tolerance."""


class StepRejected(RuntimeError):
    """Flow step would break positivity of the warp or exceed the blow-up threshold."""

    def __init__(self, message, t=None):
        super().__init__(message)
        self.t = t


class Extinct(ValueError):
    """Exact shrinking-sphere solution queried at or past its extinction time."""


class BlowUp(RuntimeError):
    """Reaction ODE reached the blow-up detector; carries a bracketing interval."""

    def __init__(self, message, t_lo=None, t_hi=None):
        super().__init__(message)
        self.t_lo = t_lo
        self.t_hi = t_hi


class HypothesisViolated(ValueError):
    """Initial data fails the hypothesis of the inequality being monitored."""


class DomainTooSmall(ValueError):
    """Cutoff index too close to the outer edge of the domain."""


class OracleMismatch(RuntimeError):
    """Two independent computation routes disagree beyond tolerance."""

    def __init__(self, message, node=None, rel_err=None):
        super().__init__(message)
        self.node = node
        self.rel_err = rel_err


class PreconditionFailed(ValueError):
    """A verification routine's stated precondition does not hold."""


class TooLarge(ValueError):
    """Exact enumeration requested above the hard size cap."""


class MetricViolation(ValueError):
    """Sampled distance matrix violates metric axioms beyond repairable tolerance."""


class ShootingFailed(RuntimeError):
    """Boundary-value shooting is degenerate (conjugate point at the far endpoint)."""
