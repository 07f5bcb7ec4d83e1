"""Fitting and verification of a-priori flow estimates on snapshot traces.

The theorems under test assert the existence of constants (curvature scale
K, smoothing constant c0, distance-evolution constants c1/c2, a volume
persistence horizon S, a volume floor vtilde0).  This module inverts each
existential statement into a fitting problem: compute the minimal constant
making the inequality hold over a trace, record the margin series and any
violations, and let callers check stability of the fit under refinement.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import HypothesisViolated, OutOfDomain, PreconditionFailed
from .numerics import STENCIL_NPTS, cumulative_integral, integral_to
from .warped import WarpedMetric, ball_volume, curvature


@dataclass(frozen=True)
class EstimateConstants:
    """Hypothesis constants plus the fitted ones, with the resolutions used."""

    k: float
    v0: float
    eps0: float = 1e-3
    K: float | None = None
    c0: float | None = None
    c1: float | None = None
    c2: float | None = None
    S: float | None = None
    vtilde0: float | None = None
    resolutions: tuple = ()

    def __post_init__(self):
        for name in ("K", "c0", "c1", "c2", "S", "vtilde0"):
            value = getattr(self, name)
            if value is not None and value < 0.0:
                raise ValueError(f"fitted constant {name} must be nonnegative")


@dataclass(frozen=True)
class InequalityFit:
    """One inequality's fitted constant, margin series, and violations.

    margins is a ((key, margin), ...) series; the key is the snapshot time for
    trace monitors and the profile index for taming sweeps.  violations lists
    (key, location, magnitude) triples; empty iff the inequality held.
    """

    name: str
    constant: float
    margins: tuple = ()
    violations: tuple = ()
    binding_key: float | None = None

    @property
    def ok(self):
        return not self.violations


@dataclass(frozen=True)
class EstimateReport:
    """Deterministic bundle of per-inequality fits for one trace/configuration."""

    fits: tuple
    resolutions: tuple = ()

    @property
    def ok(self):
        return all(f.ok for f in self.fits)

    def fit(self, name) -> InequalityFit:
        for f in self.fits:
            if f.name == name:
                return f
        raise KeyError(f"no fit named {name!r}")
