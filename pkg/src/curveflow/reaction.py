"""Curvature-operator reaction ODEs and the pinching-inequality sweeps.

In dimension 3 the curvature operator has eigenvalues alpha <= beta <= gamma
and, along Ricci flow, their reaction (non-diffusive) part is the closed system

    alpha' = alpha^2 + beta gamma,
    beta'  = beta^2  + alpha gamma,
    gamma' = gamma^2 + alpha beta.

The Ricci eigenvalues are the pairwise sums (beta+gamma, alpha+gamma,
alpha+beta) and the scalar curvature is R = 2(alpha+beta+gamma).  This module
integrates the system (RK4), checks the time-dependent pinching lower bounds
at ODE level, and brute-forces the positivity of the N11 quantity that makes
the tensor maximum-principle argument close.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import BlowUp, HypothesisViolated
from .numerics import as_readonly

K_UNIVERSAL = 100.0


# ---------------------------------------------------------------------------
# state and parameters
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ReactionState:
    """Ordered curvature-operator eigenvalues at one instant."""

    alpha: float
    beta: float
    gamma: float

    def __post_init__(self):
        if not self.alpha <= self.beta <= self.gamma:
            raise ValueError("eigenvalues must be ordered alpha <= beta <= gamma")

    @property
    def ricci_eigs(self):
        """Ricci eigenvalues, ascending: (a+b, a+c, b+c) for a <= b <= c."""
        return (
            self.alpha + self.beta,
            self.alpha + self.gamma,
            self.beta + self.gamma,
        )

    @property
    def ric_min(self):
        return self.alpha + self.beta

    @property
    def scalar_r(self):
        return 2.0 * (self.alpha + self.beta + self.gamma)

    @property
    def ric_norm_sq(self):
        """S = |Ric|^2, the sum of squared Ricci eigenvalues."""
        return sum(v * v for v in self.ricci_eigs)


@dataclass(frozen=True)
class PinchingParams:
    """epsilon_0 and the universal constant k of the pinching inequality."""

    eps0: float
    k: float = K_UNIVERSAL
    cap: float = math.inf

    def __post_init__(self):
        if not 0.0 < self.eps0 < 0.01:
            raise ValueError("eps0 must lie in (0, 1/100)")
        if self.k <= 0.0 or self.cap <= 0.0:
            raise ValueError("k and cap must be positive")

    @property
    def t_horizon(self):
        return min(1.0 / self.k, self.cap)

    def eps(self, t):
        """The growing threshold eps(t) = eps0 (1 + k t)."""
        return self.eps0 * (1.0 + self.k * np.asarray(t, dtype=float))


@dataclass(frozen=True)
class ReactionTrajectory:
    """Sampled RK4 solution: times (m,), values (m, 3) columns alpha,beta,gamma."""

    times: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        times = np.asarray(self.times, dtype=float)
        values = np.asarray(self.values, dtype=float)
        if values.shape != (len(times), 3):
            raise ValueError("values must have shape (len(times), 3)")
        object.__setattr__(self, "times", as_readonly(times))
        object.__setattr__(self, "values", as_readonly(values))

    def state(self, i) -> ReactionState:
        return ReactionState(*self.values[i])

    @property
    def scalar_r(self):
        return 2.0 * self.values.sum(axis=1)

    @property
    def ric_min(self):
        return self.values[:, 0] + self.values[:, 1]

    @property
    def sec_min(self):
        return self.values[:, 0]


# ---------------------------------------------------------------------------
# integration
# ---------------------------------------------------------------------------


def _reaction_rhs(y):
    """Reaction vector field on stacked eigenvalues, shape (..., 3)."""
    a, b, c = y[..., 0], y[..., 1], y[..., 2]
    return np.stack([a * a + b * c, b * b + a * c, c * c + a * b], axis=-1)


def _rk4_path(y0, t_end, dt):
    """Fixed-step RK4 samples (times, values) for stacked initial data.

    Overflow to inf past a blow-up is the detection mechanism, so the
    corresponding warnings are suppressed here and the caller scans for the
    first bad sample instead.
    """
    y0 = np.asarray(y0, dtype=float)
    n_steps = max(1, int(math.ceil(t_end / dt - 1e-12)))
    h = t_end / n_steps
    times = np.empty(n_steps + 1)
    values = np.empty((n_steps + 1,) + y0.shape)
    times[0] = 0.0
    values[0] = y0
    y = y0
    with np.errstate(over="ignore", invalid="ignore"):
        for i in range(1, n_steps + 1):
            k1 = _reaction_rhs(y)
            k2 = _reaction_rhs(y + 0.5 * h * k1)
            k3 = _reaction_rhs(y + 0.5 * h * k2)
            k4 = _reaction_rhs(y + h * k3)
            y = y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
            times[i] = i * h
            values[i] = y
    return times, values


def integrate_reaction(s0: ReactionState, t_end, dt) -> ReactionTrajectory:
    """RK4 trajectory of the reaction system from s0.

    Blow-up is detected when |gamma| exceeds 1/dt; the raised BlowUp carries
    the bracketing interval (last good time, first bad time).
    """
    if dt <= 0.0 or t_end <= 0.0:
        raise ValueError("dt and t_end must be positive")
    times, values = _rk4_path(np.array([s0.alpha, s0.beta, s0.gamma]), t_end, dt)
    bad = ~np.isfinite(values[:, 2]) | (np.abs(values[:, 2]) > 1.0 / dt)
    if np.any(bad):
        j = int(np.argmax(bad))
        raise BlowUp(
            f"reaction ODE blow-up detected between t={times[j - 1]!r} and t={times[j]!r}",
            t_lo=float(times[max(j - 1, 0)]),
            t_hi=float(times[j]),
        )
    return ReactionTrajectory(times, values)


# ---------------------------------------------------------------------------
# pinching check
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PinchingReport:
    """Outcome of a pinching-bound scan along one trajectory."""

    mode: str
    ok: bool
    min_margin: float
    first_violation: tuple | None  # (t, margin) of the first failure
    times_checked: int


def pinching_check(
    trajectory: ReactionTrajectory, params: PinchingParams, mode="ricci"
) -> PinchingReport:
    """Scan the mode's lower bound along the trajectory up to the horizon.

    ricci mode:     min Ricci eig >= -eps(t) - eps(t) t R(t),  eps(t) = eps0 (1+kt)
    sectional mode: min sectional >= -eps0(1/2+kt) - eps0(1/2+kt) t R(t)
    with the hypothesis (at t=0) min Ricci eig >= -eps0/4, resp. alpha >= -eps0/4.
    """
    if mode not in ("ricci", "sectional"):
        raise ValueError(f"unknown mode {mode!r}")
    t = trajectory.times
    keep = t <= params.t_horizon * (1.0 + 1e-12)
    t = t[keep]
    scalar = trajectory.scalar_r[keep]
    if mode == "ricci":
        quantity = trajectory.ric_min[keep]
        threshold = -params.eps(t) * (1.0 + t * scalar)
        hypothesis = trajectory.ric_min[0] >= -params.eps0 / 4.0 - 1e-15
    else:
        quantity = trajectory.sec_min[keep]
        coeff = params.eps0 * (0.5 + params.k * t)
        threshold = -coeff * (1.0 + t * scalar)
        hypothesis = trajectory.values[0, 0] >= -params.eps0 / 4.0 - 1e-15
    if not hypothesis:
        raise HypothesisViolated(
            f"initial data fails the {mode} hypothesis (>= -eps0/4 required)"
        )
    margins = quantity - threshold
    bad = margins < 0.0
    first = None
    if np.any(bad):
        j = int(np.argmax(bad))
        first = (float(t[j]), float(margins[j]))
    return PinchingReport(
        mode=mode,
        ok=first is None,
        min_margin=float(np.min(margins)),
        first_violation=first,
        times_checked=int(len(t)),
    )


def sample_admissible(n, eps0, mode, rng):
    """n sorted triples in [-eps0/4, 1]^3 satisfying the mode's hypothesis."""
    out = np.empty((0, 3))
    while len(out) < n:
        draw = rng.uniform(-eps0 / 4.0, 1.0, size=(2 * n, 3))
        draw.sort(axis=1)
        if mode == "ricci":
            good = draw[:, 0] + draw[:, 1] >= -eps0 / 4.0
        else:
            good = draw[:, 0] >= -eps0 / 4.0
        out = np.vstack([out, draw[good]])
    return out[:n]


@dataclass(frozen=True)
class SweepReport:
    """Aggregate of pinching checks over a randomized batch of trajectories."""

    mode: str
    samples: int
    seed: int
    violations: int
    min_margin: float
    worst_initial: tuple | None


def pinching_sweep(samples, params: PinchingParams, mode="ricci", seed=0, dt=1e-3):
    """Integrate a batch of admissible initial states and scan the bound on each.

    Vectorized over the batch: one RK4 path advances all triples at once, and
    every sample time of every trajectory is checked.
    """
    rng = np.random.default_rng(seed)
    y0 = sample_admissible(samples, params.eps0, mode, rng)
    t_end = params.t_horizon
    times, values = _rk4_path(y0, t_end, dt)  # (m, n, 3)
    scalar = 2.0 * values.sum(axis=2)
    t_col = times[:, None]
    if mode == "ricci":
        quantity = values[:, :, 0] + values[:, :, 1]
        threshold = -params.eps(t_col) * (1.0 + t_col * scalar)
    else:
        quantity = values[:, :, 0]
        coeff = params.eps0 * (0.5 + params.k * t_col)
        threshold = -coeff * (1.0 + t_col * scalar)
    margins = quantity - threshold
    min_margin = float(np.min(margins))
    violations = int(np.count_nonzero(margins < 0.0))
    worst = None
    if violations:
        j = int(np.argmin(np.min(margins, axis=0)))
        worst = tuple(float(v) for v in y0[j])
    return SweepReport(
        mode=mode,
        samples=int(samples),
        seed=int(seed),
        violations=violations,
        min_margin=min_margin,
        worst_initial=worst,
    )


# ---------------------------------------------------------------------------
# N11 positivity
# ---------------------------------------------------------------------------


def n11_value(t, mu, nu, eps0, k=K_UNIVERSAL):
    """N11 evaluated verbatim at the null-eigenvector configuration.

    At a first zero of the smallest eigenvalue of L = Ric + eps t R g + eps g
    (vanishing-barrier limit), the smallest Ricci eigenvalue is pinned to
    lam = -(eps t (mu+nu) + eps) / (1 + eps t), and

        N11 = (mu-nu)^2 + lam(mu+nu) + 2 eps t (lam^2 + mu^2 + nu^2)
              + eps R + k eps0 t R + k eps0,

    with R = lam + mu + nu and the trailing metric factors read as 1 in the
    orthonormal frame.  Returns (n11, lam, eps) as arrays.
    """
    t = np.asarray(t, dtype=float)
    mu = np.asarray(mu, dtype=float)
    nu = np.asarray(nu, dtype=float)
    eps = eps0 * (1.0 + k * t)
    lam = -(eps * t * (mu + nu) + eps) / (1.0 + eps * t)
    scalar = lam + mu + nu
    n11 = (
        (mu - nu) ** 2
        + lam * (mu + nu)
        + 2.0 * eps * t * (lam**2 + mu**2 + nu**2)
        + eps * scalar
        + k * eps0 * t * scalar
        + k * eps0
    )
    return n11, lam, eps


@dataclass(frozen=True)
class N11Report:
    """Result of the randomized N11 positivity sweep."""

    eps0: float
    k: float
    samples: int
    seed: int
    min_n11: float
    argmin: tuple  # (t, mu, nu, lam) at the minimum
    nonpositive: int


def verify_n11(sample_count, eps0, k=K_UNIVERSAL, seed=0, scale_range=(1e2, 1e6)) -> N11Report:
    """Randomized positivity sweep of N11 over the admissible region.

    Samples t in (0, 1/k], a curvature scale a log-uniformly from scale_range,
    mu+nu in [-eps(t), a/100] and the gap nu-mu in [0, a/50]; keeps samples
    with lam <= mu (eigenvalue ordering) and R >= -eps0 (the scalar lower
    bound available along the flow), and evaluates N11 at each.

    The boundary value eps0 = 1/100 is admitted here (the positivity margin is
    still of size (k-1) eps0 there), unlike PinchingParams which keeps the
    strict hypothesis of the trajectory bound.
    """
    if not 0.0 < eps0 <= 0.01:
        raise ValueError("eps0 must lie in (0, 1/100]")
    rng = np.random.default_rng(seed)
    kept_min = np.inf
    kept_arg = None
    kept = 0
    nonpos = 0
    remaining = int(sample_count)
    lo, hi = scale_range
    while remaining > 0:
        m = min(max(2 * remaining, 1024), 4_000_000)
        t = rng.uniform(0.0, 1.0 / k, size=m)
        t = np.nextafter(t, np.inf)  # open at 0
        a = np.exp(rng.uniform(math.log(lo), math.log(hi), size=m))
        eps = eps0 * (1.0 + k * t)
        total = rng.uniform(-eps, a / 100.0)
        gap = rng.uniform(0.0, a / 50.0, size=m)
        mu = 0.5 * (total - gap)
        nu = 0.5 * (total + gap)
        n11, lam, _ = n11_value(t, mu, nu, eps0, k)
        good = (lam <= mu) & (lam + mu + nu >= -eps0)
        n11 = n11[good]
        if len(n11) > remaining:
            n11 = n11[:remaining]
            sel = np.flatnonzero(good)[: len(n11)]
        else:
            sel = np.flatnonzero(good)
        if len(n11):
            j = int(np.argmin(n11))
            if n11[j] < kept_min:
                kept_min = float(n11[j])
                jj = sel[j]
                kept_arg = (float(t[jj]), float(mu[jj]), float(nu[jj]), float(lam[jj]))
            nonpos += int(np.count_nonzero(n11 <= 0.0))
            kept += len(n11)
            remaining -= len(n11)
    return N11Report(
        eps0=float(eps0),
        k=float(k),
        samples=kept,
        seed=int(seed),
        min_n11=kept_min,
        argmin=kept_arg,
        nonpositive=nonpos,
    )
