"""Curve-shortening-type flow of rotationally symmetric 3-metrics (Ricci flow).

The metric evolves by dg/dt = -2 Ric(g).  In a fixed coordinate x with lapse
phi (ds = phi dx) the symmetric reduction is

    d(phi)/dt = 2 (w_ss / w) phi,      d(w)/dt = w_ss - (1 - w_s^2) / w,

with every s-derivative expanded through phi (d/ds = phi^{-1} d/dx).  Keeping x
fixed avoids re-meshing; the commutator between time and arclength derivatives
is carried entirely by phi.

The radial update is integrated in the variable v = w^2, for which the same
equation reads d(v)/dt = v_ss - 2 with no zero-over-zero reaction at the
rotation centres: v is an even, strictly quadratic-at-the-tip field, so the
discrete system inherits the plain heat-equation stability that the w-form
loses to cancellation in (1 - w_s^2)/w near w = 0.  The public state still
carries (phi, w).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.interpolate import InterpolatedUnivariateSpline
from scipy.linalg import solve_banded

from .errors import Extinct, RegularityViolation, StepRejected
from .numerics import STENCIL_NPTS, DerivOp, as_readonly, cumulative_integral
from .warped import (
    RadialGrid,
    WarpedMetric,
    ball_volume,
    build_sphere,
    curvature,
    uniform_grid,
)

# ---------------------------------------------------------------------------
# state and configuration
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class FlowState:
    """Flow variables at one instant: fixed labels x, lapse phi, warp w."""

    t: float
    x_grid: np.ndarray
    phi: np.ndarray
    w: np.ndarray
    topology: str = "closed"

    def __post_init__(self):
        x = np.asarray(self.x_grid, dtype=float)
        phi = np.asarray(self.phi, dtype=float)
        w = np.asarray(self.w, dtype=float)
        if not (x.shape == phi.shape == w.shape):
            raise ValueError("x_grid, phi, w must have matching shapes")
        if np.any(phi <= 0.0):
            raise RegularityViolation("lapse must stay positive")
        interior = w[1:-1] if self.topology == "closed" else w[1:]
        if np.any(interior <= 0.0):
            raise RegularityViolation("warp must stay positive at interior nodes")
        object.__setattr__(self, "x_grid", as_readonly(x))
        object.__setattr__(self, "phi", as_readonly(phi))
        object.__setattr__(self, "w", as_readonly(w))

    def arclength(self):
        """s(x) = integral of phi from 0 to x at every node."""
        return cumulative_integral(self.phi, self.x_grid)

    def to_warped(self, fiber="sphere2") -> WarpedMetric:
        """Arclength-gauge snapshot of this state."""
        s = self.arclength()
        w = self.w.copy()
        w[0] = 0.0
        if self.topology == "closed":
            w[-1] = 0.0
        return WarpedMetric(RadialGrid(s, self.topology), w, fiber)

    def spacing(self):
        """Current arclength spacing of adjacent nodes."""
        x = self.x_grid
        mid = 0.5 * (self.phi[1:] + self.phi[:-1])
        return mid * np.diff(x)


@dataclass(frozen=True)
class FlowConfig:
    """Run controls; the explicit step obeys dt = safety * min(Delta s)^2 / 4."""

    t_end: float
    safety: float = 0.5
    stepper: str = "rk2"
    snapshot_times: tuple = ()
    distance_pairs: tuple = ()  # entries (s1, psi, s2), measured per snapshot
    blow_up_factor: float = 1e6
    max_steps: int = 50_000_000

    def __post_init__(self):
        if not 0.0 < self.safety <= 0.5:
            raise ValueError("safety must lie in (0, 1/2]")
        if self.t_end <= 0.0:
            raise ValueError("t_end must be positive")
        if self.stepper not in ("rk2", "semi_implicit"):
            raise ValueError(f"unknown stepper {self.stepper!r}")
        object.__setattr__(self, "snapshot_times", tuple(float(t) for t in self.snapshot_times))
        object.__setattr__(self, "distance_pairs", tuple(map(tuple, self.distance_pairs)))


@dataclass(frozen=True)
class FlowTrace:
    """Ordered snapshots with arclength-gauge metrics, curvature, diagnostics."""

    times: tuple
    states: tuple
    metrics: tuple
    curvatures: tuple
    diagnostics: tuple
    config: FlowConfig

    def __post_init__(self):
        if any(b <= a for a, b in zip(self.times, self.times[1:])):
            raise ValueError("snapshot times must be strictly increasing")


# ---------------------------------------------------------------------------
# spatial operators
# ---------------------------------------------------------------------------


class _Ops:
    """Parity-matched x-derivative stencils shared by every step of a run."""

    def __init__(self, x, topology):
        right = topology == "closed"
        self.odd = DerivOp(x, parity=("odd", "odd" if right else None))
        self.even = DerivOp(x, parity=("even", "even" if right else None))
        even_parity = ("even", "even" if right else None)
        self.even_up = DerivOp(x, parity=even_parity, bias=-1)
        self.even_dn = DerivOp(x, parity=even_parity, bias=+1)
        self.topology = topology
        self.x = np.asarray(x, dtype=float)
        u = self.x[1:4] ** 2
        self._tip_l = np.array(
            [np.prod([u[j] / (u[j] - u[i]) for j in range(3) if j != i]) for i in range(3)]
        )
        if right:
            v = (self.x[-1] - self.x[-4:-1][::-1]) ** 2
            self._tip_r = np.array(
                [np.prod([v[j] / (v[j] - v[i]) for j in range(3) if j != i]) for i in range(3)]
            )

    def tip_extrapolate(self, values):
        """Even extrapolation of a field to the rotation centres, in place."""
        values[0] = float(self._tip_l @ values[1:4])
        if self.topology == "closed":
            values[-1] = float(self._tip_r @ values[-4:-1][::-1])
        return values


def _rhs(ops: _Ops, phi, w):
    """Time derivatives (phi_dot, v_dot) for v = w^2, plus (k_rad, k_sph)."""
    v = w * w
    w_x = ops.odd.d1(w)
    w_xx = ops.odd.d2(w)
    v_xx = ops.even.d2(v)
    v_x = ops.even.d1(v)
    phi_x = ops.even.d1(phi)
    w_s = w_x / phi
    w_ss = (w_xx - (phi_x / phi) * w_x) / phi**2
    v_ss = (v_xx - (phi_x / phi) * v_x) / phi**2

    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = w_ss / w  # = -k_rad
        k_sph = (1.0 - w_s**2) / w**2
    ops.tip_extrapolate(ratio)
    k_sph[0] = -ratio[0]
    if ops.topology == "closed":
        k_sph[-1] = -ratio[-1]

    # The lapse equation 2 (w_ss / w) phi hides the advection -A phi_x with
    # A = 2 w_x / (phi^2 w), an outflow of speed ~ 2/s at each rotation centre.
    # Centered phi_x there reflects grid-scale content back into the tip and
    # the reflected mode grows like 2/(Delta s)^2, so A phi_x is differenced
    # with the window shifted one node to the upwind side instead.
    with np.errstate(divide="ignore", invalid="ignore"):
        advect = 2.0 * w_x / (phi**2 * w)
    phi_x_up = np.where(advect > 0.0, ops.even_up.d1(phi), ops.even_dn.d1(phi))
    with np.errstate(divide="ignore", invalid="ignore"):
        phi_dot = 2.0 * w_xx / (phi * w) - advect * phi_x_up
    phi_dot[0] = 0.0
    if ops.topology == "closed":
        phi_dot[-1] = 0.0

    v_dot = v_ss - 2.0
    v_dot[0] = 0.0
    if ops.topology == "closed":
        v_dot[-1] = 0.0
    else:
        v_dot[-2:] = 0.0
        phi_dot[-2:] = 0.0
    return phi_dot, v_dot, -ratio, k_sph


def _require_interior_positive(arr, t, topology):
    """Reject the step if the warp (or its square) degenerates off the tips."""
    interior = slice(1, -1) if topology == "closed" else slice(1, None)
    if np.any(arr[interior] <= 0.0):
        raise StepRejected(
            f"warp hit zero at an interior node near t={t!r} "
            "(neckpinch-type degeneration at this resolution)",
            t=t,
        )


def _sqrt_or_reject(v, t, topology):
    """w from v = w^2, rejecting the step if v degenerates at an interior node."""
    _require_interior_positive(v, t, topology)
    return np.sqrt(np.maximum(v, 0.0))


def _slave_tips(ops: _Ops, phi, w, t):
    """Impose the rotation-centre boundary condition phi = |w_x| in place.

    At a centre the metric is smooth iff dw/ds = 1, i.e. w_x = phi.  Evolving
    phi there by the extrapolated 2 (w_ss / w) phi instead lets a grid-scale
    spike in phi(tip) feed back into itself through the phi_x terms of w_ss
    (growth rate about 3 / (Delta s)^2); pinning phi(tip) to the one-sided
    slope of w removes that loop without touching the interior dynamics.
    """
    w_x = ops.odd.d1(w)
    phi[0] = w_x[0]
    if ops.topology == "closed":
        phi[-1] = -w_x[-1]
    if phi[0] <= 0.0 or phi[-1] <= 0.0:
        raise StepRejected(f"lapse collapsed at a rotation centre near t={t!r}", t=t)
    return phi


def _check_state(state_t, k_rad, k_sph, blow_up):
    sup = max(np.max(np.abs(k_rad)), np.max(np.abs(k_sph)))
    if sup > blow_up:
        raise StepRejected(
            f"curvature {sup!r} exceeded the blow-up threshold {blow_up!r} at t={state_t!r}",
            t=state_t,
        )


# Half-bandwidth of the coupled residual in interleaved (phi_0, w_0, phi_1,
# w_1, ...) ordering: the widest row is the tip slaving constraint, whose
# one-sided |w_x| stencil reads w over STENCIL_NPTS nodes.
_JAC_HALF = 2 * STENCIL_NPTS - 1
_SDIRK_GAMMA = 1.0 - 1.0 / math.sqrt(2.0)


def _interleave(a, b):
    out = np.empty(2 * len(a))
    out[0::2] = a
    out[1::2] = b
    return out


def _coupled_residual(ops: _Ops, u, base_phi, base_v, dt_imp):
    """Stage residual u - base - dt_imp G(u) on interleaved (phi, w) unknowns.

    The v = w^2 evolution rows read w^2 - base_v - dt_imp v_t, so the unknown
    is w itself and the residual stays polynomial near the tips (a v unknown
    would put a square root with unbounded curvature at w ~ 0 in Newton's
    path and degrade the finite-difference Jacobian there).  The
    rotation-centre lapse rows are replaced by the algebraic slaving
    constraint phi = |w_x| so the tip condition is solved simultaneously with
    the fields; pinned rows reduce to u = base because the rates vanish
    there.
    """
    phi = u[0::2]
    w = np.abs(u[1::2])
    phi_dot, v_dot, _, _ = _rhs(ops, phi, w)
    r = np.empty_like(u)
    r[0::2] = phi - base_phi - dt_imp * phi_dot
    r[1::2] = w * w - base_v - dt_imp * v_dot
    w_x = ops.odd.d1(w)
    r[0] = phi[0] - w_x[0]
    if ops.topology == "closed":
        r[-2] = phi[-1] + w_x[-1]
    return r


def _banded_jacobian(fun, u, r0):
    """Finite-difference Jacobian of fun at u in LAPACK band storage.

    Unknowns a full bandwidth apart have disjoint row footprints, so one
    evaluation per offset class suffices (2 * _JAC_HALF + 1 evaluations).
    """
    m = len(u)
    width = 2 * _JAC_HALF + 1
    bands = np.zeros((width, m))
    rows = np.arange(-_JAC_HALF, _JAC_HALF + 1)
    for colour in range(width):
        cols = np.arange(colour, m, width)
        eps = 1e-8 + 1e-7 * np.abs(u[cols])
        probe = u.copy()
        probe[cols] += eps
        dr = fun(probe) - r0
        for j, e in zip(cols, eps):
            lo = max(0, j - _JAC_HALF)
            hi = min(m, j + _JAC_HALF + 1)
            bands[_JAC_HALF + lo - j : _JAC_HALF + hi - j, j] = dr[lo:hi] / e
    return bands


def _band_row_norms(bands):
    """1-norms of the rows of a matrix in LAPACK band storage."""
    width, m = bands.shape
    half = (width - 1) // 2
    norms = np.zeros(m)
    for d in range(-half, half + 1):
        lo, hi = max(0, -d), min(m, m - d)
        norms[lo:hi] += np.abs(bands[half - d, lo + d : hi + d])
    return norms


def _newton_solve(ops: _Ops, guess, base_phi, base_v, dt_imp, t_new, max_iter=40):
    """Solve the stage residual by Newton with the banded FD Jacobian.

    Convergence is judged row-relatively: a row whose Jacobian norm is L can
    never be driven below L times the resolution of the unknowns (the tip
    slaving row carries a one-sided stencil over the spacing, L ~ 1/dx), so
    each |r_j| is compared against its own row norm as well as a global
    absolute floor.

    Damping: prefer the largest step with sufficient decrease against the
    worst of the last three residual norms, but tolerate a full step whose
    norm rises by less than a decade.  The residual is only piecewise smooth
    (the advection term switches its upwind branch), and crossing a switch
    can raise the max-norm for an iteration or two before quadratic
    convergence resumes; a genuinely diverging solve still grows past the
    decade guard and is rejected as retryable.
    """
    fun = lambda uu: _coupled_residual(ops, uu, base_phi, base_v, dt_imp)
    scale = max(1.0, float(np.max(np.abs(guess))))
    u = guess.copy()
    r = fun(u)
    r_norm = float(np.max(np.abs(r))) if np.all(np.isfinite(r)) else np.inf
    recent = [r_norm]
    for _ in range(max_iter):
        if not np.isfinite(r_norm):
            break
        if r_norm < 1e-11 * scale:
            return u
        bands = _banded_jacobian(fun, u, r)
        row_tol = 1e-12 * scale * np.maximum(1.0, _band_row_norms(bands))
        if np.all(np.abs(r) <= row_tol):
            return u
        delta = solve_banded((_JAC_HALF, _JAC_HALF), bands, -r)
        r_ref = max(recent)
        alpha, accepted = 1.0, False
        full_trial = None
        for _ in range(6):
            r_trial = fun(u + alpha * delta)
            trial_norm = float(np.max(np.abs(r_trial)))
            if alpha == 1.0:
                full_trial = (r_trial, trial_norm)
            if np.all(np.isfinite(r_trial)) and trial_norm <= (1.0 - 0.25 * alpha) * r_ref:
                accepted = True
                break
            alpha *= 0.5
        if not accepted:
            r_trial, trial_norm = full_trial
            if not (np.all(np.isfinite(r_trial)) and trial_norm <= 10.0 * r_ref):
                break
            alpha = 1.0
        u = u + alpha * delta
        r, r_norm = r_trial, trial_norm
        recent = (recent + [r_norm])[-3:]
        if alpha == 1.0 and np.max(np.abs(delta)) < 1e-13 * scale:
            return u
    err = StepRejected(
        f"implicit solve did not converge for dt={dt_imp!r} at t={t_new!r}", t=t_new
    )
    err.retryable = True
    raise err


def _implicit_step(ops: _Ops, phi, w, dt, t_new):
    """One L-stable two-stage SDIRK step of the coupled (phi, w) system.

    Splitting the lapse and warp solves leaves the tip slaving loop
    (phi(0) = w_x(0) feeding the v advection) integrated explicitly, and that
    loop's rate is ~ (tip spacing)^-2; solving the coupled system keeps it
    implicit, so dt is limited by accuracy alone.  A trapezoidal residual
    rings at the collapsed-tip modes (amplification -> -1 for rates far
    beyond 1/dt), so the two-stage scheme with gamma = 1 - 1/sqrt(2) is used:
    second order and L-stable.  Rejections carry retryable=True when a
    smaller dt may converge.
    """
    _, _, k_rad, k_sph = _rhs(ops, phi, w)
    v_old = w * w
    u_old = _interleave(phi, w)
    g = _SDIRK_GAMMA
    u1 = _newton_solve(ops, u_old, phi, v_old, g * dt, t_new)
    p1_dot, v1_dot, _, _ = _rhs(ops, u1[0::2], np.abs(u1[1::2]))
    base_phi = phi + (1.0 - g) * dt * p1_dot
    base_v = v_old + (1.0 - g) * dt * v1_dot
    u2 = _newton_solve(ops, u1, base_phi, base_v, g * dt, t_new)
    _require_interior_positive(u2[1::2], t_new, ops.topology)
    return u2[0::2], np.abs(u2[1::2]), k_rad, k_sph


def step(state: FlowState, dt, ops: _Ops | None = None, stepper="rk2", blow_up=np.inf) -> FlowState:
    """Advance one step (midpoint RK2, or the coupled implicit theta-scheme)."""
    if ops is None:
        ops = _Ops(state.x_grid, state.topology)
    phi, w = state.phi, state.w
    v = w * w
    t_new = state.t + dt
    if stepper == "rk2":
        p1, v1, _, _ = _rhs(ops, phi, w)
        phi_mid = phi + 0.5 * dt * p1
        if np.any(phi_mid <= 0.0):
            raise StepRejected(f"lapse collapsed near t={t_new!r}", t=t_new)
        w_mid = _sqrt_or_reject(v + 0.5 * dt * v1, t_new, state.topology)
        _slave_tips(ops, phi_mid, w_mid, t_new)
        p2, v2, k_rad, k_sph = _rhs(ops, phi_mid, w_mid)
        phi_new = phi + dt * p2
        w_new = _sqrt_or_reject(v + dt * v2, t_new, state.topology)
    else:
        phi_new, w_new, k_rad, k_sph = _implicit_step(ops, phi, w, dt, t_new)
        if np.any(phi_new <= 0.0):
            # an overshoot of the collapsing gauge, not a geometric event:
            # a smaller implicit step keeps the lapse positive
            err = StepRejected(f"lapse collapsed near t={t_new!r}", t=t_new)
            err.retryable = True
            raise err
    _slave_tips(ops, phi_new, w_new, t_new)
    new = FlowState(t_new, state.x_grid, phi_new, w_new, state.topology)
    _check_state(new.t, k_rad, k_sph, blow_up)
    return new


# ---------------------------------------------------------------------------
# driving loop
# ---------------------------------------------------------------------------


def initial_state(m: WarpedMetric) -> FlowState:
    """Relabel an arclength-gauge metric onto x = s / s_max with constant lapse."""
    s = m.grid.s_nodes
    return FlowState(
        t=0.0,
        x_grid=s / m.s_max,
        phi=np.full(len(s), m.s_max),
        w=m.w.copy(),
        topology=m.grid.topology,
    )


def _odd_extended_spline(x, y, closed):
    """Quintic interpolant of samples that are odd about x[0] (and x[-1] if closed).

    Reflecting a stencil's worth of samples across the rotation centres keeps
    the interpolation full-order at the ends instead of one-sided.
    """
    k = STENCIL_NPTS - 1
    x_parts = [2.0 * x[0] - x[k:0:-1], x]
    y_parts = [2.0 * y[0] - y[k:0:-1], y]
    if closed:
        x_parts.append(2.0 * x[-1] - x[-2 : -k - 2 : -1])
        y_parts.append(2.0 * y[-1] - y[-2 : -k - 2 : -1])
    return InterpolatedUnivariateSpline(
        np.concatenate(x_parts), np.concatenate(y_parts), k=5
    )


def resample_arclength(state: FlowState, n_nodes=None, fiber="sphere2") -> WarpedMetric:
    """Arclength-gauge snapshot of a flow state on a uniform arclength grid.

    The fixed-coordinate gauge concentrates nodes wherever the lapse has
    collapsed (at a positively curved tip, exponentially in time).  The raw
    node set is a valid arclength-gauge metric, but evaluating the sectional
    curvature (1 - w_s^2)/w^2 on it divides finite-difference noise by the
    tiny clustered spacings squared, and the noise grows under refinement.
    Resampling w through the smooth x-coordinate onto a uniform arclength grid
    restores the conditioning of every derived quantity, so all snapshot
    diagnostics are evaluated here.
    """
    x = state.x_grid
    s = state.arclength()
    closed = state.topology == "closed"
    if n_nodes is None:
        n_nodes = len(x)
    s_uni = np.linspace(0.0, float(s[-1]), int(n_nodes))
    x_of_s = _odd_extended_spline(s, x, closed)
    w_of_x = _odd_extended_spline(x, state.w, closed)
    x_uni = np.clip(x_of_s(s_uni), x[0], x[-1])
    w_uni = w_of_x(x_uni)
    w_uni[0] = 0.0
    if closed:
        w_uni[-1] = 0.0
    return WarpedMetric(RadialGrid(s_uni, state.topology), w_uni, fiber)


def _diagnostics(state: FlowState, cf, metric, zone, label_pairs):
    """Per-snapshot diagnostics; distance pairs are (x1, psi, x2) comoving labels."""
    s = metric.grid.s_nodes
    mask = np.ones(len(s), dtype=bool)
    if metric.grid.topology == "open" and zone > 0.0:
        mask = s <= metric.s_max - zone
    point_sup = np.maximum(np.abs(cf.k_rad), np.abs(cf.k_sph))
    diag = {
        "t": state.t,
        "radius": float(np.max(state.w)),
        "sup_riem": float(np.max(point_sup[mask])),
        "ric_min": float(np.min(cf.ric_min[mask])),
        "vol_b1": None,
        "distances": [],
    }
    if metric.s_max * (1.0 + 1e-12) >= 1.0:
        diag["vol_b1"] = float(ball_volume(metric, min(1.0, metric.s_max)))
    if label_pairs:
        from .surface import surface_distance

        s_now = state.arclength()
        for x1, psi, x2 in label_pairs:
            s1 = float(np.interp(x1, state.x_grid, s_now))
            s2 = float(np.interp(x2, state.x_grid, s_now))
            diag["distances"].append(float(surface_distance(metric, (s1, psi), (s2, 0.0))))
    return diag


def _pairs_to_labels(pairs, s_max0):
    """Resolve distance pairs, given as (s1, psi, s2) at t=0, to comoving x labels."""
    labels = []
    for s1, psi, s2 in pairs:
        if not (0.0 <= s1 <= s_max0 and 0.0 <= s2 <= s_max0):
            raise ValueError(f"distance pair ({s1}, {psi}, {s2}) outside [0, {s_max0}]")
        labels.append((s1 / s_max0, float(psi), s2 / s_max0))
    return tuple(labels)


def run(initial: WarpedMetric, cfg: FlowConfig) -> FlowTrace:
    """Integrate the flow, snapshotting at cfg.snapshot_times (plus t=0 if listed).

    For open topology the outermost two nodes are pinned and diagnostics are
    restricted to s <= s_max - (sqrt(4 t_end) + stencil reach), outside the
    boundary's influence zone.
    """
    state = initial_state(initial)
    ops = _Ops(state.x_grid, state.topology)
    blow_up = cfg.blow_up_factor / float(np.min(np.diff(initial.grid.s_nodes))) ** 2
    zone = 0.0
    if initial.grid.topology == "open":
        zone = math.sqrt(4.0 * cfg.t_end) + STENCIL_NPTS * float(
            np.mean(np.diff(initial.grid.s_nodes))
        )

    snaps = sorted(set(cfg.snapshot_times))
    if any(t < 0.0 or t > cfg.t_end * (1.0 + 1e-12) for t in snaps):
        raise ValueError("snapshot times must lie in [0, t_end]")
    if not snaps or not math.isclose(snaps[-1], cfg.t_end):
        snaps.append(cfg.t_end)

    # Pairs are fixed at t=0 and tracked by comoving label thereafter.
    label_pairs = _pairs_to_labels(cfg.distance_pairs, initial.s_max)

    times, states, metrics, curvatures, diagnostics = [], [], [], [], []

    def take_snapshot(st):
        metric = resample_arclength(st)
        cf = curvature(metric)
        times.append(st.t)
        states.append(st)
        metrics.append(metric)
        curvatures.append(cf)
        diagnostics.append(_diagnostics(st, cf, metric, zone, label_pairs))

    pending = list(snaps)
    if pending and pending[0] == 0.0:
        take_snapshot(state)
        pending.pop(0)

    steps = 0
    while pending:
        target = pending[0]
        while state.t < target * (1.0 - 1e-15):
            dt = cfg.safety * float(np.min(state.spacing())) ** 2 / 4.0
            if cfg.stepper == "semi_implicit":
                # Implicit treatment removes the parabolic bound; the step is
                # then limited by coefficient lag: a fraction of the elapsed
                # time and of the current curvature timescale.  The curvature
                # scale is read off the uniform resample: raw-grid values at a
                # gauge-collapsed tip carry 1/w^2-amplified noise and would
                # throttle dt for no accuracy gain.
                cf = curvature(resample_arclength(state), validate_tip=False)
                sup = float(np.max(np.maximum(np.abs(cf.k_rad), np.abs(cf.k_sph))))
                dt_lag = cfg.safety * min(0.2 * state.t + dt, 0.5 / (1.0 + sup))
                dt = max(dt, dt_lag)
            dt = min(dt, target - state.t)
            while True:
                try:
                    state = step(state, dt, ops, stepper=cfg.stepper, blow_up=blow_up)
                    break
                except StepRejected as err:
                    if not getattr(err, "retryable", False) or dt <= 1e-14:
                        raise
                    dt *= 0.3
            steps += 1
            if steps > cfg.max_steps:
                raise StepRejected(
                    f"exceeded {cfg.max_steps} steps before t={target}", t=state.t
                )
        take_snapshot(state)
        pending.pop(0)

    return FlowTrace(
        times=tuple(times),
        states=tuple(states),
        metrics=tuple(metrics),
        curvatures=tuple(curvatures),
        diagnostics=tuple(diagnostics),
        config=cfg,
    )


# ---------------------------------------------------------------------------
# oracles and example data
# ---------------------------------------------------------------------------


def exact_shrinking_sphere(r0, t, n_nodes=400) -> WarpedMetric:
    """The exact round solution at time t: radius r(t) = sqrt(r0^2 - 4t)."""
    r0 = float(r0)
    t = float(t)
    if t >= r0**2 / 4.0:
        raise Extinct(f"round solution from r0={r0} is extinct at t={t} (T = {r0**2 / 4.0})")
    return build_sphere(math.sqrt(r0**2 - 4.0 * t), n_nodes)


def exact_sphere_trace(r0, snapshot_times, n_nodes=400, distance_pairs=()) -> FlowTrace:
    """Closed-form trace of the shrinking round solution (for fitting oracles)."""
    cfg = FlowConfig(
        t_end=max(max(snapshot_times), 1e-12),
        snapshot_times=tuple(snapshot_times),
        distance_pairs=tuple(distance_pairs),
    )
    label_pairs = _pairs_to_labels(distance_pairs, math.pi * r0)
    times, states, metrics, curvatures, diagnostics = [], [], [], [], []
    for t in sorted(set(float(v) for v in snapshot_times)):
        metric = exact_shrinking_sphere(r0, t, n_nodes)
        r = math.sqrt(r0**2 - 4.0 * t)
        st = FlowState(
            t=t,
            x_grid=metric.grid.s_nodes / metric.s_max,
            phi=np.full(len(metric.w), metric.s_max),
            w=metric.w.copy(),
            topology="closed",
        )
        cf = curvature(metric)
        times.append(t)
        states.append(st)
        metrics.append(metric)
        curvatures.append(cf)
        diagnostics.append(_diagnostics(st, cf, metric, 0.0, label_pairs))
    return FlowTrace(tuple(times), tuple(states), tuple(metrics), tuple(curvatures),
                     tuple(diagnostics), cfg)


def build_dumbbell(neck=0.12, n_nodes=400) -> WarpedMetric:
    """Rotationally symmetric dumbbell on the 3-sphere with a thin equatorial neck.

    w(s) = sin(s) (neck + (1 - neck) cos^2 s) keeps unit tip slopes while the
    equator radius is neck; the flow pinches it in finite time.
    """
    if not 0.0 < neck < 1.0:
        raise ValueError("neck must lie in (0, 1)")
    grid = uniform_grid(math.pi, n_nodes, topology="closed")
    s = grid.s_nodes
    w = np.sin(s) * (neck + (1.0 - neck) * np.cos(s) ** 2)
    w = w.copy()
    w[-1] = 0.0
    return WarpedMetric(grid, w)
