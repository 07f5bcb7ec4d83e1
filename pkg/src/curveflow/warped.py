"""Rotationally symmetric 3-metrics: representation, curvature, volume, growth checks.

A metric ds^2 + w(s)^2 g_fiber is stored as warp samples w over an arclength
grid.  All curvature quantities reduce to w and its first two derivatives;
the only delicate points are the rotation centres (w -> 0), which are handled
by parity-aware stencils and even extrapolation in s^2.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import GridTooCoarse, OutOfDomain, PreconditionFailed, RegularityViolation
from .numerics import (
    STENCIL_NPTS,
    DerivOp,
    as_readonly,
    atomic_write_text,
    cumulative_integral,
    format_float,
    integral_to,
    smoothstep7,
)

MIN_NODES = 16
MAX_SPACING_RATIO = 2.0
TIP_SLOPE_TOL = 1e-2

FIBER_AREA = {"sphere2": 4.0 * math.pi, "rp3_link": 2.0 * math.pi}


# ---------------------------------------------------------------------------
# domain types
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RadialGrid:
    """Strictly increasing arclength nodes from 0, quasi-uniform, with a topology tag.

    topology 'open' means a ball-like domain truncated at s_max (one rotation
    centre); 'closed' means a sphere-like manifold (warp vanishes at both ends).
    """

    s_nodes: np.ndarray
    topology: str = "open"

    def __post_init__(self):
        s = np.asarray(self.s_nodes, dtype=float)
        if s.ndim != 1:
            raise ValueError("s_nodes must be one-dimensional")
        if len(s) < MIN_NODES:
            raise GridTooCoarse(f"need at least {MIN_NODES} nodes, got {len(s)}")
        if s[0] != 0.0:
            raise ValueError(f"grid must start at 0, got {s[0]}")
        gaps = np.diff(s)
        if np.any(gaps <= 0.0):
            raise ValueError("s_nodes must be strictly increasing")
        ratio = np.max(gaps[1:] / gaps[:-1], initial=1.0)
        ratio = max(ratio, np.max(gaps[:-1] / gaps[1:], initial=1.0))
        if ratio > MAX_SPACING_RATIO * (1.0 + 1e-12):
            raise GridTooCoarse(
                f"adjacent spacing ratio {ratio:.3f} exceeds {MAX_SPACING_RATIO}"
            )
        if self.topology not in ("open", "closed"):
            raise ValueError(f"unknown topology {self.topology!r}")
        object.__setattr__(self, "s_nodes", as_readonly(s))

    @property
    def n_nodes(self):
        return len(self.s_nodes)

    @property
    def s_max(self):
        return float(self.s_nodes[-1])

    def spacing(self):
        return np.diff(self.s_nodes)


@dataclass(frozen=True)
class WarpedMetric:
    """Warp samples over a radial grid, plus the fiber geometry (dimension is 3)."""

    grid: RadialGrid
    w: np.ndarray
    fiber: str = "sphere2"

    n: int = field(default=3, init=False)

    def __post_init__(self):
        w = np.asarray(self.w, dtype=float)
        if w.shape != self.grid.s_nodes.shape:
            raise ValueError("warp and grid must have matching lengths")
        if self.fiber not in FIBER_AREA:
            raise ValueError(f"unknown fiber {self.fiber!r}")
        interior = w[1:-1] if self.grid.topology == "closed" else w[1:]
        if np.any(interior <= 0.0):
            raise RegularityViolation("warp must be positive away from rotation centres")
        if w[0] != 0.0:
            raise RegularityViolation(f"warp must vanish at the origin, got {w[0]}")
        if self.grid.topology == "closed" and w[-1] != 0.0:
            raise RegularityViolation(f"closed warp must vanish at s_max, got {w[-1]}")
        object.__setattr__(self, "w", as_readonly(w))

    @property
    def s(self):
        return self.grid.s_nodes

    @property
    def s_max(self):
        return self.grid.s_max

    @property
    def fiber_area(self):
        """Area of the unit fiber (4*pi for the round 2-sphere, halved for its quotient)."""
        return FIBER_AREA[self.fiber]

    def deriv_op(self):
        """Stencil operator with warp parity (odd at every rotation centre)."""
        right = "odd" if self.grid.topology == "closed" else None
        return DerivOp(self.grid.s_nodes, parity=("odd", right))


@dataclass(frozen=True)
class CurvatureField:
    """Sectional/Ricci/scalar curvature samples of a warped metric.

    k_rad: planes containing the radial direction (-w''/w); k_sph: fiber-tangent
    planes ((1-w'^2)/w^2); riem_sup[j] is the sup of max(|k_rad|, |k_sph|) over
    the ball of radius s_j about the origin (a running maximum).
    """

    grid: RadialGrid
    k_rad: np.ndarray
    k_sph: np.ndarray
    ric_rad: np.ndarray
    ric_sph: np.ndarray
    scalar_r: np.ndarray
    riem_sup: np.ndarray

    def __post_init__(self):
        for name in ("k_rad", "k_sph", "ric_rad", "ric_sph", "scalar_r", "riem_sup"):
            object.__setattr__(self, name, as_readonly(getattr(self, name)))

    @property
    def ric_min(self):
        """Pointwise smaller Ricci eigenvalue."""
        return np.minimum(self.ric_rad, self.ric_sph)


@dataclass(frozen=True)
class GrowthReport:
    """Verdict of controlled_growth_check, truthy iff both conditions hold.

    witness_r is the first radius where the curvature/growth comparison fails
    (None when it holds); hessian_R is the smallest radius beyond which the
    radial-distance Hessian bound w'/w <= k holds through the boundary (None
    when no such radius exists).
    """

    ok: bool
    curvature_ok: bool
    hessian_ok: bool
    witness_r: float | None
    hessian_R: float | None
    depth: int
    k_concavity: float

    def __bool__(self):
        return self.ok


# ---------------------------------------------------------------------------
# curvature
# ---------------------------------------------------------------------------


def _even_extrapolate(s_from_centre, values):
    """Value at the rotation centre of an even function sampled at 3 nearby radii.

    Quadratic interpolation in u = s^2, consistent with the stencil order for
    smooth metrics (even functions of s have O(s^6) residual after 3 terms).
    """
    u = s_from_centre**2
    out = 0.0
    for i in range(3):
        term = values[i]
        for j in range(3):
            if j != i:
                term *= u[j] / (u[j] - u[i])
        out += term
    return out


def curvature(m: WarpedMetric, *, tip_slope_tol=TIP_SLOPE_TOL, validate_tip=True) -> CurvatureField:
    """All curvature fields of a warped metric, with regularized rotation centres.

    At a centre both sectional curvatures coincide for smooth metrics; k_rad is
    obtained by even extrapolation in s^2 and k_sph is set equal to it, never by
    dividing by w -> 0.  Raises RegularityViolation when the one-sided warp
    slope at a centre is not +-1 within tip_slope_tol (pass validate_tip=False
    to analyse deliberately singular profiles).
    """
    s = m.grid.s_nodes
    w = m.w
    if m.grid.n_nodes < STENCIL_NPTS:
        raise GridTooCoarse("grid too small for curvature stencils")
    op = m.deriv_op()
    w1 = op.d1(w)
    w2 = op.d2(w)

    closed = m.grid.topology == "closed"
    if validate_tip:
        if abs(w1[0] - 1.0) > tip_slope_tol:
            raise RegularityViolation(
                f"warp slope at origin is {w1[0]!r}, expected 1 within {tip_slope_tol}"
            )
        if closed and abs(w1[-1] + 1.0) > tip_slope_tol:
            raise RegularityViolation(
                f"warp slope at s_max is {w1[-1]!r}, expected -1 within {tip_slope_tol}"
            )

    centre_idx = [0] + ([len(s) - 1] if closed else [])
    with np.errstate(divide="ignore", invalid="ignore"):
        k_rad = -w2 / w
        k_sph = (1.0 - w1**2) / w**2
    k_rad[0] = _even_extrapolate(s[1:4], k_rad[1:4])
    k_sph[0] = k_rad[0]
    if closed:
        k_rad[-1] = _even_extrapolate(s[-1] - s[-4:-1][::-1], k_rad[-4:-1][::-1])
        k_sph[-1] = k_rad[-1]

    ric_rad = 2.0 * k_rad
    ric_sph = k_rad + k_sph
    scalar_r = ric_rad + 2.0 * ric_sph
    riem_sup = np.maximum.accumulate(np.maximum(np.abs(k_rad), np.abs(k_sph)))
    return CurvatureField(
        grid=m.grid,
        k_rad=k_rad,
        k_sph=k_sph,
        ric_rad=ric_rad,
        ric_sph=ric_sph,
        scalar_r=scalar_r,
        riem_sup=riem_sup,
    )


# ---------------------------------------------------------------------------
# volume
# ---------------------------------------------------------------------------


def ball_volume(m: WarpedMetric, r) -> float:
    """Volume of the metric ball of radius r about the origin.

    For radius measured along the axis this is area(fiber) * int_0^r w(s)^2 ds;
    quadrature matches the stencil order so ratios against model volumes stay
    meaningful at small r.
    """
    r = float(r)
    if not 0.0 < r <= m.s_max * (1.0 + 1e-12):
        raise OutOfDomain(f"radius {r} outside (0, {m.s_max}]")
    r = min(r, m.s_max)
    return m.fiber_area * integral_to(m.w**2, m.grid.s_nodes, r)


def ball_volume_profile(m: WarpedMetric):
    """Ball volumes about the origin at every grid radius (index 0 is 0)."""
    return m.fiber_area * cumulative_integral(m.w**2, m.grid.s_nodes)


# ---------------------------------------------------------------------------
# growth checks
# ---------------------------------------------------------------------------


def _log_iterated_exp(r, depth):
    """log of the depth-fold iterated exponential of r, saturated near overflow."""
    out = np.asarray(r, dtype=float).copy()
    for _ in range(depth - 1):
        out = np.where(out > 700.0, np.inf, np.exp(np.minimum(out, 700.0)))
    return out


def controlled_growth_check(
    m: WarpedMetric,
    depth: int,
    k_concavity: float = 1.0,
    tail_fraction: float = 0.5,
    curvature_floor: float = 1e-9,
) -> GrowthReport:
    """Check curvature growth against the depth-fold iterated exponential, plus k-concavity.

    The growth condition is asymptotic (the ratio sup_{B_r}|Riem| / f(r) must
    tend to zero), so on a truncated domain the verdict inspects the outer
    tail_fraction of radii: the log-ratio must never increase there and must
    show net decay across the window.  curvature_floor clips |Riem| from below
    so that discretization noise on flat profiles cannot masquerade as growth.
    The concavity condition asks for a radius beyond which w'/w <= k holds
    through the boundary; to count as satisfied on a truncated domain the
    violation-free tail must cover at least the outer tenth of the radii.
    """
    if depth < 1:
        raise ValueError("depth must be >= 1")
    if m.grid.topology != "open":
        raise PreconditionFailed("growth checks are defined for open topology only")
    cf = curvature(m, validate_tip=False)
    s = m.grid.s_nodes
    radii = s[1:]
    sup = np.maximum(cf.riem_sup[1:], curvature_floor)
    log_ratio = np.log(sup) - _log_iterated_exp(radii, depth)

    start = int(np.searchsorted(radii, (1.0 - tail_fraction) * m.s_max))
    start = min(start, len(radii) - 2)
    tail = log_ratio[start:]
    rises = np.nonzero(np.diff(tail) > 1e-12)[0]
    witness_r = None
    if len(rises):
        curvature_ok = False
        witness_r = float(radii[start + rises[0] + 1])
    elif not tail[-1] < tail[0] - 1e-9:
        curvature_ok = False
        witness_r = float(radii[-1])
    else:
        curvature_ok = True

    op = m.deriv_op()
    slope_ratio = op.d1(m.w)[1:] / m.w[1:]
    bad = np.nonzero(slope_ratio > k_concavity)[0]
    persist_r = 0.9 * m.s_max
    if len(bad) == 0:
        hessian_R = float(radii[0])
        hessian_ok = True
    elif bad[-1] + 1 < len(radii) and radii[bad[-1] + 1] <= persist_r:
        hessian_R = float(radii[bad[-1] + 1])
        hessian_ok = True
    else:
        hessian_R = None
        hessian_ok = False
        if witness_r is None:
            witness_r = float(radii[bad[-1]])

    return GrowthReport(
        ok=curvature_ok and hessian_ok,
        curvature_ok=curvature_ok,
        hessian_ok=hessian_ok,
        witness_r=witness_r,
        hessian_R=hessian_R,
        depth=depth,
        k_concavity=k_concavity,
    )


# ---------------------------------------------------------------------------
# warp profiles
# ---------------------------------------------------------------------------


def uniform_grid(s_max, n_nodes, topology="open") -> RadialGrid:
    """Equally spaced grid on [0, s_max]."""
    return RadialGrid(np.linspace(0.0, float(s_max), int(n_nodes)), topology)


def graded_grid(s_max, n_nodes, strength=0.3, topology="open") -> RadialGrid:
    """Smoothly non-uniform grid (sinusoidal stretch), for gauge-independence tests."""
    if not 0.0 <= strength <= 1.0 / 3.0:
        raise ValueError("strength must lie in [0, 1/3] to keep spacing quasi-uniform")
    x = np.linspace(0.0, 1.0, int(n_nodes))
    s = float(s_max) * (x - strength * np.sin(2.0 * math.pi * x) / (2.0 * math.pi))
    s[0] = 0.0
    return RadialGrid(s, topology)


def build_sphere(r0, n_nodes=400, fiber="sphere2") -> WarpedMetric:
    """Round 3-sphere of radius r0: w(s) = r0 sin(s/r0) on [0, pi*r0]."""
    r0 = float(r0)
    if r0 <= 0.0:
        raise ValueError("sphere radius must be positive")
    grid = uniform_grid(math.pi * r0, n_nodes, topology="closed")
    w = r0 * np.sin(grid.s_nodes / r0)
    w = w.copy()
    w[-1] = 0.0
    return WarpedMetric(grid, w, fiber)


def build_euclidean(s_max=4.0, n_nodes=400, fiber="sphere2") -> WarpedMetric:
    """Flat space: w(s) = s, truncated at s_max."""
    grid = uniform_grid(s_max, n_nodes, topology="open")
    return WarpedMetric(grid, grid.s_nodes.copy(), fiber)


def cone_warp(s, c, s_moll=0.1):
    """Warp of the smoothed cone of slope sqrt(c): exactly sqrt(c)*s for s >= s_moll.

    Inside [0, s_moll] the slope blends from 1 at the tip down through a dip so
    that the integrated warp rejoins the exact cone at s_moll with three
    continuous derivatives; the blend is odd-compatible at the tip through s^5.
    """
    if not 0.0 < c <= 1.0:
        raise ValueError("cone aperture c must lie in (0, 1]")
    s = np.asarray(s, dtype=float)
    rc = math.sqrt(c)
    tau = np.clip(s / s_moll, 0.0, 1.0)
    # int_0^tau of the unit blend 1 - B(u) - 315 u^4(1-u)^4, which has mean 0:
    int_b = 7.0 * tau**5 - 14.0 * tau**6 + 10.0 * tau**7 - 2.5 * tau**8
    int_bump = tau**5 / 5.0 - 2.0 * tau**6 / 3.0 + 6.0 * tau**7 / 7.0 - tau**8 / 2.0 + tau**9 / 9.0
    blend = tau - int_b - 315.0 * int_bump
    return rc * s + (1.0 - rc) * s_moll * blend


def cone_warp_d1(s, c, s_moll=0.1):
    """Exact first derivative of cone_warp."""
    s = np.asarray(s, dtype=float)
    rc = math.sqrt(c)
    tau = np.clip(s / s_moll, 0.0, 1.0)
    g = 1.0 - smoothstep7(tau) - 315.0 * tau**4 * (1.0 - tau) ** 4
    return rc + (1.0 - rc) * g


def cone_warp_d2(s, c, s_moll=0.1):
    """Exact second derivative of cone_warp (zero outside the blend)."""
    s = np.asarray(s, dtype=float)
    rc = math.sqrt(c)
    tau = s / s_moll
    inside = (tau > 0.0) & (tau < 1.0)
    t = np.clip(tau, 0.0, 1.0)
    gp = -140.0 * t**3 * (1.0 - t) ** 3 - 315.0 * (
        4.0 * t**3 * (1.0 - t) ** 4 - 4.0 * t**4 * (1.0 - t) ** 3
    )
    return np.where(inside, (1.0 - rc) * gp / s_moll, 0.0)


def build_cone(c, s_max=4.0, n_nodes=400, s_moll=0.1, fiber="sphere2") -> WarpedMetric:
    """Smoothed cone over the unit fiber with aperture c in (0, 1]."""
    if not 0.0 < s_moll < s_max:
        raise ValueError("mollification radius must lie inside the domain")
    grid = uniform_grid(s_max, n_nodes, topology="open")
    return WarpedMetric(grid, cone_warp(grid.s_nodes, c, s_moll), fiber)


def build_wild(s_max=8.0, n_nodes=800, fiber="sphere2") -> WarpedMetric:
    """Synthetic profile w = s(1 + 0.4 sin(e^s)) whose curvature grows like e^{2s}.

    Deliberately fails controlled growth; its tip slope is also incompatible
    with a smooth centre, so analyse it with validate_tip=False paths only.
    """
    grid = uniform_grid(s_max, n_nodes, topology="open")
    s = grid.s_nodes
    return WarpedMetric(grid, s * (1.0 + 0.4 * np.sin(np.exp(s))), fiber)


def save_warp_csv(path, m: WarpedMetric):
    """Write the warp profile as CSV with header s,w at round-trip precision."""
    lines = ["s,w"]
    for sv, wv in zip(m.grid.s_nodes, m.w):
        lines.append(f"{format_float(sv)},{format_float(wv)}")
    atomic_write_text(path, "\n".join(lines) + "\n")


def load_warp_csv(path, fiber="sphere2") -> WarpedMetric:
    """Read a warp profile written by save_warp_csv (or any s,w CSV)."""
    with open(path, newline="") as handle:
        reader = csv.reader(handle)
        header = next(reader)
        if [h.strip() for h in header] != ["s", "w"]:
            raise ValueError(f"expected header 's,w', got {header}")
        rows = [(float(a), float(b)) for a, b in reader]
    s = np.array([r[0] for r in rows])
    w = np.array([r[1] for r in rows])
    topology = "closed" if w[-1] == 0.0 else "open"
    return WarpedMetric(RadialGrid(s, topology), w, fiber)


def resolve_profile(name, n_nodes=400, s_max=4.0, fiber="sphere2") -> WarpedMetric:
    """Build a metric from a profile string.

    Accepted forms: 'euclidean', 'sphere:r0', 'cone:c' or 'cone:c:s_moll',
    'custom:path' (CSV with header s,w), and 'wild' (the synthetic growth-check
    counterexample).
    """
    parts = str(name).split(":")
    kind = parts[0]
    if kind == "euclidean" and len(parts) == 1:
        return build_euclidean(s_max, n_nodes, fiber)
    if kind == "sphere" and len(parts) == 2:
        return build_sphere(float(parts[1]), n_nodes, fiber)
    if kind == "cone" and len(parts) in (2, 3):
        s_moll = float(parts[2]) if len(parts) == 3 else 0.1
        return build_cone(float(parts[1]), s_max, n_nodes, s_moll, fiber)
    if kind == "custom" and len(parts) == 2:
        return load_warp_csv(parts[1], fiber)
    if kind == "wild" and len(parts) == 1:
        return build_wild(max(s_max, 8.0), max(n_nodes, 800), fiber)
    raise ValueError(f"unknown warp profile {name!r}")
