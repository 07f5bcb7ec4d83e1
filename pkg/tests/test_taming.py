"""Tests for conformal taming: towers, cutoffs, curvature formulas, sweep."""

import math

import numpy as np
import pytest

from curveflow.errors import (
    DomainTooSmall,
    OracleMismatch,
    PreconditionFailed,
)
from curveflow.taming import (
    ComparisonBoundsReport,
    ConformalProfile,
    CutoffProfile,
    ExpComparisonFunction,
    comparison_bounds_fit,
    conformal_ricci,
    conformal_riemann,
    growth_conditions_fit,
    tame,
    verify_taming,
)
from curveflow.warped import (
    build_cone,
    build_euclidean,
    build_sphere,
    build_wild,
    curvature,
)


def spread_of(fit):
    vals = [v for _, v in fit.margins]
    return (max(vals) - min(vals)) / max(max(vals), 1e-9)


# ---------------------------------------------------------------------------
# exponential towers
# ---------------------------------------------------------------------------


def test_tower_values_match_direct_composition():
    x = 0.7
    assert ExpComparisonFunction(1).value(x) == pytest.approx(math.exp(x), rel=1e-15)
    assert ExpComparisonFunction(2).value(x) == pytest.approx(
        math.exp(math.exp(x)), rel=1e-15
    )
    assert ExpComparisonFunction(3).value(x) == pytest.approx(
        math.exp(math.exp(math.exp(x))), rel=1e-14
    )


def test_tower_derivatives_match_finite_differences():
    x = np.linspace(0.0, 1.1, 7)
    eps = 1e-6
    for m in (1, 2, 3):
        h = ExpComparisonFunction(m)
        d1_fd = (h.value(x + eps) - h.value(x - eps)) / (2 * eps)
        d2_fd = (h.value(x + eps) - 2 * h.value(x) + h.value(x - eps)) / eps**2
        assert np.max(np.abs(h.d1(x) - d1_fd) / d1_fd) < 1e-8
        assert np.max(np.abs(h.d2(x) - d2_fd) / d2_fd) < 1e-3


def test_log_value_stays_finite_past_saturation():
    h = ExpComparisonFunction(2)
    assert not np.isfinite(h.value(7.0))  # e^{e^7} overflows a double
    assert h.log_value(7.0) == pytest.approx(math.exp(7.0), rel=1e-15)


def test_value_minus_at0_is_cancellation_free():
    h = ExpComparisonFunction(2)
    tiny = np.array([1e-14, 1e-10, 1e-6])
    # d/dx e^{e^x} at 0 is e, so the normalized value is e*x to first order
    assert np.allclose(h.value_minus_at0(tiny), math.e * tiny, rtol=1e-5)
    x = np.linspace(0.1, 1.3, 5)
    assert np.allclose(h.value_minus_at0(x), h.value(x) - h.value(0.0), rtol=1e-12)


def test_tower_dominates_single_exponential():
    x = np.linspace(0.0, 2.5, 40)
    for m in (1, 2, 3):
        h = ExpComparisonFunction(m)
        vals = h.value(x)
        finite = np.isfinite(vals)
        assert np.all(np.diff(vals[finite]) > 0)
        assert np.all(vals[finite] >= np.exp(x[finite]) - 1e-12)


def test_tower_depth_validation():
    with pytest.raises(ValueError):
        ExpComparisonFunction(0)
    with pytest.raises(ValueError):
        ExpComparisonFunction(-2)


# ---------------------------------------------------------------------------
# cutoff profiles
# ---------------------------------------------------------------------------


def test_cutoff_identically_zero_on_ball():
    for m in (1, 2):
        cp = CutoffProfile(ExpComparisonFunction(m), 1.5)
        r = np.linspace(0.0, 1.5, 31)
        assert np.all(cp.value(r) == 0.0)
        assert np.all(cp.d1(r) == 0.0)
        assert np.all(cp.d2(r) == 0.0)


def test_cutoff_normalization_offset():
    cp1 = CutoffProfile(ExpComparisonFunction(1), 2.0)
    assert cp1.offset == 1.0  # e^0
    cp2 = CutoffProfile(ExpComparisonFunction(2), 2.0)
    assert cp2.offset == pytest.approx(math.e, rel=1e-15)
    # value at i+1 is h(1) - h(0)
    assert cp1.value(np.array([3.0]))[0] == pytest.approx(math.e - 1.0, rel=1e-14)
    assert cp2.value(np.array([3.0]))[0] == pytest.approx(
        math.exp(math.e) - math.e, rel=1e-14
    )


def test_cutoff_derivatives_match_finite_differences():
    cp = CutoffProfile(ExpComparisonFunction(1), 1.0)
    r = np.linspace(0.5, 2.2, 9)
    eps = 1e-6
    d1_fd = (cp.value(r + eps) - cp.value(r - eps)) / (2 * eps)
    d2_fd = (cp.value(r + eps) - 2 * cp.value(r) + cp.value(r - eps)) / eps**2
    assert np.max(np.abs(cp.d1(r) - d1_fd)) < 1e-7
    assert np.max(np.abs(cp.d2(r) - d2_fd) / np.maximum(np.abs(d2_fd), 1.0)) < 1e-4


def test_cutoff_index_validation():
    with pytest.raises(ValueError):
        CutoffProfile(ExpComparisonFunction(1), 0.0)
    with pytest.raises(ValueError):
        CutoffProfile(ExpComparisonFunction(1), -1.0)


# ---------------------------------------------------------------------------
# inequality fits
# ---------------------------------------------------------------------------


def test_comparison_fit_contains_worked_constant():
    # |h_0'(1)| = 4e forces c >= 4e * e^{-e/8} in the first-derivative row
    rep = comparison_bounds_fit(ExpComparisonFunction(1), 0.125, (0.0,), y_span=1.5)
    assert isinstance(rep, ComparisonBoundsReport)
    target = 4.0 * math.e * math.exp(-math.e / 8.0)
    assert rep.report.fit("first-derivative").constant >= target - 1e-9
    assert rep.ok


def test_comparison_fit_depth2_index_independent():
    rep = comparison_bounds_fit(ExpComparisonFunction(2), 0.125, (1.0, 2.0, 4.0))
    assert rep.ok
    for fit in rep.report.fits:
        assert spread_of(fit) <= 0.10
    assert rep.saturation_radii == (None, None, None)


def test_comparison_fit_overflow_reports_radius():
    with pytest.raises(OverflowError, match="radius"):
        comparison_bounds_fit(ExpComparisonFunction(3), 0.125, (1.0,), y_span=2.5)


def test_comparison_fit_rejects_bad_args():
    with pytest.raises(ValueError):
        comparison_bounds_fit(ExpComparisonFunction(1), 0.0, (1.0,))
    with pytest.raises(ValueError):
        comparison_bounds_fit(ExpComparisonFunction(1), 0.125, (-1.0,))


def test_growth_conditions_uniform_over_indices():
    rep = growth_conditions_fit(ExpComparisonFunction(2), (1.0, 2.0, 4.0))
    assert rep.ok
    for fit in rep.fits:
        assert spread_of(fit) <= 0.10
    c1 = rep.fit("d1-vs-eighth").constant
    c2 = rep.fit("d1sq-vs-quarter").constant
    assert c2 == pytest.approx(c1**2, rel=1e-12)


# ---------------------------------------------------------------------------
# conformal profiles
# ---------------------------------------------------------------------------


def test_profile_psi_is_exactly_one_where_f_vanishes():
    m = build_euclidean(s_max=4.0, n_nodes=301)
    prof = ConformalProfile.from_cutoff(m, CutoffProfile(ExpComparisonFunction(1), 3.0))
    inside = m.grid.s_nodes <= 3.0
    assert np.all(prof.f[inside] == 0.0)
    assert np.all(prof.psi[inside] == 1.0)
    assert np.all(prof.psi >= 1.0)


def test_profile_rejects_negative_exponent():
    m = build_euclidean(s_max=4.0, n_nodes=301)
    with pytest.raises(ValueError):
        ConformalProfile.from_callables(
            m, lambda s: -0.1 + 0 * s, lambda s: 0 * s, lambda s: 0 * s
        )


def test_profile_rejects_overflowing_factor():
    m = build_euclidean(s_max=10.0, n_nodes=501)
    with pytest.raises(ValueError, match="overflow"):
        ConformalProfile.from_cutoff(m, CutoffProfile(ExpComparisonFunction(1), 2.0))


# ---------------------------------------------------------------------------
# the taming map
# ---------------------------------------------------------------------------


def test_tame_identity_when_index_beyond_domain():
    m = build_euclidean(s_max=4.0, n_nodes=301)
    assert tame(m, CutoffProfile(ExpComparisonFunction(1), 5.0)) is m


def test_tame_bit_for_bit_identity_on_ball():
    m = build_euclidean(s_max=8.0, n_nodes=1600)
    g = tame(m, CutoffProfile(ExpComparisonFunction(1), 2.0))
    n = g.grid.n_nodes
    inside = m.grid.s_nodes[:n] <= 2.0
    assert np.array_equal(g.grid.s_nodes[inside], m.grid.s_nodes[:n][inside])
    assert np.array_equal(g.w[inside], m.w[:n][inside])


def test_tame_euclid_matches_quadrature_oracle():
    from scipy.integrate import quad

    m = build_euclidean(s_max=4.0, n_nodes=2000)
    cut = CutoffProfile(ExpComparisonFunction(1), 1.0)
    g = tame(m, cut)
    s = m.grid.s_nodes[: g.grid.n_nodes]
    half = np.exp(cut.value(s) / 2.0)
    assert np.allclose(g.w, half * s, rtol=1e-13)
    integrand = lambda t: math.expm1(cut.value(np.array([t]))[0] / 2.0)
    for probe in (1.5, 1.9, 2.2):
        j = int(np.searchsorted(s, probe))
        assert j < len(s)
        expected = s[j] + quad(integrand, 1.0, s[j], limit=200)[0]
        assert g.grid.s_nodes[j] == pytest.approx(expected, rel=1e-8)


def test_tame_truncates_at_resolvability_wall():
    m = build_euclidean(s_max=8.0, n_nodes=1600)
    g = tame(m, CutoffProfile(ExpComparisonFunction(1), 2.0))
    assert g.grid.n_nodes < m.grid.n_nodes
    ds = np.diff(g.grid.s_nodes)
    assert np.all(ds > 0)
    assert np.max(ds[1:] / ds[:-1]) < 2.0
    cf = curvature(g, validate_tip=False)
    assert np.all(np.isfinite(cf.k_rad)) and np.all(np.isfinite(cf.k_sph))
    # the boundary has been pushed far away even though the grid was cut
    assert g.s_max > 100.0 * m.s_max


def test_tame_wild_base_identity_on_ball():
    m = build_wild()
    g = tame(m, CutoffProfile(ExpComparisonFunction(1), 2.0))
    n = g.grid.n_nodes
    inside = m.grid.s_nodes[:n] <= 2.0
    assert np.array_equal(g.w[inside], m.w[:n][inside])


def test_tame_rejects_closed_manifold():
    with pytest.raises(PreconditionFailed):
        tame(build_sphere(1.0, 101), CutoffProfile(ExpComparisonFunction(1), 0.5))


def test_tame_rejects_index_hugging_boundary():
    m = build_euclidean(s_max=8.0, n_nodes=1600)
    with pytest.raises(DomainTooSmall):
        tame(m, CutoffProfile(ExpComparisonFunction(1), 7.999))


# ---------------------------------------------------------------------------
# conformal curvature, dual-route
# ---------------------------------------------------------------------------


def test_constant_exponent_rescales_sphere_curvature():
    m = build_sphere(1.0, 801)
    lam = 0.6
    prof = ConformalProfile.from_callables(
        m, lambda s: lam + 0 * s, lambda s: 0 * s, lambda s: 0 * s
    )
    field = conformal_ricci(m, prof)
    assert np.max(np.abs(field.k_rad - math.exp(-lam))) < 1e-8
    assert np.max(np.abs(field.ric_rad - 2.0 * math.exp(-lam))) < 2e-8
    field2 = conformal_riemann(m, prof)
    assert np.max(np.abs(field2.k_sph - math.exp(-lam))) < 1e-8


def test_zero_profile_is_identity_on_unit_sphere():
    m = build_sphere(1.0, 801)
    prof = ConformalProfile.from_callables(
        m, lambda s: 0 * s, lambda s: 0 * s, lambda s: 0 * s
    )
    field = conformal_ricci(m, prof)
    assert np.max(np.abs(field.ric_rad - 2.0)) < 1e-8
    assert np.max(np.abs(field.ric_sph - 2.0)) < 1e-8
    field2 = conformal_riemann(m, prof)
    assert np.max(np.abs(field2.k_rad - 1.0)) < 1e-8


def test_dual_route_agreement_on_three_families():
    # each call raises OracleMismatch unless formula and direct recomputation
    # agree to 1e-6 relative; three distinct (base, profile) families
    m1 = build_euclidean(s_max=4.0, n_nodes=2000)
    p1 = ConformalProfile.from_callables(
        m1,
        lambda s: 0.1 * np.maximum(s - 1.0, 0.0) ** 4,
        lambda s: 0.4 * np.maximum(s - 1.0, 0.0) ** 3,
        lambda s: 1.2 * np.maximum(s - 1.0, 0.0) ** 2,
    )
    f1r = conformal_ricci(m1, p1)
    f1m = conformal_riemann(m1, p1)
    assert np.allclose(f1r.k_rad, f1m.k_rad, atol=1e-8)
    assert np.allclose(f1r.k_sph, f1m.k_sph, atol=1e-8)

    m2 = build_cone(0.25, s_max=4.0, n_nodes=2000, s_moll=0.5)
    p2 = ConformalProfile.from_cutoff(m2, CutoffProfile(ExpComparisonFunction(1), 3.0))
    conformal_ricci(m2, p2)
    conformal_riemann(m2, p2)

    m3 = build_sphere(1.0, 2001)
    p3 = ConformalProfile.from_callables(
        m3, lambda s: 0.3 + 0 * s, lambda s: 0 * s, lambda s: 0 * s
    )
    conformal_ricci(m3, p3)
    conformal_riemann(m3, p3)


def test_corrupted_profile_trips_oracle():
    m = build_euclidean(s_max=4.0, n_nodes=1000)
    good = ConformalProfile.from_callables(
        m,
        lambda s: 0.1 * np.maximum(s - 1.0, 0.0) ** 4,
        lambda s: 0.4 * np.maximum(s - 1.0, 0.0) ** 3,
        lambda s: 1.2 * np.maximum(s - 1.0, 0.0) ** 2,
    )
    bad = ConformalProfile(
        good.s, good.f, good.fp, 1.1 * np.asarray(good.fpp), good.psi, good.psip, good.psipp
    )
    with pytest.raises(OracleMismatch) as exc:
        conformal_ricci(m, bad)
    assert exc.value.rel_err > 1e-6
    assert exc.value.node is not None


def test_profile_from_wrong_grid_rejected():
    m = build_euclidean(s_max=4.0, n_nodes=1000)
    other = build_euclidean(s_max=4.0, n_nodes=900)
    prof = ConformalProfile.from_cutoff(other, CutoffProfile(ExpComparisonFunction(1), 3.0))
    with pytest.raises(ValueError):
        conformal_ricci(m, prof)


# ---------------------------------------------------------------------------
# the verification sweep
# ---------------------------------------------------------------------------


def test_verify_taming_euclidean_conclusions():
    base = build_euclidean(s_max=10.0, n_nodes=1000)
    rep = verify_taming(base, ExpComparisonFunction(1), (2.0, 4.0, 8.0), k=0.0)
    assert rep.ok
    v0 = rep.fit("volume-floor-r1").constant
    assert 0.98 * 4.0 * math.pi / 3.0 <= v0 <= 1.001 * 4.0 * math.pi / 3.0
    assert rep.fit("volume-floor-r2").constant > 0.9 * 32.0 * math.pi / 3.0
    assert spread_of(rep.fit("ricci-floor")) <= 0.10
    assert all(v == 1.0 for _, v in rep.fit("identity-on-ball").margins)


def test_verify_taming_cone_conclusions():
    base = build_cone(0.25, s_max=10.0, n_nodes=1000, s_moll=0.5)
    cf = curvature(base)
    k = max(0.0, -float(np.min(cf.ric_min[:-7]))) + 1e-6
    rep = verify_taming(base, ExpComparisonFunction(1), (2.0, 4.0, 8.0), k=k)
    assert rep.ok
    assert spread_of(rep.fit("ricci-floor")) <= 0.10
    assert rep.fit("volume-floor-r1").constant > 0.0
    assert all(v == 1.0 for _, v in rep.fit("identity-on-ball").margins)


def test_verify_taming_hypothesis_gate():
    base = build_cone(0.25, s_max=10.0, n_nodes=1000, s_moll=0.5)
    with pytest.raises(PreconditionFailed):
        verify_taming(base, ExpComparisonFunction(1), (2.0,), k=1.0)
