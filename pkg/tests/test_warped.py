"""Geometry carrier: grids, warps, curvature, volumes, growth checks."""

import math

import numpy as np
import pytest

from curveflow.errors import (
    GridTooCoarse,
    OutOfDomain,
    PreconditionFailed,
    RegularityViolation,
)
from curveflow.warped import (
    MIN_NODES,
    RadialGrid,
    WarpedMetric,
    ball_volume,
    ball_volume_profile,
    build_cone,
    build_euclidean,
    build_sphere,
    build_wild,
    cone_warp,
    cone_warp_d1,
    cone_warp_d2,
    controlled_growth_check,
    curvature,
    graded_grid,
    load_warp_csv,
    resolve_profile,
    save_warp_csv,
    uniform_grid,
)


# ---------------------------------------------------------------------------
# grid and metric invariants
# ---------------------------------------------------------------------------


def test_grid_rejects_too_few_nodes():
    with pytest.raises(GridTooCoarse):
        RadialGrid(np.linspace(0.0, 1.0, MIN_NODES - 1))


def test_grid_rejects_nonzero_start_and_nonmonotone():
    with pytest.raises(ValueError):
        RadialGrid(np.linspace(0.1, 1.0, 20))
    s = np.linspace(0.0, 1.0, 20).copy()
    s[5] = s[7]
    with pytest.raises(ValueError):
        RadialGrid(s)


def test_grid_rejects_spacing_ratio_above_two():
    s = np.concatenate([np.linspace(0.0, 1.0, 11), 1.0 + 0.3 * np.arange(1, 10)])
    with pytest.raises(GridTooCoarse):
        RadialGrid(s)


def test_metric_invariants_enforced():
    grid = uniform_grid(1.0, 20)
    w = grid.s_nodes.copy()
    w[0] = 0.05
    with pytest.raises(RegularityViolation):
        WarpedMetric(grid, w)
    w = grid.s_nodes.copy()
    w[3] = -0.01
    with pytest.raises(RegularityViolation):
        WarpedMetric(grid, w)
    with pytest.raises(ValueError):
        WarpedMetric(grid, grid.s_nodes, fiber="torus")


def test_metric_arrays_read_only():
    m = build_euclidean(2.0, 32)
    with pytest.raises(ValueError):
        m.w[0] = 1.0
    with pytest.raises(ValueError):
        m.grid.s_nodes[0] = 1.0


# ---------------------------------------------------------------------------
# curvature: closed forms
# ---------------------------------------------------------------------------


def test_unit_sphere_curvature():
    m = build_sphere(1.0, 400)
    cf = curvature(m)
    assert np.max(np.abs(cf.k_rad - 1.0)) < 1e-8
    assert np.max(np.abs(cf.k_sph - 1.0)) < 1e-8
    assert np.max(np.abs(cf.scalar_r - 6.0)) < 1e-7
    assert np.max(np.abs(cf.ric_min - 2.0)) < 1e-7


def test_sphere_radius_scaling():
    m = build_sphere(2.0, 400)
    cf = curvature(m)
    assert np.max(np.abs(cf.k_rad - 0.25)) < 1e-8


def test_euclidean_curvature_vanishes():
    m = build_euclidean(4.0, 400)
    cf = curvature(m)
    assert np.max(np.abs(cf.k_rad)) < 1e-10
    assert np.max(np.abs(cf.k_sph)) < 1e-9
    assert np.max(np.abs(cf.scalar_r)) < 1e-9


def test_cone_curvature_against_symbolic_derivatives():
    # oracle: the exact warp derivatives give k_rad = -w''/w, k_sph = (1-w'^2)/w^2
    c, s_moll = 0.25, 0.5
    m = build_cone(c, s_max=6.0, n_nodes=600, s_moll=s_moll)
    cf = curvature(m)
    s = m.s[1:]
    w = cone_warp(s, c, s_moll)
    k_rad_exact = -cone_warp_d2(s, c, s_moll) / w
    k_sph_exact = (1.0 - cone_warp_d1(s, c, s_moll) ** 2) / w**2
    # the first nodes sit where the 0/0 regularization is least conditioned
    assert np.max(np.abs(cf.k_rad[1:] - k_rad_exact)) < 5e-3
    assert np.max(np.abs((cf.k_sph[1:] - k_sph_exact) / k_sph_exact)) < 2e-2
    assert np.max(np.abs((cf.k_sph[10:] - k_sph_exact[9:]) / k_sph_exact[9:])) < 1e-5
    # far field: k_rad ~ 0 and k_sph = (1-c)/(c s^2) = 3/s^2 at s in {1, 2, 4}
    for s_probe in (1.0, 2.0, 4.0):
        j = int(np.argmin(np.abs(m.s - s_probe)))
        assert abs(cf.k_rad[j]) < 1e-9
        assert cf.k_sph[j] == pytest.approx(3.0 / m.s[j] ** 2, rel=1e-9)


def test_curvature_trace_identity_everywhere():
    metrics = (
        build_sphere(1.3, 200),
        build_euclidean(3.0, 200),
        build_cone(0.5, 4.0, 200, s_moll=0.5),
    )
    for m in metrics:
        cf = curvature(m)
        assert np.max(np.abs(cf.scalar_r - (cf.ric_rad + 2.0 * cf.ric_sph))) < 1e-12
        assert np.max(np.abs(cf.ric_rad - 2.0 * cf.k_rad)) == 0.0
        assert np.max(np.abs(cf.ric_sph - (cf.k_rad + cf.k_sph))) == 0.0


def test_curvature_riem_sup_nondecreasing():
    cf = curvature(build_cone(0.25, 4.0, 300, s_moll=0.5))
    assert np.all(np.diff(cf.riem_sup) >= 0.0)
    assert cf.riem_sup[-1] == np.max(np.maximum(np.abs(cf.k_rad), np.abs(cf.k_sph)))


def test_curvature_gauge_independence_on_graded_grid():
    # same metric sampled on a smoothly non-uniform grid gives the same curvature
    r0 = 1.0
    uni = build_sphere(r0, 300)
    grid = graded_grid(math.pi * r0, 300, strength=0.3, topology="closed")
    w = r0 * np.sin(grid.s_nodes / r0)
    w = w.copy()
    w[-1] = 0.0
    graded = WarpedMetric(grid, w)
    cf_u = curvature(uni)
    cf_g = curvature(graded)
    assert np.max(np.abs(cf_g.k_rad - 1.0)) < 1e-6
    assert np.max(np.abs(cf_g.k_sph - 1.0)) < 1e-6
    assert np.max(np.abs(cf_u.k_rad - 1.0)) < np.max(np.abs(cf_g.k_rad - 1.0)) + 1e-6


def test_curvature_rejects_singular_tip_slope():
    # an unmollified cone has w'(0) = 0.5, not a smooth rotation centre
    grid = uniform_grid(2.0, 64)
    m = WarpedMetric(grid, 0.5 * grid.s_nodes)
    with pytest.raises(RegularityViolation):
        curvature(m)
    cf = curvature(m, validate_tip=False)
    assert np.isfinite(cf.k_sph[1:]).all()


def test_curvature_tip_values_equal_and_regular():
    m = build_sphere(1.0, 128)
    cf = curvature(m)
    assert cf.k_rad[0] == cf.k_sph[0]
    assert cf.k_rad[-1] == cf.k_sph[-1]
    assert cf.k_rad[0] == pytest.approx(1.0, abs=1e-9)


# ---------------------------------------------------------------------------
# volumes
# ---------------------------------------------------------------------------


def test_ball_volume_euclidean():
    m = build_euclidean(4.0, 400)
    assert ball_volume(m, 1.0) == pytest.approx(4.0 * math.pi / 3.0, abs=1e-8)


def test_ball_volume_full_sphere():
    m = build_sphere(1.0, 400)
    assert ball_volume(m, math.pi) == pytest.approx(2.0 * math.pi**2, abs=1e-6)


def test_ball_volume_cone_closed_form():
    m = build_cone(0.25, s_max=4.0, n_nodes=400, s_moll=0.01)
    assert ball_volume(m, 1.0) == pytest.approx(math.pi / 3.0, rel=1e-4)


def test_ball_volume_out_of_domain_and_monotone():
    m = build_euclidean(2.0, 100)
    with pytest.raises(OutOfDomain):
        ball_volume(m, 2.5)
    prof = ball_volume_profile(m)
    assert np.all(np.diff(prof) > 0.0)
    assert prof[-1] == pytest.approx(ball_volume(m, 2.0), rel=1e-12)


def test_ball_volume_fiber_area_quotient():
    grid = uniform_grid(2.0, 64)
    full = WarpedMetric(grid, grid.s_nodes, fiber="sphere2")
    half = WarpedMetric(grid, grid.s_nodes, fiber="rp3_link")
    assert ball_volume(half, 1.0) == pytest.approx(0.5 * ball_volume(full, 1.0), rel=1e-12)


# ---------------------------------------------------------------------------
# growth checks
# ---------------------------------------------------------------------------


def test_growth_check_euclidean_true():
    rep = controlled_growth_check(build_euclidean(6.0, 400), depth=1)
    assert rep and rep.curvature_ok and rep.hessian_ok
    assert rep.witness_r is None


def test_growth_check_cone_true():
    rep = controlled_growth_check(build_cone(0.25, 8.0, 600, s_moll=0.5), depth=1)
    assert rep.ok


def test_growth_check_wild_false_with_witness():
    rep = controlled_growth_check(build_wild(), depth=1)
    assert not rep.ok
    assert rep.witness_r is not None and rep.witness_r > 0.0


def test_growth_check_requires_open_topology():
    with pytest.raises(PreconditionFailed):
        controlled_growth_check(build_sphere(1.0, 64), depth=1)
    with pytest.raises(ValueError):
        controlled_growth_check(build_euclidean(2.0, 64), depth=0)


# ---------------------------------------------------------------------------
# profiles and serialization
# ---------------------------------------------------------------------------


def test_cone_warp_derivative_consistency():
    h = 1e-6
    s = np.linspace(10.0 * h, 0.3, 400)
    fd1 = (cone_warp(s + h, 0.25) - cone_warp(s - h, 0.25)) / (2.0 * h)
    assert np.max(np.abs(fd1 - cone_warp_d1(s, 0.25))) < 1e-8
    fd2 = (cone_warp_d1(s + h, 0.25) - cone_warp_d1(s - h, 0.25)) / (2.0 * h)
    inner = np.abs(s - 0.1) > 2.0 * h
    assert np.max(np.abs((fd2 - cone_warp_d2(s, 0.25))[inner])) < 1e-6


def test_cone_warp_tip_and_far_field():
    assert cone_warp_d1(np.array([0.0]), 0.25)[0] == 1.0
    s = np.linspace(0.12, 4.0, 50)
    assert np.max(np.abs(cone_warp(s, 0.25) - 0.5 * s)) < 1e-15


def test_warp_csv_round_trip(tmp_path):
    m = build_cone(0.3, 4.0, 120, s_moll=0.2)
    path = tmp_path / "warp.csv"
    save_warp_csv(path, m)
    back = load_warp_csv(path)
    assert np.array_equal(back.w, m.w)
    assert np.array_equal(back.grid.s_nodes, m.grid.s_nodes)
    assert back.grid.topology == "open"


def test_warp_csv_closed_topology_detected(tmp_path):
    m = build_sphere(1.0, 64)
    path = tmp_path / "sphere.csv"
    save_warp_csv(path, m)
    assert load_warp_csv(path).grid.topology == "closed"


def test_resolve_profile_forms(tmp_path):
    assert resolve_profile("euclidean", 64, 2.0).s_max == 2.0
    assert resolve_profile("sphere:2", 64).grid.topology == "closed"
    m = resolve_profile("cone:0.25:0.3", 64, 4.0)
    assert np.max(np.abs(m.w - cone_warp(m.s, 0.25, 0.3))) < 1e-15
    p = tmp_path / "w.csv"
    save_warp_csv(p, build_euclidean(2.0, 32))
    assert resolve_profile(f"custom:{p}", 64).s_max == 2.0
    with pytest.raises(ValueError):
        resolve_profile("klein-bottle")
