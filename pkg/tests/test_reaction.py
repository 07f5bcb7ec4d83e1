"""Tests for the curvature-operator reaction ODEs and pinching sweeps.

Oracle: for equal eigenvalues the system collapses to lambda' = 2 lambda^2
with solution lambda(t) = c / (1 - 2 c t).  The scalar comparison
R(t) >= 1/(1/R0 - t/3) follows from R' = |Ric|^2 >= R^2/3 and is exact on the
equal-eigenvalue family.
"""

import math

import numpy as np
import pytest

from curveflow.errors import BlowUp, HypothesisViolated
from curveflow.reaction import (
    K_UNIVERSAL,
    N11Report,
    PinchingParams,
    ReactionState,
    integrate_reaction,
    n11_value,
    pinching_check,
    pinching_sweep,
    sample_admissible,
    verify_n11,
)


# ---------------------------------------------------------------------------
# states and parameters
# ---------------------------------------------------------------------------


def test_state_requires_ordered_eigenvalues():
    with pytest.raises(ValueError):
        ReactionState(1.0, 0.5, 2.0)


def test_state_derived_quantities():
    s = ReactionState(-1.0, 2.0, 3.0)
    assert s.ricci_eigs == (1.0, 2.0, 5.0)
    assert s.ric_min == 1.0
    assert s.scalar_r == 8.0
    assert s.ric_norm_sq == 1.0 + 4.0 + 25.0


def test_pinching_params_validation():
    p = PinchingParams(eps0=0.005)
    assert p.k == K_UNIVERSAL
    assert p.t_horizon == pytest.approx(1.0 / K_UNIVERSAL)
    assert p.eps(0.0) == pytest.approx(0.005)
    assert p.eps(0.01) == pytest.approx(0.005 * 2.0)
    with pytest.raises(ValueError):
        PinchingParams(eps0=0.02)
    with pytest.raises(ValueError):
        PinchingParams(eps0=0.005, k=-1.0)


# ---------------------------------------------------------------------------
# integration
# ---------------------------------------------------------------------------


def test_equal_eigenvalues_follow_the_closed_form():
    c = 0.3
    tr = integrate_reaction(ReactionState(c, c, c), t_end=1.0, dt=1e-4)
    exact = c / (1.0 - 2.0 * c * tr.times)
    for col in range(3):
        assert np.max(np.abs(tr.values[:, col] - exact) / exact) < 1e-8


def test_zero_state_is_a_fixed_point():
    tr = integrate_reaction(ReactionState(0.0, 0.0, 0.0), t_end=1.0, dt=1e-2)
    assert np.all(tr.values == 0.0)


def test_eigenvalue_ordering_is_preserved():
    rng = np.random.default_rng(7)
    for _ in range(20):
        trip = np.sort(rng.uniform(-0.5, 1.0, size=3))
        tr = integrate_reaction(ReactionState(*trip), t_end=0.3, dt=1e-3)
        assert np.all(np.diff(tr.values, axis=1) >= -1e-12)


def test_rk4_is_fourth_order():
    c = 0.4
    exact = c / (1.0 - 2.0 * c * 1.0)
    errs = []
    for dt in (1e-2, 5e-3):
        tr = integrate_reaction(ReactionState(c, c, c), t_end=1.0, dt=dt)
        errs.append(abs(tr.values[-1, 0] - exact))
    assert errs[0] / errs[1] > 14.0  # 2^4 = 16 up to higher-order terms


def test_scalar_comparison_bound_holds():
    # R' = |Ric|^2 >= R^2/3 integrates to R(t) >= 1/(1/R0 - t/3), with
    # equality exactly on the round family
    rng = np.random.default_rng(11)
    for _ in range(10):
        trip = np.sort(rng.uniform(0.05, 1.0, size=3))
        tr = integrate_reaction(ReactionState(*trip), t_end=0.5, dt=1e-3)
        r0 = tr.scalar_r[0]
        lower = 1.0 / (1.0 / r0 - tr.times / 3.0)
        assert np.all(tr.scalar_r >= lower * (1.0 - 1e-9))
    c = 0.2
    tr = integrate_reaction(ReactionState(c, c, c), t_end=0.5, dt=1e-3)
    r0 = 6.0 * c
    lower = 1.0 / (1.0 / r0 - tr.times / 3.0)
    assert np.max(np.abs(tr.scalar_r - lower) / lower) < 1e-9


def test_blow_up_is_bracketed():
    # lambda(t) = 1/(1-2t) blows up at t = 1/2
    with pytest.raises(BlowUp) as info:
        integrate_reaction(ReactionState(1.0, 1.0, 1.0), t_end=1.0, dt=1e-3)
    err = info.value
    assert err.t_lo < err.t_hi
    assert 0.49 < err.t_lo <= 0.5
    assert err.t_hi < 0.51


def test_integrate_rejects_bad_arguments():
    with pytest.raises(ValueError):
        integrate_reaction(ReactionState(0.0, 0.0, 0.0), t_end=1.0, dt=0.0)
    with pytest.raises(ValueError):
        integrate_reaction(ReactionState(0.0, 0.0, 0.0), t_end=-1.0, dt=0.1)


# ---------------------------------------------------------------------------
# pinching checks
# ---------------------------------------------------------------------------


def test_pinching_check_passes_on_admissible_data():
    params = PinchingParams(eps0=0.005)
    s0 = ReactionState(-0.001, 0.1, 0.5)  # ric_min = 0.099 >= -eps0/4
    tr = integrate_reaction(s0, t_end=params.t_horizon, dt=1e-4)
    for mode in ("ricci", "sectional"):
        rep = pinching_check(tr, params, mode=mode)
        assert rep.ok
        assert rep.min_margin > 0.0
        assert rep.first_violation is None
        assert rep.times_checked == len(tr.times)


def test_pinching_check_rejects_inadmissible_data():
    params = PinchingParams(eps0=0.005)
    tr = integrate_reaction(ReactionState(-0.01, 0.2, 0.5), t_end=0.001, dt=1e-4)
    with pytest.raises(HypothesisViolated):
        pinching_check(tr, params, mode="sectional")
    with pytest.raises(ValueError):
        pinching_check(tr, params, mode="weyl")


def test_sample_admissible_respects_the_hypothesis():
    rng = np.random.default_rng(3)
    eps0 = 0.008
    for mode in ("ricci", "sectional"):
        batch = sample_admissible(500, eps0, mode, rng)
        assert batch.shape == (500, 3)
        assert np.all(np.diff(batch, axis=1) >= 0.0)
        if mode == "ricci":
            assert np.all(batch[:, 0] + batch[:, 1] >= -eps0 / 4.0)
        else:
            assert np.all(batch[:, 0] >= -eps0 / 4.0)


def test_pinching_sweep_finds_no_violations():
    params = PinchingParams(eps0=0.005)
    for mode in ("ricci", "sectional"):
        rep = pinching_sweep(300, params, mode=mode, seed=5, dt=1e-3)
        assert rep.violations == 0
        assert rep.min_margin > 0.0
        assert rep.worst_initial is None
        assert rep.samples == 300


def test_pinching_sweep_is_deterministic():
    params = PinchingParams(eps0=0.005)
    a = pinching_sweep(100, params, mode="ricci", seed=9, dt=2e-3)
    b = pinching_sweep(100, params, mode="ricci", seed=9, dt=2e-3)
    assert a == b


# ---------------------------------------------------------------------------
# N11 positivity
# ---------------------------------------------------------------------------


def test_n11_value_hand_computed_point():
    # t=0, mu=nu=0: lam = -eps0, R = -eps0, and
    # N11 = eps0*(-eps0) + k*eps0 = k*eps0 - eps0^2
    eps0, k = 0.01, 100.0
    n11, lam, eps = n11_value(0.0, 0.0, 0.0, eps0, k)
    assert eps == pytest.approx(eps0)
    assert lam == pytest.approx(-eps0)
    assert n11 == pytest.approx(k * eps0 - eps0**2, rel=1e-12)


def test_n11_lambda_formula():
    t, mu, nu, eps0, k = 0.004, 3.0, 5.0, 0.005, 100.0
    n11, lam, eps = n11_value(t, mu, nu, eps0, k)
    assert eps == pytest.approx(eps0 * (1.0 + k * t))
    assert lam == pytest.approx(-(eps * t * (mu + nu) + eps) / (1.0 + eps * t))
    scalar = lam + mu + nu
    expected = (
        (mu - nu) ** 2
        + lam * (mu + nu)
        + 2.0 * eps * t * (lam**2 + mu**2 + nu**2)
        + eps * scalar
        + k * eps0 * t * scalar
        + k * eps0
    )
    assert n11 == pytest.approx(expected, rel=1e-14)


def test_verify_n11_positive_on_small_batches():
    for eps0 in (1e-3, 1e-2):
        rep = verify_n11(10_000, eps0, seed=2)
        assert isinstance(rep, N11Report)
        assert rep.samples == 10_000
        assert rep.nonpositive == 0
        assert rep.min_n11 > 0.0


def test_verify_n11_is_deterministic():
    a = verify_n11(5_000, 0.005, seed=4)
    b = verify_n11(5_000, 0.005, seed=4)
    assert a == b


def test_verify_n11_rejects_bad_eps0():
    with pytest.raises(ValueError):
        verify_n11(100, 0.02)
