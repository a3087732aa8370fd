import math

import numpy as np
import pytest

from blowup_lab.grid import make_log_grid
from blowup_lab.stationary import (
    ConvergenceError,
    DomainError,
    closed_form_d2,
    extract_tail_constants,
    gamma_exponent,
    lambda_Q,
    ode_series_coeffs,
    solve_Q,
    solve_shrinker,
)


def test_gamma_exponent_values():
    assert gamma_exponent(7) == pytest.approx(2.0, abs=1e-14)
    assert gamma_exponent(8) == pytest.approx((6 - math.sqrt(8)) / 2, rel=1e-14)
    with pytest.raises(DomainError):
        gamma_exponent(6)


def test_series_coefficients_satisfy_ode():
    # residual of the truncated series in y^2 Q'' + 6 y Q' - 3 sin 2Q
    c = ode_series_coeffs(7, 6)
    y = np.linspace(1e-4, 5e-2, 50)
    Q = sum(ck * y ** (2 * k + 1) for k, ck in enumerate(c))
    Qp = sum((2 * k + 1) * ck * y ** (2 * k) for k, ck in enumerate(c))
    Qpp = sum((2 * k + 1) * 2 * k * ck * y ** (2 * k - 1) for k, ck in enumerate(c))
    resid = y**2 * Qpp + 6 * y * Qp - 3 * np.sin(2 * Q)
    assert np.max(np.abs(resid)) < 1e-13 * 5e-2  # truncation order y^13


def test_d2_closed_form():
    g = make_log_grid(1e-4, 60.0, 4096, d=2)
    Q = solve_Q(2, g, slope=2.0, y_max=60.0)
    mask = g.nodes <= 50.0
    err = np.abs(Q.profile.values - closed_form_d2(g.nodes))[mask]
    assert err.max() <= 1e-6


def test_d2_slope_one_is_rescaled_arctan():
    g = make_log_grid(1e-4, 120.0, 4096, d=2)
    Q = solve_Q(2, g, slope=1.0, y_max=120.0)
    mask = g.nodes <= 100.0
    err = np.abs(Q.profile.values - 2 * np.arctan(g.nodes / 2))[mask]
    assert err.max() <= 1e-6


def test_d7_limit_and_tail(qmap):
    assert abs(qmap.shoot_metadata["terminal_value"] - math.pi / 2) <= 1e-6
    assert qmap.gamma_fit == pytest.approx(2.0, abs=1e-2)
    assert qmap.a0 > 0 and qmap.a1 > 0


def test_d7_monotone_in_band(qmap):
    v = qmap.profile.values
    assert np.all(np.diff(v) > -1e-14)
    assert v.min() >= 0 and v.max() <= math.pi / 2 + 1e-9


def test_ode_residual_pointwise(qmap, grid7):
    # 1e-8 relative to the size of the terms actually being cancelled; near
    # the origin the two 1/y-scale terms dominate and set the rounding floor
    y = grid7.nodes
    q = qmap.profile.values
    qp = qmap.profile.d1
    qpp = grid7.apply_diff(q, 2)
    resid = qpp + 6 / y * qp - 3 / y**2 * np.sin(2 * q)
    tol = 1e-8 * (1 + np.abs(qpp) + 6 * np.abs(qp) / y)
    assert np.all(np.abs(resid[8:-8]) <= tol[8:-8])


def test_scaling_family(qmap, grid7):
    # Q(y/2) solves the same equation; check the ODE residual after resampling
    y = grid7.nodes
    mask = (y >= 1e-3) & (y <= 4e3)
    ys = y[mask]
    q = qmap(ys / 2)
    g = grid7
    full = np.zeros(g.n)
    full[mask] = q
    qp = g.apply_diff(full, 1)[mask]
    qpp = g.apply_diff(full, 2)[mask]
    resid = qpp + 6 / ys * qp - 3 / ys**2 * np.sin(2 * q)
    inner = (ys > 2e-3) & (ys < 2e3)
    tol = 1e-8 * (1 + np.abs(qpp) + 6 * np.abs(qp) / ys)
    assert np.all(np.abs(resid[inner]) <= tol[inner])


def test_extract_tail_constants_synthetic(grid7, qmap):
    # feed pi/2 - 3/y^2 + 5/y^3 through the extraction path
    from dataclasses import replace
    vals = math.pi / 2 - 3 / grid7.nodes**2 + 5 / grid7.nodes**3
    fake = replace(qmap, profile=qmap.profile.with_values(vals))
    a0, a1 = extract_tail_constants(fake)
    assert a0 == pytest.approx(3.0, abs=1e-8)
    assert a1 == pytest.approx(5.0, abs=1e-8)


def test_tail_constants_window_stability(qmap):
    a0_a, _ = extract_tail_constants(qmap, window=(1e2, 1e3))
    a0_b, _ = extract_tail_constants(qmap, window=(3e2, 3e3))
    assert abs(a0_a - a0_b) / a0_a <= 1e-3


def test_lambda_q_properties(qmap, grid7):
    lq = lambda_Q(qmap)
    y = grid7.nodes
    assert np.all(lq.values > 0)
    assert lq.origin_series.leading_power == 1
    i = grid7.index_at(3e3)
    assert y[i] ** 2 * lq.values[i] == pytest.approx(2 * qmap.a0, rel=1e-2)
    # consistency of the two a0 routes (Q tail vs LamQ tail)
    from blowup_lab.grid import fit_tail
    c, e, _ = fit_tail(lq, (1e2, 1e3))
    assert e == pytest.approx(-2.0, abs=2e-2)


def test_solve_q_rejects_low_dimension():
    with pytest.raises(DomainError):
        solve_Q(1)


def test_shrinkers_exist_below_seven():
    shots = solve_shrinker(5, np.geomspace(0.5, 30, 12))
    conv = [s for s in shots if s.converged]
    assert len(conv) >= 1
    assert any(s.intersections == 1 for s in conv)
    assert all(s.regular for s in conv)


def test_shrinker_indices_d4():
    shots = solve_shrinker(4, np.geomspace(0.5, 60, 16))
    conv = sorted((s for s in shots if s.converged), key=lambda s: s.slope)
    assert len(conv) >= 2
    assert conv[0].intersections == 1
    assert conv[1].intersections == 2


def test_no_shrinker_at_seven():
    shots = solve_shrinker(7, np.geomspace(0.01, 100, 21))
    assert all(not s.converged for s in shots)
    ends = [s.end_value for s in shots if np.isfinite(s.end_value)]
    assert max(ends) < math.pi / 2
