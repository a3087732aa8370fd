import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from blowup_lab.grid import (
    GridParameterError,
    RadialProfile,
    TailFitError,
    differentiate,
    fit_tail,
    integrate_cumulative,
    make_log_grid,
)
from blowup_lab.series import PowerSeries, SingularOriginError


def test_log_grid_uniform_in_log():
    g = make_log_grid(1e-3, 1e3, 2048, 1.0)
    dl = np.diff(np.log(g.nodes))
    assert np.allclose(dl, dl[0], rtol=1e-10)
    assert g.nodes[0] == 1e-3 and g.nodes[-1] == 1e3


def test_log_grid_rejects_small_n():
    with pytest.raises(GridParameterError):
        make_log_grid(1e-3, 1e3, 8)


def test_log_grid_rejects_bad_bounds():
    with pytest.raises(GridParameterError):
        make_log_grid(1.0, 0.5, 64)
    with pytest.raises(GridParameterError):
        make_log_grid(-1.0, 0.5, 64)


def test_weights_integrate_y6_on_unit_window():
    g = make_log_grid(1e-3, 1e3, 2048, d=7)
    f = RadialProfile(g, np.ones(g.n), origin_series=PowerSeries(0, (1.0,)))
    assert f.integral(hi=1.0) == pytest.approx(1 / 7, abs=1e-10)


def test_quadrature_exact_on_cubics():
    g = make_log_grid(0.1, 10.0, 128, d=3)
    vals = 2.0 + g.nodes - 0.5 * g.nodes**2 + 0.125 * g.nodes**3
    # integral of (cubic) * y^2 dy over [0.1, 10] computed exactly
    a, b = 0.1, 10.0
    exact = sum(c * (b ** (p + 3) - a ** (p + 3)) / (p + 3)
                for p, c in enumerate((2.0, 1.0, -0.5, 0.125)))
    assert g.integrate(vals) == pytest.approx(exact, rel=1e-13)


def test_differentiate_polynomial_exact():
    g = make_log_grid(1e-3, 1e3, 256)
    p = RadialProfile(g, g.nodes**2)
    assert np.max(np.abs(differentiate(p, 1).values - 2 * g.nodes)) < 1e-9
    assert np.max(np.abs(differentiate(p, 2).values - 2.0)) < 1e-9


def test_differentiate_constant_is_zero():
    g = make_log_grid(1e-2, 1e2, 64)
    p = RadialProfile(g, np.full(g.n, 3.5))
    assert np.max(np.abs(differentiate(p, 1).values)) < 1e-12


def test_differentiate_sin_fourth_order():
    g = make_log_grid(1e-3, 12.0, 2048)
    p = RadialProfile(g, np.sin(g.nodes))
    err = np.abs(differentiate(p, 1).values - np.cos(g.nodes))[4:-4].max()
    assert err < 1e-6


def test_differentiate_rejects_bad_order():
    g = make_log_grid(1e-2, 1e2, 64)
    p = RadialProfile(g, g.nodes)
    with pytest.raises(GridParameterError):
        differentiate(p, 3)


def test_refinement_gains_at_least_eight():
    errs = []
    for n in (1024, 2048):
        g = make_log_grid(1e-3, 12.0, n)
        p = RadialProfile(g, np.sin(g.nodes))
        errs.append(np.abs(differentiate(p, 1).values - np.cos(g.nodes))[4:-4].max())
    assert errs[0] / errs[1] >= 8.0


def test_cumulative_weight6():
    g = make_log_grid(1e-3, 1e3, 2048, d=7)
    f = RadialProfile(g, np.ones(g.n), origin_series=PowerSeries(0, (1.0,)))
    F = integrate_cumulative(f, 6)
    rel = np.abs(F.values - g.nodes**7 / 7) / (g.nodes**7 / 7)
    assert rel.max() < 1e-7


def test_cumulative_origin_series_power():
    g = make_log_grid(1e-3, 10.0, 512, d=7)
    f = RadialProfile(g, g.nodes**3, origin_series=PowerSeries(3, (1.0,)))
    F = integrate_cumulative(f, 6)
    assert F.values[0] == pytest.approx(g.nodes[0] ** 10 / 10, rel=1e-12)
    assert F.origin_series.leading_power == 10


def test_cumulative_rejects_divergent_origin():
    g = make_log_grid(1e-3, 10.0, 512, d=7)
    f = RadialProfile(g, g.nodes**-8.0, origin_series=PowerSeries(-8, (1.0,)))
    with pytest.raises(SingularOriginError):
        integrate_cumulative(f, 6)


def test_fit_tail_recovers_power_law():
    g = make_log_grid(1e-2, 1e4, 1024)
    f = RadialProfile(g, 5.0 / g.nodes**3)
    coeff, expo, err = fit_tail(f, (10.0, 1e3))
    assert coeff == pytest.approx(5.0, abs=1e-10)
    assert expo == pytest.approx(-3.0, abs=1e-10)
    assert err < 1e-12


def test_fit_tail_two_term_profile():
    # dominant y^-2 with a y^-3 correction: exponent within 1e-2
    a0, a1 = 2.7, 2.8
    g = make_log_grid(1e-2, 1e4, 1024)
    f = RadialProfile(g, 2 * a0 / g.nodes**2 - 3 * a1 / g.nodes**3)
    _, expo, _ = fit_tail(f, (1e2, 1e3))
    assert expo == pytest.approx(-2.0, abs=1e-2)


def test_fit_tail_flags_sign_change():
    g = make_log_grid(1e-2, 1e4, 1024)
    f = RadialProfile(g, np.sin(np.log(g.nodes)))
    with pytest.raises(TailFitError):
        fit_tail(f, (10.0, 1e3))


def test_integration_by_parts_duality():
    # |int f' g y^6 + int f (g y^6)' dy| small for compactly supported f, g
    g = make_log_grid(1e-3, 1e3, 4096, d=7)
    y = g.nodes
    f = np.exp(-((y - 3) / 0.8) ** 2)
    h = np.exp(-((y - 4) / 1.1) ** 2)
    fp = g.apply_diff(f, 1)
    gy6p = g.apply_diff(h * y**6, 1)
    lhs = g.integrate(fp * h) + float(g.interval_integrals(f * gy6p).sum())
    assert abs(lhs) < 1e-8 * g.integrate(np.abs(f * h)) + 1e-10


@settings(max_examples=20, deadline=None)
@given(st.lists(st.floats(-2, 2), min_size=4, max_size=4),
       st.floats(0.3, 3.0))
def test_quadrature_cubic_property(coeffs, scale):
    g = make_log_grid(0.5 * scale, 20.0 * scale, 96, d=4)
    y = g.nodes
    vals = sum(c * y**p for p, c in enumerate(coeffs))
    a, b = y[0], y[-1]
    exact = sum(c * (b ** (p + 4) - a ** (p + 4)) / (p + 4)
                for p, c in enumerate(coeffs))
    assert g.integrate(vals) == pytest.approx(exact, rel=1e-10, abs=1e-10)


@settings(max_examples=20, deadline=None)
@given(st.floats(1.2, 6.0), st.floats(-4.0, -0.5))
def test_fit_tail_property(coeff, expo):
    g = make_log_grid(1e-2, 1e4, 512)
    f = RadialProfile(g, coeff * g.nodes**expo)
    c, e, _ = fit_tail(f, (1.0, 1e3))
    assert c == pytest.approx(coeff, rel=1e-8)
    assert e == pytest.approx(expo, rel=1e-8)
