import numpy as np
import pytest

from blowup_lab.grid import RadialProfile
from blowup_lab.linearized import (
    adapted_derivatives,
    apply_A,
    apply_Astar,
    apply_L,
    apply_Ltilde,
    build_PhiM,
    invert_L,
    leibniz_consistency,
)
from blowup_lab.series import PowerSeries, SingularOriginError


def gaussian_bump(grid, center, width, power=3):
    y = grid.nodes
    vals = y**power * np.exp(-(((y - center) / width) ** 2))
    return RadialProfile(grid, vals)


def test_potential_limits(ctx):
    assert ctx.V.values[0] == pytest.approx(1.0, abs=1e-6)
    assert ctx.V.values[-1] == pytest.approx(-2.0, abs=1e-3)
    assert ctx.Z.values[0] == pytest.approx(6.0, abs=1e-6)
    assert ctx.Z.values[-1] == pytest.approx(-6.0, abs=1e-8)


def test_Z_from_V_identity(ctx):
    y = ctx.y
    lamV = y * ctx.V.d1
    resid = ctx.Z.values - (ctx.V.values**2 + lamV + 5 * ctx.V.values)
    assert np.max(np.abs(resid[8:-8])) < 1e-6


def test_Ztilde_from_V_identity(ctx):
    y = ctx.y
    lamV = y * ctx.V.d1
    resid = ctx.Ztilde - ((ctx.V.values + 1) ** 2 + 5 * (ctx.V.values + 1) - lamV)
    assert np.max(np.abs(resid)) < 1e-10


def test_kernel_of_A_and_L(ctx):
    lq = ctx.lam_q
    rel = ctx.norm(apply_A(ctx, lq)) / ctx.norm(lq)
    assert rel < 1e-8
    rel = ctx.norm(apply_L(ctx, lq)) / ctx.norm(lq)
    assert rel < 1e-8


def test_factorization_on_smooth_function(ctx):
    y = ctx.y
    f = RadialProfile(ctx.grid, y**3 * np.exp(-y),
                      origin_series=PowerSeries.from_terms([(3, 1.0), (4, -1.0)]))
    comp = apply_Astar(ctx, apply_A(ctx, f))
    direct = apply_L(ctx, f)
    scale = np.max(np.abs(direct.values[8:-8]))
    assert np.max(np.abs(comp.values[8:-8] - direct.values[8:-8])) / scale < 1e-6


def test_conjugate_factorization(ctx):
    y = ctx.y
    f = RadialProfile(ctx.grid, y**2 * np.exp(-y))
    comp = apply_A(ctx, apply_Astar(ctx, f))
    direct = apply_Ltilde(ctx, f)
    scale = np.max(np.abs(direct.values[8:-8]))
    assert np.max(np.abs(comp.values[8:-8] - direct.values[8:-8])) / scale < 1e-6


def test_adjointness(ctx):
    u = gaussian_bump(ctx.grid, 3.0, 0.7)
    w = gaussian_bump(ctx.grid, 4.0, 1.0)
    lhs = ctx.inner(apply_A(ctx, u), w)
    rhs = ctx.inner(u, apply_Astar(ctx, w))
    scale = ctx.norm(u) * ctx.norm(w)
    assert abs(lhs - rhs) / scale < 1e-8


def test_gamma_asymptotics(ctx):
    y = ctx.y
    G = ctx.Gamma
    i0 = ctx.grid.index_at(2e-4)
    i1 = ctx.grid.index_at(5e3)
    assert 7 * y[i0] ** 6 * G.values[i0] == pytest.approx(1.0, rel=1e-2)
    assert 2 * ctx.a0 * y[i1] ** 3 * G.values[i1] == pytest.approx(1.0, rel=1e-2)


def test_wronskian(ctx):
    # Gamma (LamQ)' - Gamma' LamQ = y^-6, with Gamma' finite-differenced so the
    # check exercises the quadrature construction, not the attached derivative
    y = ctx.y
    dG = ctx.grid.apply_diff(ctx.Gamma.values, 1)
    W = ctx.Gamma.values * ctx.lam_q.d1 - dG * ctx.lam_q.values
    mask = (y >= 0.1) & (y <= 100.0)
    assert np.max(np.abs(W[mask] - y[mask] ** -6.0) * y[mask] ** 6.0) <= 1e-6


def test_kernel_span_away_from_origin(ctx):
    y = ctx.y
    for c1, c2 in ((1.0, 0.0), (0.0, 1.0), (2.0, -3.0)):
        w = RadialProfile(ctx.grid, c1 * ctx.lam_q.values + c2 * ctx.Gamma.values,
                          d1=c1 * ctx.lam_q.d1 + c2 * ctx.Gamma.d1,
                          d2=c1 * ctx.lam_q.d2 + c2 * ctx.Gamma.d2)
        Lw = apply_L(ctx, w)
        mask = (y >= 0.5) & (y <= 1e3)
        scale = np.max(np.abs(w.values[mask]))
        assert np.max(np.abs(Lw.values[mask])) / scale < 1e-8


def test_invert_roundtrip(ctx):
    y = ctx.y
    f = RadialProfile(ctx.grid, y * np.exp(-(y**2)),
                      origin_series=PowerSeries.from_terms([(1, 1.0), (3, -1.0), (5, 0.5)]))
    w, Aw = invert_L(ctx, f)
    Lw = apply_L(ctx, w)
    assert np.max(np.abs(Lw.values - f.values)) <= 1e-6 * np.max(np.abs(f.values))
    # A w really is the first-stage integral
    Af = apply_A(ctx, w)
    mask = (y > 1e-3) & (y < 1e2)
    assert np.max(np.abs(Af.values[mask] - Aw.values[mask])) < 1e-6 * np.max(np.abs(Aw.values))


def test_invert_lamq_gives_minus_T1(ctx):
    w, _ = invert_L(ctx, ctx.lam_q)
    i = ctx.grid.index_at(3e3)
    y = ctx.y
    # w -> -a0/3 + (3 a1/2)/y at infinity
    assert w.values[i] == pytest.approx(-ctx.a0 / 3, rel=2e-3)
    assert y[i] * (w.values[i] + ctx.a0 / 3) == pytest.approx(1.5 * ctx.a1, rel=1e-2)
    assert w.origin_series.leading_power == 3
    assert w.origin_series.leading_coeff == pytest.approx(-1 / 18, rel=1e-12)


def test_invert_degree_shift(ctx):
    # admissible (0,0) input: output leading origin power 3, flat tail
    w, _ = invert_L(ctx, ctx.lam_q)
    assert w.origin_series.leading_power == 3
    from blowup_lab.grid import fit_tail
    _, slope, _ = fit_tail(w.with_values(-w.values), (1e3, 9e3))
    assert abs(slope) < 0.05


def test_invert_rejects_singular_origin(ctx):
    y = ctx.y
    f = RadialProfile(ctx.grid, y**-8.0, origin_series=PowerSeries(-8, (1.0,)))
    with pytest.raises(SingularOriginError):
        invert_L(ctx, f)


def test_adapted_derivatives_structure(ctx):
    y = ctx.y
    f = RadialProfile(ctx.grid, y**3 * np.exp(-y),
                      origin_series=PowerSeries.from_terms([(3, 1.0), (4, -1.0)]))
    fi = adapted_derivatives(ctx, f, 2)
    assert len(fi) == 3
    direct = apply_L(ctx, f)
    scale = np.max(np.abs(direct.values[8:-8]))
    assert np.max(np.abs(fi[2].values[8:-8] - direct.values[8:-8])) / scale < 1e-6


def test_adapted_derivatives_kernel(ctx):
    fi = adapted_derivatives(ctx, ctx.lam_q, 3)
    nrm = ctx.norm(ctx.lam_q)
    for prof in fi[1:]:
        assert ctx.norm(prof) / nrm < 1e-6


def test_adapted_derivatives_none(ctx):
    fi = adapted_derivatives(ctx, ctx.lam_q, 0)
    assert len(fi) == 1 and fi[0] is ctx.lam_q


def test_commutator_identity_on_T1(ctx, family):
    # L(Lam w) - Lam(L w) - 2 L w + (Lam Z / y^2) w = 0 for w = T1
    y = ctx.y
    w = family.T[1]
    Lw = apply_L(ctx, w)
    lam_w = RadialProfile(ctx.grid, y * w.deriv(1))
    lhs = apply_L(ctx, lam_w).values
    lam_Lw = y * Lw.deriv(1)
    lamZ = y * ctx.grid.apply_diff(ctx.Z.values, 1)
    resid = lhs - lam_Lw - 2 * Lw.values + lamZ / y**2 * w.values
    mask = (y > 1e-2) & (y < 1e3)
    scale = np.max(np.abs(Lw.values[mask])) + 1.0
    assert np.max(np.abs(resid[mask])) / scale < 1e-4


def test_leibniz_identity_multiplier(ctx):
    one = RadialProfile(ctx.grid, np.ones(ctx.grid.n),
                        origin_series=PowerSeries(0, (1.0,)))
    f = ctx.lam_q
    assert leibniz_consistency(ctx, one, f, 0) < 1e-10


def test_leibniz_k0_gaussian(ctx):
    y = ctx.y
    phi = RadialProfile(ctx.grid, np.exp(-(y**2)))
    assert leibniz_consistency(ctx, phi, ctx.lam_q, 0) < 1e-6


def test_leibniz_k1(ctx):
    y = ctx.y
    phi = RadialProfile(ctx.grid, 1.0 / (1.0 + y**2))
    f = RadialProfile(ctx.grid, y * np.exp(-y),
                      origin_series=PowerSeries.from_terms([(1, 1.0), (2, -1.0)]))
    assert leibniz_consistency(ctx, phi, f, 1) < 1e-5


def test_phim_orthogonality(ctx, family):
    T = family.T[:3]
    phi = build_PhiM(ctx, 50.0, T)
    for k in (1, 2):
        ip = ctx.inner(phi.profile, T[k], hi=2 * phi.M)
        denom = ctx.norm(phi.profile) * np.sqrt(
            max(ctx.inner(T[k], T[k], hi=2 * phi.M), 1e-300))
        assert abs(ip) / denom < 1e-8
    # <Phi_M, LamQ> = <chi_M LamQ, LamQ>
    ip0 = ctx.inner(phi.profile, ctx.lam_q, hi=2 * phi.M)
    assert ip0 == pytest.approx(phi.lamq_pairing, rel=1e-10)


def test_phim_pairing_growth(ctx, family):
    T = family.T[:3]
    vals = []
    for M in (20.0, 50.0, 100.0):
        vals.append(build_PhiM(ctx, M, T).lamq_pairing)
    slope = np.polyfit(np.log([20, 50, 100]), np.log(vals), 1)[0]
    assert slope == pytest.approx(3.0, abs=0.2)


def test_phim_coefficient_growth(ctx, family):
    T = family.T[:3]
    cs = {M: build_PhiM(ctx, M, T).c for M in (20.0, 50.0, 100.0)}
    for k in (1, 2):
        slope = np.polyfit(np.log([20, 50, 100]),
                           np.log([abs(cs[M][k]) for M in (20.0, 50.0, 100.0)]), 1)[0]
        assert slope <= 2 * k + 0.2


def test_phim_alternating_identity(ctx, family):
    # <L^i T_k, Phi_M> = (-1)^k <chi_M LamQ, LamQ> delta_ik, using
    # L^i T_k = (-1)^i T_(k-i) exactly from the hierarchy
    T = family.T[:3]
    phi = build_PhiM(ctx, 50.0, T)
    for i in range(3):
        for k in range(3):
            if i <= k:
                val = (-1) ** i * ctx.inner(T[k - i], phi.profile, hi=2 * phi.M)
            else:
                continue
            expected = (-1) ** k * phi.lamq_pairing if i == k else 0.0
            assert val == pytest.approx(expected, abs=1e-7 * abs(phi.lamq_pairing))


def test_phim_rejects_small_M(ctx, family):
    with pytest.raises(ValueError):
        build_PhiM(ctx, 5.0, family.T[:3])
