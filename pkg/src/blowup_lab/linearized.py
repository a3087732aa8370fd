"""The linearized Hamiltonian around Q for d = 7 and its explicit inversion.

With Z = 6 cos(2Q), the operator and its first-order factorization are

    L f  = -f'' - (6/y) f' + (Z/y^2) f = A* A f,
    A w  = -w' + (V/y) w,          V = y (LamQ)' / LamQ,
    A* w = w' + ((6 + V)/y) w  =  (1/(y^6 LamQ)) d/dy (y^6 LamQ w),

so L(LamQ) = 0 and the adjoint convention is the measure y^6 dy.  The second
kernel element Gamma is fixed here as the positive decaying solution

    Gamma(y) = LamQ(y) * integral_y^inf dxi / (xi^6 LamQ(xi)^2),

which behaves like 1/(7 y^6) at the origin and 1/(2 a0 y^3) at infinity and
satisfies Gamma (LamQ)' - Gamma' LamQ = y^-6.  Inversion is the two-step
quadrature

    A w = (1/(y^6 LamQ)) integral_0^y f LamQ x^6 dx,
    w   = -LamQ integral_0^y (A w / LamQ) dx,

whose definite integrals from 0 exclude both homogeneous solutions; no
nullspace freedom is exposed.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .cutoff import chi_scaled
from .grid import RadialGrid, RadialProfile, TailModel, integrate_cumulative
from .series import PowerSeries, SingularOriginError, compose_cos
from .stationary import StationaryMap, lambda_Q

__all__ = [
    "LinearizedContext",
    "build_context",
    "apply_A",
    "apply_Astar",
    "apply_L",
    "apply_Ltilde",
    "compute_Gamma",
    "invert_L",
    "adapted_derivatives",
    "build_PhiM",
    "leibniz_consistency",
    "PhiMDirection",
]


@dataclass(frozen=True)
class LinearizedContext:
    """Q with every derived field the linear theory needs, all on one grid."""

    Q: StationaryMap
    lam_q: RadialProfile
    V: RadialProfile
    Z: RadialProfile
    Ztilde: np.ndarray
    Gamma: RadialProfile
    a0: float
    a1: float
    _y6_lamq: np.ndarray = field(repr=False, default=None)

    @property
    def grid(self) -> RadialGrid:
        return self.Q.grid

    @property
    def y(self) -> np.ndarray:
        return self.grid.nodes

    def inner(self, f, g, hi: float | None = None) -> float:
        """<f, g> = integral f g y^6 dy (d = 7 measure)."""
        fv = f.values if isinstance(f, RadialProfile) else np.asarray(f)
        gv = g.values if isinstance(g, RadialProfile) else np.asarray(g)
        return self.grid.integrate(fv * gv, hi=hi)

    def norm(self, f) -> float:
        return float(np.sqrt(max(self.inner(f, f), 0.0)))


def build_context(Q: StationaryMap) -> LinearizedContext:
    if Q.d != 7:
        raise ValueError("the linearized machinery is built at d = 7")
    grid = Q.grid
    y = grid.nodes
    lam = lambda_Q(Q)

    u, up, upp = lam.values, lam.d1, lam.d2
    V_vals = y * up / u
    V_d1 = up / u + y * upp / u - y * (up / u) ** 2
    lam_series = lam.origin_series
    V_series = lam_series.derivative().shift(1).divide(lam_series)
    V_prof = RadialProfile(grid, V_vals, origin_series=V_series, d1=V_d1,
                           tail_model=TailModel(-2.0, 0.0))

    q_series = Q.profile.origin_series
    Z_vals = 6.0 * np.cos(2.0 * Q.profile.values)
    Z_series = compose_cos(q_series.scaled(2.0)).scaled(6.0)
    Z_prof = RadialProfile(grid, Z_vals, origin_series=Z_series,
                           tail_model=TailModel(-6.0, 0.0))

    lam_V = y * V_d1
    Ztilde = (V_vals + 1.0) ** 2 + 5.0 * (V_vals + 1.0) - lam_V

    ctx = LinearizedContext(Q=Q, lam_q=lam, V=V_prof, Z=Z_prof, Ztilde=Ztilde,
                            Gamma=None, a0=Q.a0, a1=Q.a1)
    object.__setattr__(ctx, "_y6_lamq", y**6 * u)
    gamma = compute_Gamma(ctx)
    object.__setattr__(ctx, "Gamma", gamma)
    return ctx


def _series_or_none(*parents):
    for p in parents:
        if p is None:
            return False
    return True


def _check_origin_power(f: RadialProfile, minimum: int, what: str) -> None:
    if f.origin_series is None:
        return
    lead = f.origin_series.leading_power
    if lead is not None and lead < minimum:
        raise SingularOriginError(
            f"{what} needs origin leading power >= {minimum}, got {lead}")


def apply_A(ctx: LinearizedContext, f: RadialProfile) -> RadialProfile:
    """A f = -f' + (V/y) f."""
    y = ctx.y
    vals = -f.deriv(1) + ctx.V.values / y * f.values
    series = None
    if f.origin_series is not None:
        series = ctx.V.origin_series.shift(-1).mul(f.origin_series) \
            - f.origin_series.derivative()
    return RadialProfile(ctx.grid, vals, origin_series=series)


def apply_Astar(ctx: LinearizedContext, f: RadialProfile) -> RadialProfile:
    """A* f = f' + ((6 + V)/y) f."""
    y = ctx.y
    vals = f.deriv(1) + (6.0 + ctx.V.values) / y * f.values
    series = None
    if f.origin_series is not None:
        six_plus_V = PowerSeries(0, (6.0,)) + ctx.V.origin_series
        series = f.origin_series.derivative() \
            + six_plus_V.shift(-1).mul(f.origin_series)
    return RadialProfile(ctx.grid, vals, origin_series=series)


def apply_L(ctx: LinearizedContext, f: RadialProfile) -> RadialProfile:
    """L f = -f'' - (6/y) f' + (Z/y^2) f; f must be regular enough at 0."""
    _check_origin_power(f, 1, "apply_L")
    y = ctx.y
    vals = -f.deriv(2) - 6.0 / y * f.deriv(1) + ctx.Z.values / y**2 * f.values
    series = None
    if f.origin_series is not None:
        series = (ctx.Z.origin_series.shift(-2).mul(f.origin_series)
                  - f.origin_series.derivative().derivative()
                  - f.origin_series.derivative().shift(-1).scaled(6.0))
    return RadialProfile(ctx.grid, vals, origin_series=series)


def apply_Ltilde(ctx: LinearizedContext, f: RadialProfile) -> RadialProfile:
    """Conjugate flow Ltilde f = -f'' - (6/y) f' + (Ztilde/y^2) f (values only)."""
    y = ctx.y
    vals = -f.deriv(2) - 6.0 / y * f.deriv(1) + ctx.Ztilde / y**2 * f.values
    return RadialProfile(ctx.grid, vals)


def compute_Gamma(ctx: LinearizedContext) -> RadialProfile:
    """The decaying kernel element, with exact derivatives and origin series.

    The integral to infinity is completed beyond the grid with the analytic
    tail of 1/(y^6 LamQ^2) built from (a0, a1).
    """
    grid = ctx.grid
    y = grid.nodes
    u, up = ctx.lam_q.values, ctx.lam_q.d1
    if np.any(u <= 0):
        raise ValueError("LamQ must be strictly positive on the grid")
    h = 1.0 / (y**6 * u * u)
    a0 = ctx.a0
    Y = y[-1]
    # integral_Y^inf h with LamQ ~ 2 a0/x^2 - 3 a1/x^3:
    # h ~ (1/(4 a0^2)) (x^-2 + 3 (a1/a0) x^-3 + ...)
    tail = (1.0 / (4 * a0 * a0)) * (1.0 / Y + 1.5 * (ctx.a1 / a0) / Y**2)
    G = grid.cumulative_reverse(h) + tail
    gamma_vals = u * G

    # origin series: G = G0 - P(y) with P the indefinite primitive of the
    # series of h (leading power -8), G0 fixed numerically at y_1
    u_series = ctx.lam_q.origin_series
    h_series = PowerSeries(0, (1.0,)).divide(u_series.mul(u_series).shift(6))
    P = _indefinite_primitive(h_series)
    G0 = float(G[0] + P(y[0]))
    G_series = PowerSeries.from_terms([(0, G0)]) - P
    gamma_series = u_series.mul(G_series)

    d1 = up * G - u * h
    hprime = -6.0 * h / y - 2.0 * h * up / u
    d2 = ctx.lam_q.d2 * G - 2.0 * up * h - u * hprime
    return RadialProfile(grid, gamma_vals, origin_series=gamma_series,
                         tail_model=TailModel(1.0 / (2 * a0), -3.0),
                         d1=d1, d2=d2)


def _indefinite_primitive(s: PowerSeries) -> PowerSeries:
    """Term-by-term primitive allowing negative powers (no y^-1 term)."""
    out = []
    for p, c in s.terms():
        if p == -1:
            raise SingularOriginError("series primitive undefined for y^-1 term")
        out.append((p + 1, c / (p + 1)))
    return PowerSeries.from_terms(out)


def invert_L(ctx: LinearizedContext, f: RadialProfile
             ) -> tuple[RadialProfile, RadialProfile]:
    """Solve L w = f by the two-step quadrature; returns (w, A w).

    Requires f LamQ y^6 integrable at the origin (checked through the origin
    series when present).  The returned w carries the propagated origin
    series, so iterated inversions keep analytic control of the origin.
    """
    grid = ctx.grid
    y = grid.nodes
    u = ctx.lam_q.values
    u_series = ctx.lam_q.origin_series

    series1 = None
    if f.origin_series is not None:
        series1 = f.origin_series.mul(u_series)
    integrand1 = RadialProfile(grid, f.values * u, origin_series=series1)
    I1 = integrate_cumulative(integrand1, 6)

    Aw_vals = I1.values / (ctx._y6_lamq)
    Aw_series = None
    if I1.origin_series is not None:
        Aw_series = I1.origin_series.shift(-6).divide(u_series)
    Aw = RadialProfile(grid, Aw_vals, origin_series=Aw_series)

    series2 = None
    if Aw_series is not None:
        series2 = Aw_series.divide(u_series)
    integrand2 = RadialProfile(grid, Aw_vals / u, origin_series=series2)
    I2 = integrate_cumulative(integrand2, 0)

    w_vals = -u * I2.values
    w_series = None
    if I2.origin_series is not None:
        w_series = I2.origin_series.mul(u_series).scaled(-1.0)
    w = RadialProfile(grid, w_vals, origin_series=w_series)
    return w, Aw


def adapted_derivatives(ctx: LinearizedContext, f: RadialProfile, i_max: int
                        ) -> list[RadialProfile]:
    """f_0 = f, then alternately A and A*: f_1 = A f_0, f_2 = A* f_1 = L f, ..."""
    out = [f]
    for i in range(i_max):
        op = apply_A if i % 2 == 0 else apply_Astar
        out.append(op(ctx, out[-1]))
    return out


@dataclass(frozen=True)
class PhiMDirection:
    """The localized direction whose L-iterates fix the modulation parameters."""

    M: float
    profile: RadialProfile
    c: np.ndarray                      # c[0] = 1, recurrence coefficients
    iterates: list[RadialProfile]      # L^k(chi_M LamQ), k = 0..L
    lamq_pairing: float                # <chi_M LamQ, LamQ>

    def L_pow(self, k: int, ctx: LinearizedContext) -> RadialProfile:
        """L^k Phi_M as the coefficient-weighted sum of cached iterates."""
        L = len(self.c) - 1
        vals = np.zeros(ctx.grid.n)
        iters = self.iterates
        extra = {}
        for j, cj in enumerate(self.c):
            idx = j + k
            while len(iters) <= idx:
                iters = iters + [apply_L(ctx, iters[-1])]
            vals += cj * iters[idx].values
        return RadialProfile(ctx.grid, vals)


def build_PhiM(ctx: LinearizedContext, M: float, T: list[RadialProfile]
               ) -> PhiMDirection:
    """Phi_M = sum_k c_k L^k(chi_M LamQ) with <Phi_M, T_k> = 0 for 1 <= k <= L.

    T is the kernel-generator list [T_0 = LamQ, T_1, ..., T_L]; the recurrence

        c_0 = 1,  c_k = (-1)^(k+1) sum_{j<k} c_j <L^j(chi_M LamQ), T_k>
                        / <chi_M LamQ, LamQ>

    solves the orthogonality exactly because L^k T_k = (-1)^k LamQ.
    """
    if M < 10:
        raise ValueError(f"cutoff scale M must be >= 10, got {M}")
    L = len(T) - 1
    grid = ctx.grid
    chiM = chi_scaled(grid.nodes, M)
    base = RadialProfile(grid, chiM * ctx.lam_q.values,
                         origin_series=ctx.lam_q.origin_series)
    iterates = [base]
    for _ in range(L):
        iterates.append(apply_L(ctx, iterates[-1]))

    denom = ctx.inner(base, ctx.lam_q, hi=2 * M)
    if abs(denom) < 1e-12:
        raise ValueError("degenerate pairing <chi_M LamQ, LamQ>")

    c = np.zeros(L + 1)
    c[0] = 1.0
    for k in range(1, L + 1):
        acc = sum(c[j] * ctx.inner(iterates[j], T[k], hi=2 * M) for j in range(k))
        c[k] = (-1) ** (k + 1) * acc / denom

    vals = np.sum([cj * it.values for cj, it in zip(c, iterates)], axis=0)
    phi = RadialProfile(grid, vals)
    return PhiMDirection(M=M, profile=phi, c=c, iterates=iterates,
                         lamq_pairing=denom)


def leibniz_consistency(ctx: LinearizedContext, phi: RadialProfile,
                        f: RadialProfile, k: int) -> float:
    """Relative gap between L^(k+1)(phi f) computed directly and via the
    product recurrence in the adapted derivatives of f.

    The recurrence tables phi_{j,i} are generated from phi by repeated
    differentiation; the direct side applies L to the pointwise product.
    Returns max over interior nodes of |direct - recurrence| / max|direct|.
    """
    if k > 3:
        raise ValueError("recurrence tables are built for k <= 3")
    grid = ctx.grid
    y = grid.nodes
    V = ctx.V.values

    def D(a):
        return grid.apply_diff(a, 1)

    # tables: level j holds phi_{j,i} for i = 0..j
    phi0 = phi.values
    dphi = phi.deriv(1)
    level = {1: [-dphi, phi0]}
    w = (6.0 + 2.0 * V) / y
    level[2] = [-D(dphi) - w * dphi, 2.0 * dphi, phi0]
    for kk in range(1, k + 1):
        prev = level[2 * kk]
        odd = [None] * (2 * kk + 2)
        odd[0] = -D(prev[0])
        for i in range(1, kk + 1):
            odd[2 * i] = -D(prev[2 * i]) - prev[2 * i - 1]
        for i in range(0, kk):
            odd[2 * i + 1] = prev[2 * i] + w * prev[2 * i + 1] - D(prev[2 * i + 1])
        odd[2 * kk + 1] = prev[2 * kk]
        level[2 * kk + 1] = odd
        even = [None] * (2 * kk + 3)
        even[0] = D(odd[0]) + w * odd[0]
        for i in range(1, kk + 1):
            even[2 * i] = odd[2 * i - 1] + D(odd[2 * i]) + w * odd[2 * i]
        for i in range(0, kk + 1):
            even[2 * i + 1] = -odd[2 * i] + D(odd[2 * i + 1])
        even[2 * kk + 2] = odd[2 * kk + 1]
        level[2 * kk + 2] = even

    fi = adapted_derivatives(ctx, f, 2 * k + 2)
    tab = level[2 * k + 2]
    recur = np.zeros(grid.n)
    for m in range(0, k + 2):
        recur += fi[2 * m].values * tab[2 * m]
    for m in range(0, k + 1):
        recur += fi[2 * m + 1].values * tab[2 * m + 1]

    series = None
    if phi.origin_series is not None and f.origin_series is not None:
        series = phi.origin_series.mul(f.origin_series)
    prod = RadialProfile(grid, phi.values * f.values, origin_series=series)
    direct = prod
    for _ in range(k + 1):
        direct = apply_L(ctx, direct)

    interior = slice(8, -8)
    scale = np.max(np.abs(direct.values[interior]))
    gap = np.max(np.abs(direct.values[interior] - recur[interior]))
    return float(gap / scale)
