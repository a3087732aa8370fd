"""Ground state profile Q and the self-similar shrinker equation.

Q is the radially monotone stationary solution of the corotational flow,

    Q'' + (d-1)/y Q' - (d-1)/(2 y^2) sin(2Q) = 0,   Q(0) = 0, Q'(0) = 1,

integrated outward from a power-series start at y0 (y = 0 is a regular
singular point).  For d >= 7 it rises to pi/2 with an algebraic tail

    Q = pi/2 - a0/y^gamma + a1/y^(gamma+1) + ...,  gamma(7) = 2,

whose two leading coefficients (a0, a1) feed every constant of the blowup
profile hierarchy.  The shrinker equation adds the self-similar drift y/2 Q'
and is probed by a shooting sweep over the initial slope.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.integrate import solve_ivp
from scipy.optimize import brentq

from .grid import RadialGrid, RadialProfile, TailModel, fit_tail, make_log_grid
from .series import PowerSeries, compose_sin

__all__ = [
    "DomainError",
    "ConvergenceError",
    "TailExtractionError",
    "StationaryMap",
    "gamma_exponent",
    "ode_series_coeffs",
    "solve_Q",
    "extract_tail_constants",
    "lambda_Q",
    "closed_form_d2",
    "solve_shrinker",
    "ShrinkerShot",
]


class DomainError(ValueError):
    pass


class ConvergenceError(RuntimeError):
    pass


class TailExtractionError(RuntimeError):
    pass


def gamma_exponent(d: int) -> float:
    """Tail decay exponent of pi/2 - Q for d >= 7.

    gamma(d) = (d - 2 - sqrt(d^2 - 8d + 8)) / 2, which lies in (1, 2] and
    equals 2 exactly at d = 7.
    """
    if d < 7:
        raise DomainError(f"tail exponent formula requires d >= 7, got {d}")
    return 0.5 * (d - 2 - math.sqrt(d * d - 8 * d + 8))


def ode_series_coeffs(d: int, n_coeffs: int, slope: float = 1.0) -> np.ndarray:
    """Odd Taylor coefficients of Q near 0: Q = sum c[k] y^(2k+1), c[0] = slope.

    Obtained by matching powers in y^2 Q'' + (d-1) y Q' = (d-1)/2 sin(2Q):
    the y^(2k+1) coefficient of the left side is c_k (2k+1)(2k+d-1), and on
    the right the c_k-linear part of sin(2Q) is 2 c_k, so

        c_k [(2k+1)(2k+d-1) - (d-1)] = (d-1)/2 * g_k,

    with g_k the y^(2k+1) coefficient of sin(2 Q_<k); the k = 0 bracket
    vanishes, which is the scaling freedom fixing c_0 = slope.
    """
    c = np.zeros(n_coeffs)
    c[0] = slope
    n_terms = 2 * n_coeffs + 2
    for k in range(1, n_coeffs):
        partial = PowerSeries.from_terms(
            [(2 * j + 1, c[j]) for j in range(k)], n_terms=n_terms)
        s = compose_sin(partial.scaled(2.0), n_terms=n_terms)
        gk = dict(s.terms()).get(2 * k + 1, 0.0)
        denom = (2 * k + 1) * (2 * k + d - 1) - (d - 1)
        c[k] = 0.5 * (d - 1) * gk / denom
    return c


def _series_eval(c: np.ndarray, y: float) -> tuple[float, float]:
    """(Q, Q') from odd Taylor coefficients at a scalar y."""
    q = 0.0
    dq = 0.0
    for k in range(len(c) - 1, -1, -1):
        p = 2 * k + 1
        q += c[k] * y**p
        dq += p * c[k] * y ** (p - 1)
    return q, dq


@dataclass(frozen=True)
class StationaryMap:
    """Q with its integration metadata and extracted tail constants."""

    d: int
    profile: RadialProfile
    origin_coeffs: np.ndarray
    gamma_fit: float
    a0: float
    a1: float
    shoot_metadata: dict
    _sol: object = None  # dense ODE solution on [y0, y_max]

    @property
    def grid(self) -> RadialGrid:
        return self.profile.grid

    def __call__(self, y):
        """Q at arbitrary points: series below y0, dense ODE output above."""
        y = np.asarray(y, dtype=float)
        return self._eval(y, component=0)

    def dQ(self, y):
        return self._eval(np.asarray(y, dtype=float), component=1)

    def _eval(self, y, component):
        y0 = self.shoot_metadata["series_radius"]
        out = np.empty_like(y)
        low = y < y0
        if np.any(low):
            c = self.origin_coeffs
            vals = np.zeros_like(y[low])
            for k in range(len(c) - 1, -1, -1):
                p = 2 * k + 1 - component
                vals += ((2 * k + 1) if component else 1.0) * c[k] * y[low] ** p
            out[low] = vals
        if np.any(~low):
            out[~low] = self._sol(y[~low])[component]
        return out


def _rhs_factory(d: int):
    dm1 = float(d - 1)

    def rhs(y, u):
        q, p = u
        return (p, -dm1 / y * p + 0.5 * dm1 / (y * y) * math.sin(2.0 * q))

    return rhs


def solve_Q(d: int, grid: RadialGrid | None = None, *, slope: float = 1.0,
            y_max: float = 1.0e4, rtol: float = 1e-12, atol: float = 1e-20,
            series_radius: float = 1e-3, n_series: int = 5,
            tail_window: tuple[float, float] = (1e2, 1e3)) -> StationaryMap:
    """Integrate the ground-state ODE outward from a series start.

    For d >= 7 the solution must approach pi/2 at y_max within 1e-6 or a
    ConvergenceError is raised; the tail fit and (a0, a1) extraction are then
    attached.  For d < 7 the tail metadata is left unset (gamma complex or
    the d = 2 closed-form regime).
    """
    if d < 2:
        raise DomainError(f"spatial dimension must be >= 2, got {d}")
    if grid is None:
        grid = make_log_grid(1e-4 * min(1.0, y_max / 1.0), y_max, 8192, d=d)
    if grid.nodes[-1] > y_max * (1 + 1e-12):
        raise DomainError("grid extends beyond the integration range")

    coeffs = ode_series_coeffs(d, n_series, slope=slope)
    y0 = series_radius
    u0 = _series_eval(coeffs, y0)
    sol = solve_ivp(_rhs_factory(d), (y0, y_max), u0, method="RK45",
                    rtol=rtol, atol=atol, dense_output=True)
    if not sol.success:
        raise ConvergenceError(f"integrator failed: {sol.message}")

    nodes = grid.nodes
    vals = np.empty(grid.n)
    dvals = np.empty(grid.n)
    low = nodes < y0
    for i in np.nonzero(low)[0]:
        vals[i], dvals[i] = _series_eval(coeffs, nodes[i])
    hi = ~low
    dense = sol.sol(nodes[hi])
    vals[hi], dvals[hi] = dense[0], dense[1]

    meta = {
        "series_radius": y0,
        "n_series_coeffs": n_series,
        "slope": slope,
        "rtol": rtol,
        "atol": atol,
        "terminal_radius": y_max,
        "terminal_value": float(sol.sol(y_max)[0]),
    }

    gamma_fit = math.nan
    a0 = a1 = math.nan
    tail = None
    if d >= 7:
        q_end = meta["terminal_value"]
        if abs(q_end - math.pi / 2) > 1e-6:
            raise ConvergenceError(
                f"Q({y_max}) = {q_end:.8f} did not reach pi/2 within 1e-6 "
                f"(d = {d}, slope = {slope})")
        gap = RadialProfile(grid, math.pi / 2 - vals)
        _, gamma_slope, _ = fit_tail(gap, tail_window)
        gamma_fit = -gamma_slope

    series = PowerSeries.from_terms([(2 * k + 1, c) for k, c in enumerate(coeffs)])
    profile = RadialProfile(grid, vals, origin_series=series, tail_model=tail, d1=dvals)
    qmap = StationaryMap(d=d, profile=profile, origin_coeffs=coeffs,
                         gamma_fit=gamma_fit, a0=a0, a1=a1,
                         shoot_metadata=meta, _sol=sol.sol)
    if d >= 7:
        a0, a1 = extract_tail_constants(qmap, window=tail_window)
        tail = TailModel(-a0, -gamma_fit, corrections=((a1, -gamma_fit - 1),))
        profile = RadialProfile(grid, vals, origin_series=series,
                                tail_model=TailModel(math.pi / 2, 0.0, ((-a0, -2.0), (a1, -3.0))),
                                d1=dvals)
        qmap = StationaryMap(d=d, profile=profile, origin_coeffs=coeffs,
                             gamma_fit=gamma_fit, a0=a0, a1=a1,
                             shoot_metadata=meta, _sol=sol.sol)
    return qmap


def extract_tail_constants(Q: StationaryMap, window: tuple[float, float] = (1e2, 1e3)
                           ) -> tuple[float, float]:
    """(a0, a1) from a least-squares fit of pi/2 - Q against {y^-2, y^-3, y^-4}.

    Only meaningful for d = 7 where the tail exponent is exactly 2; both
    constants must come out strictly positive or the shooting is suspect.
    """
    if Q.d < 7:
        raise DomainError("tail constants are defined for the d >= 7 regime")
    y = Q.grid.nodes
    mask = (y >= window[0]) & (y <= window[1])
    ys = y[mask]
    gap = math.pi / 2 - Q.profile.values[mask]
    # scale columns to O(1) for conditioning
    cols = [ys**-2.0, ys**-3.0, ys**-4.0]
    scales = [np.linalg.norm(c) for c in cols]
    A = np.column_stack([c / s for c, s in zip(cols, scales)])
    sol, *_ = np.linalg.lstsq(A, gap, rcond=None)
    a0 = float(sol[0] / scales[0])
    a1 = float(-sol[1] / scales[1])
    if not (a0 > 0 and a1 > 0):
        raise TailExtractionError(
            f"extracted tail constants a0 = {a0}, a1 = {a1} are not both positive")
    return a0, a1


def lambda_Q(Q: StationaryMap) -> RadialProfile:
    """The scaling mode y Q'(y), the kernel direction of the linearized operator.

    First and second derivatives are attached analytically: Q'' comes from the
    ODE itself and Q''' from its derivative, so no finite differencing of Q
    enters.
    """
    y = Q.grid.nodes
    qp = Q.profile.d1
    q = Q.profile.values
    dm1 = float(Q.d - 1)
    qpp = -dm1 / y * qp + 0.5 * dm1 / y**2 * np.sin(2 * q)
    qppp = (dm1 / y**2 * qp - dm1 / y * qpp
            - dm1 / y**3 * np.sin(2 * q) + dm1 / y**2 * np.cos(2 * q) * qp)
    vals = y * qp
    d1 = qp + y * qpp
    d2 = 2 * qpp + y * qppp
    series = None
    if Q.profile.origin_series is not None:
        # Lambda maps y^p -> p y^p
        series = PowerSeries.from_terms(
            [(p, p * c) for p, c in Q.profile.origin_series.terms()])
    tail = None
    if Q.d >= 7 and np.isfinite(Q.a0):
        tail = TailModel(2 * Q.a0, -2.0, corrections=((-3 * Q.a1, -3.0),))
    return RadialProfile(Q.grid, vals, origin_series=series, tail_model=tail,
                         d1=d1, d2=d2)


def closed_form_d2(y):
    """The d = 2 ground state in its textbook normalization (slope 2 at 0)."""
    return 2.0 * np.arctan(np.asarray(y, dtype=float))


# ---------------------------------------------------------------------------
# self-similar shrinker equation
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ShrinkerShot:
    """One trajectory of the shrinker shooting problem."""

    slope: float
    intersections: int
    end_value: float
    regular: bool            # bounded with phi' -> 0 before the terminal radius
    converged: bool          # end value within tol of pi/2 (candidate shrinker)
    profile: RadialProfile | None = None


def _shrinker_rhs_factory(d: int):
    dm1 = float(d - 1)

    def rhs(y, u):
        q, p = u
        return (p, -(dm1 / y + 0.5 * y) * p + 0.5 * dm1 / (y * y) * math.sin(2.0 * q))

    return rhs


def _shoot_shrinker(d: int, slope: float, y_end: float = 20.0,
                    rtol: float = 1e-10, atol: float = 1e-12,
                    keep_profile: bool = False) -> ShrinkerShot:
    # series start: the y/2 drift enters at relative order y^2, reuse the
    # stationary coefficients for the leading term only
    y0 = 1e-4
    u0 = (slope * y0, slope)
    sol = solve_ivp(_shrinker_rhs_factory(d), (y0, y_end), u0, method="RK45",
                    rtol=rtol, atol=atol, dense_output=True, max_step=0.25)
    ys = np.linspace(y0, y_end, 4000)
    vals, dvals = sol.sol(ys)
    bounded = bool(sol.success and np.all(np.isfinite(vals))
                   and np.max(np.abs(vals)) < 4 * math.pi)
    frozen = bounded and abs(dvals[-1]) < 1e-8 * max(1.0, abs(vals[-1]))
    end_value = float(vals[-1]) if bounded else math.inf
    # transversal crossings of pi/2 with a 1e-3 hysteresis band (suppresses
    # noise around the frozen asymptote); a converged trajectory contacts
    # pi/2 once more asymptotically, matching the classical shooting index
    gap = vals - math.pi / 2
    sgn = np.sign(gap[np.abs(gap) >= 1e-3])
    crossings = int(np.count_nonzero(np.diff(sgn) != 0))
    converged = bool(frozen and abs(end_value - math.pi / 2) < 1e-6)
    if converged:
        crossings += 1
    prof = None
    if keep_profile:
        g = make_log_grid(1e-3, y_end, 512, d=d)
        prof = RadialProfile(g, sol.sol(g.nodes)[0])
    return ShrinkerShot(slope=slope, intersections=crossings, end_value=end_value,
                        regular=frozen, converged=converged, profile=prof)


def solve_shrinker(d: int, shoot_grid, y_end: float = 20.0,
                   refine: bool = True) -> list[ShrinkerShot]:
    """Shooting sweep for the self-similar profile equation.

    Every trajectory freezes to a constant by y ~ 20 (the y/2 drift damps phi'
    super-exponentially), so the shooting function is the frozen end value;
    slopes where it crosses pi/2 are bisected to locate genuine shrinkers.
    Non-convergence is data, not an error: for d >= 7 the sweep finds no
    crossing, which is the expected outcome.
    """
    if not (3 <= d <= 7):
        raise DomainError(f"shrinker sweep supports 3 <= d <= 7, got {d}")
    slopes = np.asarray(list(shoot_grid), dtype=float)
    if np.any(slopes <= 0):
        raise DomainError("shooting slopes must be positive")
    shots = [_shoot_shrinker(d, a, y_end=y_end) for a in slopes]
    if not refine:
        return shots
    refined: list[ShrinkerShot] = []
    for lo, hi in zip(shots[:-1], shots[1:]):
        flo = lo.end_value - math.pi / 2
        fhi = hi.end_value - math.pi / 2
        if not (np.isfinite(flo) and np.isfinite(fhi)) or flo * fhi > 0:
            continue
        a_star = brentq(
            lambda a: _shoot_shrinker(d, a, y_end=y_end).end_value - math.pi / 2,
            lo.slope, hi.slope, xtol=1e-12, rtol=1e-13)
        refined.append(_shoot_shrinker(d, a_star, y_end=y_end, keep_profile=True))
    return shots + refined
