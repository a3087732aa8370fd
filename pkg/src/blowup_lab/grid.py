"""Radial meshes, 4th-order differentiation, and y**(d-1)-weighted quadrature.

Everything downstream samples radial profiles on a fixed strictly positive
grid, integrates against the measure y**(d-1) dy, and evaluates the segment
[0, y_1] from a stored origin power series instead of extrapolating the
discrete data to y = 0 (the weight makes naive extrapolation silently wrong).
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .series import PowerSeries, SingularOriginError

__all__ = [
    "GridParameterError",
    "TailFitError",
    "RadialGrid",
    "RadialProfile",
    "TailModel",
    "make_log_grid",
    "differentiate",
    "integrate_cumulative",
    "fit_tail",
]


class GridParameterError(ValueError):
    pass


class TailFitError(ValueError):
    pass


def _fd_weights(x: np.ndarray, x0: float, order: int) -> np.ndarray:
    """Finite-difference weights for d^order/dy^order at x0 from nodes x.

    Solves the local Vandermonde system in the shifted variable (x - x0);
    exact for polynomials of degree < len(x).
    """
    n = len(x)
    dx = x - x0
    scale = max(abs(dx).max(), 1e-300)
    dx = dx / scale
    A = np.vander(dx, n, increasing=True).T
    b = np.zeros(n)
    fact = 1.0
    for k in range(2, order + 1):
        fact *= k
    b[order] = fact
    w = np.linalg.solve(A, b)
    return w / scale**order


@dataclass(frozen=True)
class RadialGrid:
    """Strictly increasing positive nodes with d-dimensional quadrature weights.

    quad_weights integrate f(y) * y**(d-1) dy over [nodes[0], nodes[-1]] with a
    composite 4-point (cubic) rule; piecewise-cubic data is integrated exactly
    up to rounding.
    """

    nodes: np.ndarray
    d: int
    quad_weights: np.ndarray = field(repr=False)
    _diff1: np.ndarray = field(repr=False)
    _diff2: np.ndarray = field(repr=False)
    _stencil: np.ndarray = field(repr=False)
    _interval_w: np.ndarray = field(repr=False)

    def __post_init__(self):
        for arr in (self.nodes, self.quad_weights, self._diff1, self._diff2,
                    self._stencil, self._interval_w):
            arr.setflags(write=False)

    @property
    def n(self) -> int:
        return len(self.nodes)

    def index_at(self, y: float) -> int:
        """Index of the node nearest to y."""
        return int(np.argmin(np.abs(self.nodes - y)))

    def integrate(self, values: np.ndarray, lo: float | None = None,
                  hi: float | None = None) -> float:
        """Integral of values * y**(d-1) dy over [lo, hi].

        None means the corresponding grid end; interior bounds are handled by
        integrating the local cubic over the partial interval, so windows need
        not be node-aligned.  The segment [0, nodes[0]] is *not* included; see
        RadialProfile.integral.
        """
        if lo is None and hi is None:
            return float(self.quad_weights @ values)
        a = self.nodes[0] if lo is None else max(lo, self.nodes[0])
        b = self.nodes[-1] if hi is None else min(hi, self.nodes[-1])
        if b <= a:
            return 0.0
        ia = int(np.searchsorted(self.nodes, a, side="left"))   # first node >= a
        ib = int(np.searchsorted(self.nodes, b, side="right")) - 1  # last node <= b
        total = 0.0
        if ia > ib:  # both bounds inside one interval
            k = ia - 1
            w = _cubic_interval_weights(self.nodes, self._stencil[k], a, b, self.d)
            return float(w @ values[self._stencil[k]])
        if self.nodes[ia] > a:
            k = ia - 1
            w = _cubic_interval_weights(self.nodes, self._stencil[k], a, self.nodes[ia], self.d)
            total += float(w @ values[self._stencil[k]])
        if self.nodes[ib] < b:
            k = ib
            w = _cubic_interval_weights(self.nodes, self._stencil[k], self.nodes[ib], b, self.d)
            total += float(w @ values[self._stencil[k]])
        if ib > ia:
            sl = slice(ia, ib)
            total += float(np.sum(values[self._stencil[sl]] * self._interval_w[sl]))
        return total

    def interval_integrals(self, values: np.ndarray) -> np.ndarray:
        """Per-interval integrals of values dy (plain measure), length n-1."""
        return np.sum(values[self._stencil] * self._interval_w_plain, axis=1)

    def cumulative(self, values: np.ndarray) -> np.ndarray:
        """F[i] = integral of values dy from nodes[0] to nodes[i] (plain measure)."""
        out = np.zeros(self.n)
        out[1:] = np.cumsum(self.interval_integrals(values))
        return out

    def cumulative_reverse(self, values: np.ndarray) -> np.ndarray:
        """G[i] = integral of values dy from nodes[i] to nodes[-1].

        Summed from the far end inward, so steeply decaying integrands keep
        full relative accuracy at every node (the forward cumulative would
        cancel catastrophically).
        """
        out = np.zeros(self.n)
        out[:-1] = np.cumsum(self.interval_integrals(values)[::-1])[::-1]
        return out

    # plain (unweighted) interval rule, built lazily because most callers
    # fold the weight into the integrand
    @property
    def _interval_w_plain(self) -> np.ndarray:
        return self._interval_w_plain_arr

    def apply_diff(self, values: np.ndarray, order: int) -> np.ndarray:
        if order == 1:
            W = self._diff1
        elif order == 2:
            W = self._diff2
        else:
            raise GridParameterError(f"derivative order must be 1 or 2, got {order}")
        return np.sum(values[self._stencil_diff] * W, axis=1)


def _cubic_interval_weights(nodes: np.ndarray, idx: np.ndarray, a: float, b: float,
                            d: int | None) -> np.ndarray:
    """Weights w such that w @ f[idx] integrates the cubic interpolant of f
    (on nodes[idx]) times y**(d-1) over [a, b]; d=None means plain measure."""
    x = nodes[idx]
    x0 = 0.5 * (a + b)
    s = max(abs(x - x0).max(), 1e-300)
    t = (x - x0) / s
    V = np.vander(t, 4, increasing=True).T
    ta, tb = (a - x0) / s, (b - x0) / s
    m = np.zeros(4)
    if d is None:
        for k in range(4):
            m[k] = (tb ** (k + 1) - ta ** (k + 1)) / (k + 1) * s
    else:
        binom = [1.0]
        for _ in range(d - 1):
            binom = [1.0] + [binom[i] + binom[i + 1] for i in range(len(binom) - 1)] + [1.0]
        for k in range(4):
            acc = 0.0
            for j in range(d):
                p = k + j
                acc += binom[j] * x0 ** (d - 1 - j) * s**j * (tb ** (p + 1) - ta ** (p + 1)) / (p + 1)
            m[k] = acc * s
    return np.linalg.solve(V, m)


def _build_grid(nodes: np.ndarray, d: int) -> RadialGrid:
    n = len(nodes)
    if n < 16:
        raise GridParameterError(f"need at least 16 nodes, got {n}")
    if np.any(nodes <= 0) or np.any(np.diff(nodes) <= 0):
        raise GridParameterError("nodes must be strictly increasing and positive")
    if d < 2:
        raise GridParameterError(f"dimension must be >= 2, got {d}")

    # 5-point differentiation stencils (4th order interior, one-sided ends)
    stencil_diff = np.zeros((n, 5), dtype=int)
    diff1 = np.zeros((n, 5))
    diff2 = np.zeros((n, 5))
    for i in range(n):
        j0 = min(max(i - 2, 0), n - 5)
        idx = np.arange(j0, j0 + 5)
        stencil_diff[i] = idx
        diff1[i] = _fd_weights(nodes[idx], nodes[i], 1)
        diff2[i] = _fd_weights(nodes[idx], nodes[i], 2)

    # per-interval cubic rule: integrate the Lagrange cubic through 4 nodes
    # around interval [y_k, y_{k+1}]; weights for both the plain measure and
    # the y^(d-1)-weighted measure (weight folded by sampling y^(d-1) at nodes
    # would lose order near 0, so the weighted rule integrates p(y)*y^(d-1)
    # exactly for cubic p via moments)
    stencil = np.zeros((n - 1, 4), dtype=int)
    interval_w = np.zeros((n - 1, 4))
    interval_w_plain = np.zeros((n - 1, 4))
    for k in range(n - 1):
        j0 = min(max(k - 1, 0), n - 4)
        idx = np.arange(j0, j0 + 4)
        stencil[k] = idx
        a, b = nodes[k], nodes[k + 1]
        interval_w_plain[k] = _cubic_interval_weights(nodes, idx, a, b, None)
        interval_w[k] = _cubic_interval_weights(nodes, idx, a, b, d)

    quad_weights = np.zeros(n)
    np.add.at(quad_weights, stencil, interval_w)

    g = RadialGrid(nodes=nodes, d=d, quad_weights=quad_weights,
                   _diff1=diff1, _diff2=diff2, _stencil=stencil,
                   _interval_w=interval_w)
    object.__setattr__(g, "_stencil_diff", stencil_diff)
    object.__setattr__(g, "_interval_w_plain_arr", interval_w_plain)
    stencil_diff.setflags(write=False)
    interval_w_plain.setflags(write=False)
    return g


def make_log_grid(y_min: float, y_max: float, n: int, cluster_exponent: float = 1.0,
                  d: int = 7) -> RadialGrid:
    """Logarithmically spaced grid on [y_min, y_max].

    cluster_exponent = 1 gives uniform spacing in log y; > 1 clusters nodes
    toward y_min algebraically.
    """
    if not (0 < y_min < y_max):
        raise GridParameterError(f"need 0 < y_min < y_max, got ({y_min}, {y_max})")
    if n < 16:
        raise GridParameterError(f"need n >= 16, got {n}")
    if cluster_exponent <= 0:
        raise GridParameterError("cluster_exponent must be positive")
    t = np.linspace(0.0, 1.0, n) ** cluster_exponent
    nodes = np.exp(np.log(y_min) + (np.log(y_max) - np.log(y_min)) * t)
    nodes[0], nodes[-1] = y_min, y_max
    return _build_grid(nodes, d)


@dataclass(frozen=True)
class TailModel:
    """coeff * y**exponent plus optional (coeff, exponent) correction terms."""

    coeff: float
    exponent: float
    corrections: tuple[tuple[float, float], ...] = ()

    def __call__(self, y):
        y = np.asarray(y, dtype=float)
        out = self.coeff * y**self.exponent
        for c, p in self.corrections:
            out = out + c * y**p
        return out


@dataclass(frozen=True)
class RadialProfile:
    """Values of a radial function on a grid, plus origin/tail models."""

    grid: RadialGrid
    values: np.ndarray
    origin_series: PowerSeries | None = None
    tail_model: TailModel | None = None
    d1: np.ndarray | None = None   # exact first derivative at nodes, if known
    d2: np.ndarray | None = None

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if len(v) != self.grid.n:
            raise GridParameterError("values length does not match grid")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def y(self) -> np.ndarray:
        return self.grid.nodes

    def with_values(self, values, **kw) -> "RadialProfile":
        return replace(self, values=np.asarray(values, dtype=float),
                       **({"d1": None, "d2": None} | kw))

    def bare(self) -> "RadialProfile":
        """Copy without origin/tail models (keeps exact derivatives)."""
        return replace(self, origin_series=None, tail_model=None)

    def deriv(self, order: int = 1) -> np.ndarray:
        if order == 1 and self.d1 is not None:
            return self.d1
        if order == 2 and self.d2 is not None:
            return self.d2
        return self.grid.apply_diff(self.values, order)

    def origin_integral(self, weight_power: int) -> float:
        """Integral of self * y**weight_power over [0, y_1] from the series."""
        if self.origin_series is None:
            return 0.0
        integrand = self.origin_series.shift(weight_power)
        return float(integrand.antiderivative()(self.grid.nodes[0]))

    def integral(self, weight_power: int | None = None, lo: float | None = None,
                 hi: float | None = None) -> float:
        """Integral of self * y**w dy; w defaults to d-1.  Includes the origin
        segment (from the series) when lo is None."""
        w = self.grid.d - 1 if weight_power is None else weight_power
        if w == self.grid.d - 1:
            core = self.grid.integrate(self.values, lo, hi)
        else:
            core = self.grid.integrate(self.values * self.y ** (w - (self.grid.d - 1)), lo, hi)
        if lo is None and self.origin_series is not None:
            core += self.origin_integral(w)
        return core


def differentiate(f: RadialProfile, order: int) -> RadialProfile:
    """4th-order nonuniform finite-difference derivative (one-sided at ends)."""
    if order not in (1, 2):
        raise GridParameterError(f"derivative order must be 1 or 2, got {order}")
    if f.grid.n < 5:
        raise GridParameterError("need at least 5 nodes to differentiate")
    series = None
    if f.origin_series is not None:
        series = f.origin_series
        for _ in range(order):
            series = series.derivative()
    tail = None
    if f.tail_model is not None:
        c, p = f.tail_model.coeff, f.tail_model.exponent
        for _ in range(order):
            c, p = c * p, p - 1
        tail = TailModel(c, p)
    return RadialProfile(f.grid, f.deriv(order), origin_series=series, tail_model=tail)


def integrate_cumulative(f: RadialProfile, weight_power: int) -> RadialProfile:
    """F(y) = integral_0^y f(x) x**weight_power dx on the nodes.

    The [0, y_1] segment comes from the origin series; a series leading power
    p with p + weight_power <= -1 is a non-integrable origin and raises.
    """
    w = weight_power
    if f.origin_series is not None:
        lead = f.origin_series.leading_power
        if lead is not None and lead + w <= -1:
            raise SingularOriginError(
                f"integrand power {lead + w} at the origin is not integrable")
        seg = f.origin_series.shift(w).antiderivative()
        F0 = float(seg(f.grid.nodes[0]))
        series = seg
    else:
        # no series: require a benign integrand at the inner edge and neglect
        # the [0, y_1] sliver (only safe when the integrand vanishes there)
        F0 = 0.0
        series = None
    vals = F0 + f.grid.cumulative(f.values * f.y**w)
    return RadialProfile(f.grid, vals, origin_series=series)


def fit_tail(f: RadialProfile, window: tuple[float, float]) -> tuple[float, float, float]:
    """Least-squares power law on a window: returns (coefficient, exponent, fit_error).

    Fits log|f| against log y; the coefficient carries f's sign on the window.
    A sign change inside the window raises TailFitError.
    """
    ya, yb = window
    mask = (f.y >= ya) & (f.y <= yb)
    if np.count_nonzero(mask) < 10:
        raise TailFitError("tail window must contain at least 10 nodes")
    vals = f.values[mask]
    if np.any(vals == 0.0) or (np.any(vals > 0) and np.any(vals < 0)):
        raise TailFitError("profile changes sign inside the fit window")
    sign = 1.0 if vals[0] > 0 else -1.0
    X = np.log(f.y[mask])
    Y = np.log(np.abs(vals))
    A = np.column_stack([X, np.ones_like(X)])
    sol, *_ = np.linalg.lstsq(A, Y, rcond=None)
    slope, intercept = sol
    resid = Y - A @ sol
    fit_error = float(np.max(np.abs(resid))) if len(resid) else 0.0
    return sign * float(np.exp(intercept)), float(slope), fit_error
