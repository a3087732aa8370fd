"""Truncated power series around y = 0 with an integer leading power.

A series is sum_{j} c[j] * y**(p0 + j) for j = 0..len(c)-1.  Profiles in this
package are odd or even around the origin, so every second coefficient is
usually zero; the dense representation keeps the algebra simple.  All
operations truncate to a fixed number of stored coefficients, which is what
"valid near the origin" means here: the truncation error at y is of order
y**(p0 + len(c)).
"""

from __future__ import annotations

from dataclasses import dataclass
from math import factorial

import numpy as np

#: number of coefficients kept by default through products / divisions
DEFAULT_TERMS = 12


class SingularOriginError(ValueError):
    """Raised when an operation produces a non-integrable or undefined origin."""


@dataclass(frozen=True)
class PowerSeries:
    """c[0]*y**p0 + c[1]*y**(p0+1) + ..., truncated."""

    p0: int
    coeffs: tuple[float, ...]

    @staticmethod
    def from_terms(terms, n_terms: int = DEFAULT_TERMS) -> "PowerSeries":
        """Build from an iterable of (power, coefficient) pairs."""
        terms = [(int(p), float(c)) for p, c in terms if c != 0.0]
        if not terms:
            return PowerSeries(0, (0.0,))
        p0 = min(p for p, _ in terms)
        c = np.zeros(n_terms)
        for p, v in terms:
            if p - p0 < n_terms:
                c[p - p0] += v
        return PowerSeries(p0, tuple(c))

    def terms(self):
        return [(self.p0 + j, c) for j, c in enumerate(self.coeffs) if c != 0.0]

    @property
    def leading_power(self) -> int | None:
        for j, c in enumerate(self.coeffs):
            if c != 0.0:
                return self.p0 + j
        return None

    @property
    def leading_coeff(self) -> float:
        for c in self.coeffs:
            if c != 0.0:
                return c
        return 0.0

    def __call__(self, y):
        y = np.asarray(y, dtype=float)
        out = np.zeros_like(y)
        for j in range(len(self.coeffs) - 1, -1, -1):
            out = out * y + self.coeffs[j]
        # out = sum c[j] y^j, multiply by y^p0
        if self.p0 >= 0:
            return out * y**self.p0
        return out / y ** (-self.p0)

    def _trimmed(self) -> "PowerSeries":
        c = np.asarray(self.coeffs)
        nz = np.nonzero(c)[0]
        if len(nz) == 0:
            return PowerSeries(0, (0.0,))
        k = nz[0]
        return PowerSeries(self.p0 + int(k), tuple(c[k:]))

    def scaled(self, a: float) -> "PowerSeries":
        return PowerSeries(self.p0, tuple(a * np.asarray(self.coeffs)))

    def __add__(self, other: "PowerSeries") -> "PowerSeries":
        p0 = min(self.p0, other.p0)
        n = max(self.p0 + len(self.coeffs), other.p0 + len(other.coeffs)) - p0
        c = np.zeros(n)
        c[self.p0 - p0 : self.p0 - p0 + len(self.coeffs)] += self.coeffs
        c[other.p0 - p0 : other.p0 - p0 + len(other.coeffs)] += other.coeffs
        return PowerSeries(p0, tuple(c))._trimmed()

    def __sub__(self, other: "PowerSeries") -> "PowerSeries":
        return self + other.scaled(-1.0)

    def mul(self, other: "PowerSeries", n_terms: int = DEFAULT_TERMS) -> "PowerSeries":
        c = np.convolve(self.coeffs, other.coeffs)[:n_terms]
        return PowerSeries(self.p0 + other.p0, tuple(c))._trimmed()

    def shift(self, dp: int) -> "PowerSeries":
        """Multiply by y**dp."""
        return PowerSeries(self.p0 + dp, self.coeffs)

    def derivative(self) -> "PowerSeries":
        c = [(self.p0 + j) * cj for j, cj in enumerate(self.coeffs)]
        return PowerSeries(self.p0 - 1, tuple(c))._trimmed()

    def antiderivative(self) -> "PowerSeries":
        """Primitive vanishing at 0; fails on y**(-1) terms or worse tails."""
        lead = self.leading_power
        if lead is not None and lead <= -1:
            raise SingularOriginError(
                f"series with leading power {lead} is not integrable at the origin"
            )
        c = []
        for j, cj in enumerate(self.coeffs):
            p = self.p0 + j
            if p == -1:
                if cj != 0.0:
                    raise SingularOriginError("y**-1 term has no power-law primitive")
                c.append(0.0)
            else:
                c.append(cj / (p + 1))
        return PowerSeries(self.p0 + 1, tuple(c))._trimmed()

    def divide(self, other: "PowerSeries", n_terms: int = DEFAULT_TERMS) -> "PowerSeries":
        """Power-series division; the divisor's leading coefficient must be nonzero."""
        den = other._trimmed()
        if den.leading_coeff == 0.0:
            raise SingularOriginError("division by a zero series")
        num = np.zeros(n_terms)
        m = min(n_terms, len(self.coeffs))
        num[:m] = self.coeffs[:m]
        dc = np.zeros(n_terms)
        m = min(n_terms, len(den.coeffs))
        dc[:m] = den.coeffs[:m]
        q = np.zeros(n_terms)
        for j in range(n_terms):
            acc = num[j] - np.dot(q[:j], dc[j:0:-1])
            q[j] = acc / dc[0]
        return PowerSeries(self.p0 - den.p0, tuple(q))._trimmed()


def compose_sin(u: PowerSeries, n_terms: int = DEFAULT_TERMS) -> PowerSeries:
    """sin(u) for a series u with positive leading power."""
    return _compose_trig(u, n_terms, odd=True)


def compose_cos(u: PowerSeries, n_terms: int = DEFAULT_TERMS) -> PowerSeries:
    """cos(u) for a series u with positive leading power."""
    return _compose_trig(u, n_terms, odd=False)


def _compose_trig(u: PowerSeries, n_terms: int, odd: bool) -> PowerSeries:
    lead = u.leading_power
    if lead is None:
        return PowerSeries(0, (0.0,)) if odd else PowerSeries(0, (1.0,))
    if lead < 1:
        raise SingularOriginError("trig composition needs a series vanishing at 0")
    out = PowerSeries(0, (0.0,)) if odd else PowerSeries(0, (1.0,))
    power = PowerSeries(0, (1.0,))
    kmax = n_terms // lead + 1
    for k in range(1, kmax + 1):
        power = power.mul(u, n_terms=n_terms)
        if odd and k % 2 == 1:
            sign = -1.0 if (k // 2) % 2 else 1.0
            out = out + power.scaled(sign / factorial(k))
        if not odd and k % 2 == 0:
            sign = -1.0 if (k // 2) % 2 else 1.0
            out = out + power.scaled(sign / factorial(k))
    return out
