"""The fixed smooth cutoff used throughout the profile construction.

chi(x) = 1 for x <= 1, 0 for x >= 2, and on (1, 2) the standard smooth
partition ramp g(2-x) / (g(2-x) + g(x-1)) with g(t) = exp(-1/t), which is
positive, nonincreasing, and C-infinity.  chi_M(y) = chi(y/M).
"""

from __future__ import annotations

import numpy as np


def _g(t):
    out = np.zeros_like(t)
    pos = t > 0
    out[pos] = np.exp(-1.0 / t[pos])
    return out


def chi(x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    up = _g(2.0 - x)
    down = _g(x - 1.0)
    with np.errstate(invalid="ignore"):
        ramp = np.where(up + down > 0, up / (up + down), 0.0)
    out = np.where(x <= 1.0, 1.0, np.where(x >= 2.0, 0.0, ramp))
    return out


def chi_scaled(y, M: float) -> np.ndarray:
    """chi(y / M)."""
    if M <= 0:
        raise ValueError(f"cutoff scale must be positive, got {M}")
    return chi(np.asarray(y, dtype=float) / M)


def dchi(x) -> np.ndarray:
    """chi' evaluated analytically on the ramp (zero outside (1, 2))."""
    x = np.asarray(x, dtype=float)
    out = np.zeros_like(x)
    on = (x > 1.0) & (x < 2.0)
    t = x[on]
    a = _g(2.0 - t)          # exp(-1/(2-x))
    b = _g(t - 1.0)          # exp(-1/(x-1))
    da = -a / (2.0 - t) ** 2
    db = b / (t - 1.0) ** 2
    out[on] = (da * (a + b) - a * (da + db)) / (a + b) ** 2
    return out
