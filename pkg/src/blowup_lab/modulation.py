"""The finite-dimensional modulation system for (b_1..b_L, lambda).

    (b_k)_s = -(2k - 2 + C(b_1)) b_1 b_k + b_(k+1),   b_(L+1) = 0,
    -lambda_s / lambda = b_1,   dt/ds = lambda^2.

With C(b_1) = c sqrt(b_1) the L = 1 system is separable,
b_1(s) = ((3c/2)(s - s*))^(-2/3), which drives lambda ~ exp(-kappa s^(1/3))
and, back in original time, the square-root-with-log rate

    lambda(t) ~ C sqrt(T - t) / |log(T - t)|.

Trajectories are integrated in (b, log lambda, t); blowup time comes from
closing the tail integral of lambda^2 ds with the fitted exponential model.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.integrate import solve_ivp

__all__ = [
    "ModulationState",
    "Trajectory",
    "modulation_rhs",
    "integrate",
    "closed_form_b1_L1",
    "blowup_time",
    "rate_diagnostics",
    "sqrt_b1_coefficient",
    "IntegrationError",
    "EstimationError",
]


class IntegrationError(RuntimeError):
    pass


class EstimationError(RuntimeError):
    pass


@dataclass(frozen=True)
class ModulationState:
    b: np.ndarray
    lam: float
    s: float
    t: float


@dataclass(frozen=True)
class Trajectory:
    s: np.ndarray
    b: np.ndarray          # shape (n, L)
    lam: np.ndarray
    t: np.ndarray
    C_of_b1: object

    @property
    def L(self) -> int:
        return self.b.shape[1]

    def states(self):
        return [ModulationState(self.b[i], float(self.lam[i]), float(self.s[i]),
                                float(self.t[i])) for i in range(len(self.s))]


def modulation_rhs(b: np.ndarray, lam: float, C_of_b1) -> tuple[np.ndarray, float, float]:
    """(db/ds, dlambda/ds, dt/ds) for the full system."""
    b = np.asarray(b, dtype=float)
    if b[0] <= 0:
        raise ValueError(f"b1 must be positive, got {b[0]}")
    L = len(b)
    C = float(C_of_b1(b[0]))
    db = np.empty(L)
    for k in range(1, L + 1):
        bk1 = b[k] if k < L else 0.0
        db[k - 1] = -(2 * k - 2 + C) * b[0] * b[k - 1] + bk1
    return db, -b[0] * lam, lam * lam


def default_initial_b(L: int, s0: float) -> np.ndarray:
    """b_k(s0) = s0^(-k + 1/3) / 2, strictly inside the admissible cone."""
    return np.array([0.5 * s0 ** (-(k) + 1.0 / 3.0) for k in range(1, L + 1)])


def integrate(b0, s0: float, s_end: float, C_of_b1, *, lam0: float = 1.0,
              t0: float = 0.0, rtol: float = 1e-11, atol: float = 1e-14,
              n_out: int = 400) -> Trajectory:
    """Adaptive integration with dense output at log-spaced s."""
    b0 = np.asarray(b0, dtype=float)
    L = len(b0)
    if s_end <= s0:
        raise ValueError("s_end must exceed s0")

    def rhs(s, u):
        b = u[:L]
        C = float(C_of_b1(b[0]))
        db = np.empty(L)
        for k in range(1, L + 1):
            bk1 = b[k] if k < L else 0.0
            db[k - 1] = -(2 * k - 2 + C) * b[0] * b[k - 1] + bk1
        loglam = u[L]
        return np.concatenate([db, [-b[0]], [math.exp(2 * loglam)]])

    u0 = np.concatenate([b0, [math.log(lam0)], [t0]])
    sol = solve_ivp(rhs, (s0, s_end), u0, method="RK45", rtol=rtol, atol=atol,
                    dense_output=True)
    if not sol.success:
        raise IntegrationError(f"modulation integration failed: {sol.message}")
    s = np.geomspace(s0, s_end, n_out)
    u = sol.sol(s)
    return Trajectory(s=s, b=u[:L].T, lam=np.exp(u[L]), t=u[L + 1],
                      C_of_b1=C_of_b1)


def closed_form_b1_L1(s, c: float, s0: float, b10: float) -> np.ndarray:
    """Exact solution of b' = -c b^(5/2): the L = 1 oracle."""
    s_star = s0 - b10 ** (-1.5) / (1.5 * c)
    return (1.5 * c * (np.asarray(s, dtype=float) - s_star)) ** (-2.0 / 3.0)


def fit_loglam_model(traj: Trajectory, window_decades: float = 1.0
                     ) -> tuple[float, float, float]:
    """Fit log lambda = -kappa s^(1/3) + c0 on the last decade of s.

    Returns (kappa, c0, relative fit residual).
    """
    s, lam = traj.s, traj.lam
    mask = s >= s[-1] / 10**window_decades
    X = s[mask] ** (1.0 / 3.0)
    Y = np.log(lam[mask])
    A = np.column_stack([-X, np.ones_like(X)])
    sol, *_ = np.linalg.lstsq(A, Y, rcond=None)
    kappa, c0 = float(sol[0]), float(sol[1])
    resid = Y - A @ np.array([kappa, c0])
    rel = float(np.max(np.abs(resid)) / np.max(np.abs(Y)))
    return kappa, c0, rel


def blowup_time(traj: Trajectory) -> tuple[float, float]:
    """T = t_end + integral of lambda^2 ds beyond s_end, via the fitted model.

    With log lambda = -kappa s^(1/3) + c0, substituting u = s^(1/3) gives
    integral_s^inf lambda^2 ds' = 3 e^(2 c0) integral_u^inf v^2 e^(-2 kappa v) dv,
    an incomplete-gamma tail with the elementary closed form
    (u^2/a + 2u/a^2 + 2/a^3) e^(-a u), a = 2 kappa.

    The returned tail_error bounds the model error by the fit residual.
    """
    kappa, c0, rel = fit_loglam_model(traj)
    if kappa <= 0:
        raise EstimationError(f"lambda is not decaying (kappa = {kappa:g})")
    u = traj.s[-1] ** (1.0 / 3.0)
    a = 2.0 * kappa
    tail = 3.0 * math.exp(2 * c0) * (u**2 / a + 2 * u / a**2 + 2 / a**3) \
        * math.exp(-a * u)
    T = float(traj.t[-1] + tail)
    # the model enters through lambda^2: relative residual 2*rel on the tail
    tail_error = float(2.0 * rel * tail + 1e-15 * abs(T))
    return T, tail_error


def rate_diagnostics(traj: Trajectory, T: float, decades: float = 2.0) -> dict:
    """Type-II rate diagnostics against lambda ~ sqrt(T-t)/|log(T-t)|.

    Reports the regression slope of log(lambda/sqrt(T-t)) on log|log(T-t)|
    (the exponent of the logarithmic correction; -1 for the target rate) and
    the relative variation of R = lambda |log(T-t)| / sqrt(T-t) over the last
    `decades` decades of T - t.
    """
    Tt = T - traj.t
    good = Tt > 0
    s, lam, Tt = traj.s[good], traj.lam[good], Tt[good]
    mask = Tt <= Tt[-1] * 10**decades
    if np.count_nonzero(mask) < 10:
        raise EstimationError("trajectory too short for rate diagnostics")
    y = np.log(lam[mask] / np.sqrt(Tt[mask]))
    x = np.log(np.abs(np.log(Tt[mask])))
    A = np.column_stack([x, np.ones_like(x)])
    sol, *_ = np.linalg.lstsq(A, y, rcond=None)
    slope = float(sol[0])
    R = lam[mask] * np.abs(np.log(Tt[mask])) / np.sqrt(Tt[mask])
    variation = float((R.max() - R.min()) / R.mean())
    kappa, _, kappa_resid = fit_loglam_model(traj)
    return {
        "log_correction_slope": slope,
        "R_relative_variation": variation,
        "kappa": kappa,
        "kappa_fit_residual": kappa_resid,
        "lambda_range": (float(lam[mask].max()), float(lam[mask].min())),
    }


def sqrt_b1_coefficient(family, b1_ref: float = 1e-3) -> float:
    """c in the model C(b_1) = c sqrt(b_1), taken from the profile module's
    exact-integral C_b1 at a reference b1."""
    from .profiles import build_sigma
    sig = build_sigma(family, b1_ref)
    return sig.C_b1 / math.sqrt(b1_ref)
