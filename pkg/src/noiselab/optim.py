"""Shared nonlinear least-squares machinery.

All model fits in this package are small (2-11 parameter) smooth problems
with nasty multimodality in the frequency directions, so the strategy is
everywhere the same: scale parameters to O(1), run bounded Nelder-Mead from
several seeds, then sharpen the best minimum with coordinate-wise quadratic
polish.  Uncertainties come from a central finite-difference Jacobian of the
residual vector at the optimum,

    C = (J^T J)^{-1} * L_min / (N - p) ,

with a pseudo-inverse (and a degeneracy flag) when J^T J is ill-conditioned.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy.optimize import Bounds, minimize

# steps of the quadratic polish, in scaled (O(1)) coordinates
_POLISH_STEPS = (1e-2, 1e-4, 1e-6)


@dataclass
class MultistartResult:
    x: np.ndarray
    fun: float
    success: bool
    nfev: int
    start_values: list[float]


def _clip(x: np.ndarray, lo: np.ndarray, hi: np.ndarray) -> np.ndarray:
    return np.minimum(np.maximum(x, lo), hi)


def _polish(fun: Callable, x: np.ndarray, fx: float, lo: np.ndarray, hi: np.ndarray) -> tuple[np.ndarray, float, int]:
    """Coordinate-wise quadratic refinement; assumes scaled coordinates."""
    nfev = 0
    for h in _POLISH_STEPS:
        for i in range(x.shape[0]):
            xp, xm = x.copy(), x.copy()
            xp[i] = min(x[i] + h, hi[i])
            xm[i] = max(x[i] - h, lo[i])
            if xp[i] == xm[i]:
                continue
            fp, fm = fun(xp), fun(xm)
            nfev += 2
            best = min(fp, fm)
            curvature = fp - 2.0 * fx + fm
            if curvature > 0 and np.isfinite(curvature):
                delta = -0.5 * (fp - fm) / curvature * h
                delta = float(np.clip(delta, -2.0 * h, 2.0 * h))
                xn = x.copy()
                xn[i] = float(np.clip(x[i] + delta, lo[i], hi[i]))
                fn = fun(xn)
                nfev += 1
                if fn < fx:
                    x, fx = xn, fn
                    continue
            if best < fx:
                x, fx = (xp, fp) if fp <= fm else (xm, fm)
    return x, fx, nfev


def minimize_multistart(
    fun: Callable[[np.ndarray], float],
    starts: Sequence[np.ndarray],
    lower: np.ndarray,
    upper: np.ndarray,
    scale: np.ndarray | None = None,
    maxfev: int = 1600,
) -> MultistartResult:
    """Bounded Nelder-Mead from each start, then quadratic polish of the best.

    scale holds per-parameter magnitudes; optimisation runs on x/scale so the
    simplex geometry is sane for parameters spanning decades.
    """
    lower = np.asarray(lower, dtype=float)
    upper = np.asarray(upper, dtype=float)
    if scale is None:
        scale = np.ones_like(lower)
    scale = np.asarray(scale, dtype=float)
    if np.any(scale <= 0) or not np.all(np.isfinite(scale)):
        raise ValueError("scales must be positive and finite")

    lo_s = lower / scale
    hi_s = upper / scale

    def fun_s(xs: np.ndarray) -> float:
        with np.errstate(over="ignore", invalid="ignore", under="ignore"):
            value = fun(xs * scale)
        if not np.isfinite(value):
            return 1e300
        return float(value)

    best_x = None
    best_f = np.inf
    any_success = False
    nfev = 0
    start_values = []
    for x0 in starts:
        x0_s = _clip(np.asarray(x0, dtype=float) / scale, lo_s, hi_s)
        res = minimize(
            fun_s,
            x0_s,
            method="Nelder-Mead",
            bounds=Bounds(lo_s, hi_s),
            options={"maxfev": maxfev, "xatol": 1e-8, "fatol": 1e-13, "adaptive": True},
        )
        nfev += res.nfev
        start_values.append(float(res.fun))
        any_success = any_success or bool(res.success)
        if res.fun < best_f:
            best_f = float(res.fun)
            best_x = np.asarray(res.x, dtype=float)
    assert best_x is not None, "no starts supplied"
    best_x, best_f, extra = _polish(fun_s, best_x, best_f, lo_s, hi_s)
    nfev += extra
    return MultistartResult(
        x=best_x * scale, fun=best_f, success=any_success, nfev=nfev, start_values=start_values
    )


def central_jacobian(
    residuals: Callable[[np.ndarray], np.ndarray], x: np.ndarray
) -> np.ndarray:
    """d r / d x by central differences, step max(1e-6, 1e-4 |x_i|)."""
    x = np.asarray(x, dtype=float)
    r0 = np.asarray(residuals(x))
    jac = np.empty((r0.shape[0], x.shape[0]))
    for i in range(x.shape[0]):
        h = max(1e-6, 1e-4 * abs(x[i]))
        xp, xm = x.copy(), x.copy()
        xp[i] += h
        xm[i] -= h
        jac[:, i] = (np.asarray(residuals(xp)) - np.asarray(residuals(xm))) / (2.0 * h)
    return jac


def covariance_from_jacobian(
    jac: np.ndarray, loss: float, n_points: int
) -> tuple[np.ndarray, np.ndarray, bool]:
    """(C, sigma, degenerate) with C = (J^T J)^{-1} s^2, s^2 = L/(N - p).

    Ill-conditioned J^T J (cond > 1e12) switches to the pseudo-inverse and
    flags the fit as degenerate rather than failing.
    """
    n_par = jac.shape[1]
    jtj = jac.T @ jac
    dof = max(n_points - n_par, 1)
    s2 = max(loss, 0.0) / dof
    s2 = max(s2, 1e-24)  # exact-data floor: keeps z-scores finite
    degenerate = n_points <= n_par
    cond = np.linalg.cond(jtj)
    if not np.isfinite(cond) or cond > 1e12:
        inv = np.linalg.pinv(jtj)
        degenerate = True
    else:
        inv = np.linalg.inv(jtj)
    cov = inv * s2
    cov = 0.5 * (cov + cov.T)
    sigma = np.sqrt(np.clip(np.diag(cov), 0.0, None))
    return cov, sigma, degenerate
