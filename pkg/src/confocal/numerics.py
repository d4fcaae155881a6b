"""Shared numerical machinery: RK4 line stepping, finite-difference stencils
on uniform grids, composite line quadrature, and log-log slope fits."""

from __future__ import annotations

import numpy as np


def rk4_step(f, t: float, y, h: float):
    """One classical RK4 step for y' = f(t, y); y is any array-like state."""
    k1 = f(t, y)
    k2 = f(t + 0.5 * h, y + 0.5 * h * k1)
    k3 = f(t + 0.5 * h, y + 0.5 * h * k2)
    k4 = f(t + h, y + h * k3)
    return y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def rk4_line(f, t0: float, y0, h: float, steps: int, callback=None):
    """Integrate y' = f(t, y) over `steps` RK4 steps; callback(i, t, y) after each."""
    t, y = t0, y0
    for i in range(steps):
        y = rk4_step(f, t, y, h)
        t = t0 + (i + 1) * h
        if callback is not None:
            callback(i + 1, t, y)
    return y


# finite differences along one axis of a grid field ---------------------------

_D1_COEFS_2 = {  # offset: weight, times 1/h
    "interior": ([-1, 1], [-0.5, 0.5]),
    "left": ([0, 1, 2], [-1.5, 2.0, -0.5]),
    "right": ([-2, -1, 0], [0.5, -2.0, 1.5]),
}


def diff1(field: np.ndarray, axis: int, h: float, order: int = 2) -> np.ndarray:
    """First derivative of a sampled field along `axis` (uniform spacing h).

    order=2: 3-point central, one-sided at edges.  order=4: 5-point central
    with 5-point one-sided stencils at the two boundary layers.
    """
    f = np.moveaxis(np.asarray(field), axis, 0)
    out = np.empty_like(f, dtype=complex)
    npts = f.shape[0]
    if order == 2:
        if npts < 3:
            raise ValueError("need >= 3 points for order-2 differences")
        out[1:-1] = (f[2:] - f[:-2]) / (2 * h)
        out[0] = (-1.5 * f[0] + 2.0 * f[1] - 0.5 * f[2]) / h
        out[-1] = (0.5 * f[-3] - 2.0 * f[-2] + 1.5 * f[-1]) / h
    elif order == 4:
        if npts < 5:
            raise ValueError("need >= 5 points for order-4 differences")
        out[2:-2] = (f[:-4] - 8 * f[1:-3] + 8 * f[3:-1] - f[4:]) / (12 * h)
        # one-sided / skewed 5-point stencils for the boundary layers
        out[0] = (-25 * f[0] + 48 * f[1] - 36 * f[2] + 16 * f[3] - 3 * f[4]) / (12 * h)
        out[1] = (-3 * f[0] - 10 * f[1] + 18 * f[2] - 6 * f[3] + f[4]) / (12 * h)
        out[-2] = (3 * f[-1] + 10 * f[-2] - 18 * f[-3] + 6 * f[-4] - f[-5]) / (12 * h)
        out[-1] = (25 * f[-1] - 48 * f[-2] + 36 * f[-3] - 16 * f[-4] + 3 * f[-5]) / (12 * h)
    else:
        raise ValueError("order must be 2 or 4")
    return np.moveaxis(out, 0, axis)


def cumulative_line_integral(samples: np.ndarray, h: float) -> np.ndarray:
    """Cumulative integral of node samples along axis 0 (4th-order composite).

    Uses the cumulative form of 4-point Newton-Cotes locally: the increment
    over [t_i, t_{i+1}] is evaluated from a cubic through the four nearest
    samples, so the global error is O(h^4) for smooth integrands.
    """
    f = np.asarray(samples, dtype=complex)
    npts = f.shape[0]
    out = np.zeros_like(f)
    if npts == 1:
        return out
    if npts < 4:
        # trapezoid fallback for very short lines
        inc = 0.5 * h * (f[:-1] + f[1:])
        out[1:] = np.cumsum(inc, axis=0)
        return out
    # cubic-panel weights for the integral over one step, by panel position
    w_first = np.array([9.0, 19.0, -5.0, 1.0]) * (h / 24.0)
    w_mid = np.array([-1.0, 13.0, 13.0, -1.0]) * (h / 24.0)
    w_last = w_first[::-1]
    inc = np.empty((npts - 1,) + f.shape[1:], dtype=complex)
    inc[0] = np.tensordot(w_first, f[0:4], axes=(0, 0))
    if npts > 3:
        inc[1:-1] = (w_mid[0] * f[0:-3] + w_mid[1] * f[1:-2]
                     + w_mid[2] * f[2:-1] + w_mid[3] * f[3:])
    inc[npts - 2] = np.tensordot(w_last, f[npts - 4:npts], axes=(0, 0))
    out[1:] = np.cumsum(inc, axis=0)
    return out


def loglog_slope(hs, errs) -> float:
    """Least-squares slope of log(err) against log(h)."""
    hs = np.asarray(hs, dtype=float)
    errs = np.asarray(errs, dtype=float)
    mask = errs > 0
    return float(np.polyfit(np.log(hs[mask]), np.log(errs[mask]), 1)[0])


def correlation(x, y) -> float:
    """Plain Pearson correlation of two (possibly complex) flattened fields,
    computed on stacked real and imaginary parts."""
    a = np.asarray(x).ravel()
    b = np.asarray(y).ravel()
    a = np.concatenate([a.real, a.imag])
    b = np.concatenate([b.real, b.imag])
    a = a - a.mean()
    b = b - b.mean()
    denom = np.sqrt((a @ a) * (b @ b))
    if denom == 0:
        return 0.0
    return float((a @ b) / denom)


def fit_scale(x, y) -> complex:
    """Least-squares c minimizing |y - c x| over flattened complex fields."""
    a = np.asarray(x).ravel()
    b = np.asarray(y).ravel()
    denom = np.vdot(a, a)
    if denom == 0:
        return 0.0
    return complex(np.vdot(a, b) / denom)
