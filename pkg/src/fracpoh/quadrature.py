"""Radial quadrature helpers for integrals against r^(-1-2s)."""

import numpy as np
from scipy.special import roots_jacobi, roots_legendre

_GL4 = roots_legendre(4)


def linear_moment_weights(lo, hi, s):
    """Weights (w_lo, w_hi) with int_lo^hi v(r) r^(-1-2s) dr = w_lo v(lo) + w_hi v(hi) for linear v.

    Closed forms in expm1/log form are used for well-separated endpoints;
    short segments (relative length < 0.05) use 4-point Gauss-Legendre, which
    is exact to ~1e-12 there and avoids cancellation.
    """
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    L = hi - lo
    ok = L > 0
    safe_lo = np.where(ok, lo, 1.0)
    safe_L = np.where(ok, L, 1.0)
    delta = safe_L / safe_lo
    lg = np.log1p(delta)
    # int r^(-1-2s) and int (r - lo) r^(-1-2s)
    J0 = safe_lo ** (-2 * s) * (-np.expm1(-2 * s * lg)) / (2 * s)
    if abs(1 - 2 * s) < 1e-14:
        Jr = lg
    else:
        Jr = safe_lo ** (1 - 2 * s) * np.expm1((1 - 2 * s) * lg) / (1 - 2 * s)
    J1 = Jr - safe_lo * J0
    short = delta < 0.05
    if np.any(short):
        x, w = _GL4
        t = 0.5 * (1 + x)
        r = safe_lo[..., None] + safe_L[..., None] * t
        kern = r ** (-1 - 2 * s) * (0.5 * w) * safe_L[..., None]
        J0s = kern.sum(-1)
        J1s = (kern * (r - safe_lo[..., None])).sum(-1)
        J0 = np.where(short, J0s, J0)
        J1 = np.where(short, J1s, J1)
    w_hi = np.where(ok, J1 / safe_L, 0.0)
    w_lo = np.where(ok, J0 - J1 / safe_L, 0.0)
    return w_lo, w_hi


def polyline_weights(r, s):
    """Product-integration weights for samples r (increasing along the last axis)."""
    w_lo, w_hi = linear_moment_weights(r[..., :-1], r[..., 1:], s)
    om = np.zeros(r.shape)
    om[..., :-1] += w_lo
    om[..., 1:] += w_hi
    return om


def graded_reference(levels, ratio, order):
    """Nodes/weights on [0,1] from Gauss-Legendre panels graded geometrically toward both ends."""
    left = 0.5 * ratio ** np.arange(levels, 0, -1)
    edges = np.concatenate([[0.0], left, [0.5], 1 - left[::-1], [1.0]])
    x, w = roots_legendre(order)
    a, b = edges[:-1, None], edges[1:, None]
    nodes = (0.5 * (a + b) + 0.5 * (b - a) * x).ravel()
    weights = (0.5 * (b - a) * w).ravel()
    return nodes, weights


def jacobi_near_rule(order, s):
    """Nodes/weights on [0,1] for int_0^1 g(t) t^(1-2s) dt."""
    x, w = roots_jacobi(order, 0.0, 1.0 - 2 * s)
    return 0.5 * (1 + x), w * 0.5 ** (2 - 2 * s)


def piecewise_rule(breaks, levels=14, ratio=0.25, order=12):
    """Composite graded rule over consecutive breakpoints along the last axis.

    breaks has shape (..., k); returns nodes and weights of shape
    (..., (k-1) * panels) for integrals of smooth-or-endpoint-singular
    integrands over [breaks[..., 0], breaks[..., -1]].
    """
    t, w = graded_reference(levels, ratio, order)
    a = breaks[..., :-1, None]
    b = breaks[..., 1:, None]
    nodes = a + (b - a) * t
    weights = (b - a) * w
    shape = breaks.shape[:-1] + (-1,)
    return nodes.reshape(shape), weights.reshape(shape)
