"""Boundary trace u/d^s and boundary-regularity exponents of grid functions."""

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .errors import ParameterError
from .geometry import Interval, _as_points

LADDER_LEVELS = 6


@dataclass
class TraceSample:
    z: np.ndarray
    normal: np.ndarray
    value: float                 # extrapolated lim u/d^s at z
    radii: np.ndarray            # ladder t_k
    quotients: np.ndarray        # u/d^s at z - t_k nu
    order: float                 # assumed leading correction exponent
    fit_residual: float
    warning: str = ""


@dataclass
class RegularityFit:
    z: np.ndarray
    radii: np.ndarray
    Q: np.ndarray                # L2 projections Q(r_k)
    deviation: np.ndarray        # sup over the ball of |u - Q(r_k) d^s|
    theta: np.ndarray            # r_k^(-s-gamma_fit) * deviation
    gamma_fit: float             # +inf when every deviation vanishes
    r_squared: float
    counts: np.ndarray = field(default=None)


def boundary_normal(domain, z):
    """Outward unit normal at a boundary point."""
    z = np.asarray(z, dtype=float).reshape(-1)
    if isinstance(domain, Interval):
        if abs(z[0] - domain.b) <= 1e-12 * max(1.0, abs(domain.b)):
            return np.array([1.0])
        if abs(z[0] - domain.a) <= 1e-12 * max(1.0, abs(domain.a)):
            return np.array([-1.0])
        raise ParameterError(f"{z[0]} is not an endpoint of the interval")
    if abs(domain.exact_distance(z.reshape(1, -1))[0]) > 1e-9 * domain.diameter:
        raise ParameterError(f"{z.tolist()} is not on the boundary")
    return domain.boundary_normal(z.reshape(1, -1))[0]


def theory_order(s):
    """The correction exponent min(s, 1-s) guaranteed for general data."""
    return min(s, 1 - s)


DEFAULT_ORDER = "auto"
MIN_ORDER, MAX_ORDER = 0.1, 2.0
RADII_LEVELS = 5


def default_radii(domain, levels=RADII_LEVELS):
    """cap/2 * 2^-k: balls stay inside the zone where d is the exact distance."""
    return 0.5 * domain.distance_cap * 0.5 ** np.arange(levels)


def _observed_order(q):
    """log2 of the ratio of the last two ladder differences, or None if not geometric."""
    d1, d2 = q[-2] - q[-3], q[-1] - q[-2]
    if d1 == 0 or d2 == 0 or np.sign(d1) != np.sign(d2) or abs(d2) >= abs(d1):
        return None
    return float(np.log2(d1 / d2))


def trace_quotient(u, domain, z, s, t0=None, levels=LADDER_LEVELS, order=DEFAULT_ORDER,
                   monotone_tol=1e-3):
    """Extrapolated boundary value of u/d^s at the boundary point z.

    Samples x_k = z - t_k nu(z) on the ladder t_k = t0 2^-k (t0 = distance_cap/2
    by default, so d(x_k) = t_k) and Richardson-extrapolates the two finest
    levels assuming q(t) = Q + c t^order.  order = "auto" (default) takes the
    order observed on the three finest levels, falling back to 1 when the
    ladder is not geometric; a number fixes it (theory_order(s) is the
    exponent guaranteed for rough data).  fit_residual is the rms misfit of
    Q + c t^order over the whole ladder.
    """
    z = np.asarray(z, dtype=float).reshape(-1)
    nu = boundary_normal(domain, z)
    if t0 is None:
        t0 = 0.5 * domain.distance_cap
    if levels < 3:
        raise ParameterError("the trace ladder needs at least 3 levels")
    t = t0 * 0.5 ** np.arange(levels)
    X = z[None, :] - t[:, None] * nu[None, :]
    exact = domain.exact_distance(X)
    if np.any(exact <= 0) or np.any(np.abs(exact - t) > 1e-9 * t0):
        raise ParameterError("trace ladder leaves the domain or the normal segment; reduce t0")
    d = domain.distance(X)
    vals = u(X) if callable(u) else u.grid.interpolate(u.values, X)
    q = np.asarray(vals, dtype=float).reshape(-1) / d**s
    if order == "auto":
        est = _observed_order(q)
        order = 1.0 if est is None else min(max(est, MIN_ORDER), MAX_ORDER)
    order = float(order)
    if not order > 0:
        raise ParameterError("extrapolation order must be positive")
    value = q[-1] + (q[-1] - q[-2]) / (2**order - 1)
    B = np.stack([np.ones(levels), t**order], axis=1)
    coef, *_ = np.linalg.lstsq(B, q, rcond=None)
    resid = float(np.sqrt(np.mean((B @ coef - q) ** 2)))
    dq = np.diff(q)
    warning = ""
    scale = max(np.max(np.abs(q)), 1e-300)
    if np.any(dq > monotone_tol * scale) and np.any(dq < -monotone_tol * scale):
        warning = "ladder values are not monotone; extrapolation may be unreliable"
    return TraceSample(z, nu, float(value), t, q, order, resid, warning)


def _nodes_and_values(u):
    return u.grid.nodes, u.values, u.grid.weights


def regularity_probe(u, domain, z, s, radii=None, min_spacings=4.0, zero_tol=1e-13):
    """Fit |u - Q(r) d^s| <= C r^(s + gamma) on balls B_r(z).

    Q(r) = sum(u d^s w) / sum(d^2s w) over grid nodes in B_r(z); the returned
    gamma_fit comes from a least-squares fit of log sup|u - Q(r) d^s| against
    log r.  Radii below min_spacings times the largest node spacing inside the
    ball are dropped as unresolved.
    """
    z = np.asarray(z, dtype=float).reshape(-1)
    r = np.asarray(default_radii(domain) if radii is None else radii, dtype=float).reshape(-1)
    if np.any(np.diff(r) >= 0):
        raise ParameterError("radii must be strictly decreasing")
    X, v, w = _nodes_and_values(u)
    d = domain.distance(X)
    ds = d**s
    spacing = u.grid.spacing()
    dist = np.linalg.norm(X - z[None, :], axis=1)
    keep, Q, dev, counts = [], [], [], []
    for rk in r:
        inb = dist < rk
        if inb.sum() < 3 or rk < min_spacings * spacing[inb].max():
            continue
        q = np.sum(v[inb] * ds[inb] * w[inb]) / np.sum(ds[inb] ** 2 * w[inb])
        keep.append(rk)
        Q.append(q)
        dev.append(np.max(np.abs(v[inb] - q * ds[inb])))
        counts.append(int(inb.sum()))
    if len(keep) < 3:
        raise ParameterError(f"only {len(keep)} radii are resolvable on this grid; need 3")
    keep, Q, dev = np.array(keep), np.array(Q), np.array(dev)
    scale = max(np.max(np.abs(v)), 1e-300)
    if np.all(dev <= zero_tol * scale):
        return RegularityFit(z, keep, Q, dev, np.zeros_like(dev), np.inf, 1.0, np.array(counts))
    lr, ld = np.log(keep), np.log(np.maximum(dev, zero_tol * scale))
    slope, icpt = np.polyfit(lr, ld, 1)
    pred = slope * lr + icpt
    ss_tot = np.sum((ld - ld.mean()) ** 2)
    r2 = 1.0 - np.sum((ld - pred) ** 2) / ss_tot if ss_tot > 0 else 1.0
    gamma = float(slope - s)
    theta = keep ** (-s - gamma) * dev
    return RegularityFit(z, keep, Q, dev, theta, gamma, float(r2), np.array(counts))


def projection_objective(u, domain, z, r, s, Q):
    """sum over B_r(z) of w (u - Q d^s)^2, the quantity Q(r) minimizes."""
    X, v, w = _nodes_and_values(u)
    inb = np.linalg.norm(X - np.asarray(z, dtype=float).reshape(1, -1), axis=1) < r
    ds = domain.distance(X[inb]) ** s
    return float(np.sum(w[inb] * (v[inb] - Q * ds) ** 2))


def holder_seminorm_probe(u, exponent, max_pairs=4_000_000, seed=0, include_boundary=True):
    """max over node pairs of |u(x) - u(y)| / |x - y|^exponent.

    u is zero outside the domain, so boundary points (u = 0) are added to the
    node set.  All pairs are used when there are at most max_pairs of them;
    otherwise every node is paired with its nearest neighbours and with a
    seeded random sample.
    """
    if not (0 < exponent <= 1):
        raise ParameterError(f"exponent must lie in (0, 1], got {exponent!r}")
    grid = u.grid
    X, v = grid.nodes, u.values
    if include_boundary:
        bq = grid.domain.boundary_nodes(max(2, int(np.sqrt(grid.size)) * 4))
        X = np.concatenate([X, bq.nodes])
        v = np.concatenate([v, np.zeros(bq.size)])
    m = X.shape[0]
    if m * (m - 1) // 2 <= max_pairs:
        best = 0.0
        chunk = max(1, int(2_000_000 // m))
        for a in range(0, m, chunk):
            b = min(m, a + chunk)
            D = np.linalg.norm(X[a:b, None, :] - X[None, :, :], axis=-1)
            dv = np.abs(v[a:b, None] - v[None, :])
            with np.errstate(divide="ignore", invalid="ignore"):
                ratio = np.where(D > 0, dv / D**exponent, 0.0)
            best = max(best, float(ratio.max()))
        return best
    tree = cKDTree(X)
    _, nb = tree.query(X, k=9)
    rng = np.random.default_rng(seed)
    extra = max_pairs // m
    rnd = rng.integers(0, m, size=(m, extra))
    J = np.concatenate([nb[:, 1:], rnd], axis=1)
    D = np.linalg.norm(X[:, None, :] - X[J], axis=-1)
    dv = np.abs(v[:, None] - v[J])
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(D > 0, dv / D**exponent, 0.0)
    return float(ratio.max())


def points_from_spec(domain, points, m=None):
    """Boundary points for a trace block: "all" or a list of boundary-node indices."""
    bq = domain.boundary_nodes(m if m is not None else (2 if domain.n == 1 else 64))
    if points == "all":
        return bq.nodes
    idx = np.asarray(points, dtype=int)
    if np.any(idx < 0) or np.any(idx >= bq.size):
        raise ParameterError(f"boundary point indices must lie in [0, {bq.size})")
    return _as_points(bq.nodes[idx], domain.n)[0]
