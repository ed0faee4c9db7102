"""Bounded smooth domains, regularized distance, grids and boundary quadrature."""

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .errors import ParameterError

DEFAULT_GRADING = 2.0


def _as_points(X, n):
    """Return (points of shape (m, n), was_single)."""
    X = np.asarray(X, dtype=float)
    if n == 1:
        if X.ndim == 0:
            return X.reshape(1, 1), True
        if X.ndim == 1:
            return X.reshape(-1, 1), False
        return X.reshape(-1, 1), False
    if X.ndim == 1:
        if X.size != n:
            raise ParameterError(f"point has {X.size} coordinates, expected {n}")
        return X.reshape(1, n), True
    if X.shape[-1] != n:
        raise ParameterError(f"points have {X.shape[-1]} coordinates, expected {n}")
    return X.reshape(-1, n), False


def _unwrap(vals, single):
    return float(vals[0]) if single else vals


def regularize_distance(delta, cap):
    """C^{1,1} cap of the exact distance: identity up to cap/2, constant cap beyond 3cap/2."""
    delta = np.asarray(delta, dtype=float)
    t = np.clip(delta, 0.0, None)
    blend = t - (t - 0.5 * cap) ** 2 / (2 * cap)
    return np.where(t <= 0.5 * cap, t, np.where(t >= 1.5 * cap, cap, blend))


def _rot(angle):
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[c, -s], [s, c]])


@dataclass(frozen=True)
class BoundaryQuadrature:
    nodes: np.ndarray     # (m, n)
    normals: np.ndarray   # (m, n), outward unit
    weights: np.ndarray   # (m,)

    @property
    def size(self):
        return self.weights.size


class Domain:
    """Base class; subclasses implement the shape-specific geometry."""

    shape = "domain"
    n = 0

    def __init__(self, distance_cap=None):
        cap = self.default_cap() if distance_cap is None else float(distance_cap)
        if not (np.isfinite(cap) and cap > 0):
            raise ParameterError(f"distance_cap must be positive, got {distance_cap!r}")
        self.distance_cap = cap

    # shape interface
    def exact_distance(self, X):
        """Signed distance to the boundary (positive inside)."""
        raise NotImplementedError

    def default_cap(self):
        return 0.5 * min(self.inradius, self.min_curvature_radius)

    min_curvature_radius = np.inf

    def contains(self, X):
        P, single = _as_points(X, self.n)
        inside = self.exact_distance(P) > 0
        return bool(inside[0]) if single else inside

    def distance(self, X):
        """Regularized distance d(x); zero outside the domain."""
        P, single = _as_points(X, self.n)
        return _unwrap(regularize_distance(self.exact_distance(P), self.distance_cap), single)

    def _check_origin(self, origin):
        o = np.asarray(origin, dtype=float).reshape(-1)
        if o.size != self.n:
            raise ParameterError(f"origin must have {self.n} coordinates")
        if not self.exact_distance(o.reshape(1, -1))[0] > 0:
            raise ParameterError(f"origin {o.tolist()} is not strictly inside the domain")
        return o

    def spec(self):
        return {"shape": self.shape, "params": self.params(), "distance_cap": self.distance_cap}

    def __repr__(self):
        return f"{type(self).__name__}({self.params()}, cap={self.distance_cap:.4g})"


class Interval(Domain):
    shape = "interval"
    n = 1

    def __init__(self, a, b, distance_cap=None):
        a, b = float(a), float(b)
        if not b > a:
            raise ParameterError(f"interval needs a < b, got ({a}, {b})")
        self.a, self.b = a, b
        super().__init__(distance_cap)

    def params(self):
        return {"a": self.a, "b": self.b}

    @property
    def inradius(self):
        return 0.5 * (self.b - self.a)

    @property
    def volume(self):
        return self.b - self.a

    @property
    def diameter(self):
        return self.b - self.a

    def exact_distance(self, X):
        x = np.asarray(X, dtype=float).reshape(-1)
        return np.minimum(x - self.a, self.b - x)

    def boundary_nodes(self, m=2):
        return BoundaryQuadrature(np.array([[self.a], [self.b]]), np.array([[-1.0], [1.0]]),
                                  np.array([1.0, 1.0]))

    def star_shape_margin(self, origin):
        o = self._check_origin(origin)[0]
        return min(o - self.a, self.b - o)

    def scaled(self, t):
        return Interval(self.a * t, self.b * t, self.distance_cap * t)

    def translated(self, shift):
        return Interval(self.a + shift, self.b + shift, self.distance_cap)


class _Planar(Domain):
    n = 2

    def boundary_normal(self, Z):
        raise NotImplementedError

    def star_shape_margin(self, origin):
        raise NotImplementedError


class Ball(_Planar):
    """Disk of given center and radius."""

    shape = "ball"

    def __init__(self, center=(0.0, 0.0), radius=1.0, distance_cap=None):
        self.center = np.array(center, dtype=float).reshape(2)
        self.radius = float(radius)
        if not self.radius > 0:
            raise ParameterError("ball radius must be positive")
        super().__init__(distance_cap)

    def params(self):
        return {"center": self.center.tolist(), "radius": self.radius}

    @property
    def inradius(self):
        return self.radius

    @property
    def min_curvature_radius(self):
        return self.radius

    @property
    def volume(self):
        return np.pi * self.radius**2

    @property
    def diameter(self):
        return 2 * self.radius

    @property
    def perimeter(self):
        return 2 * np.pi * self.radius

    def exact_distance(self, X):
        P = np.asarray(X, dtype=float).reshape(-1, 2)
        return self.radius - np.linalg.norm(P - self.center, axis=1)

    def polar_map(self):
        return self.center, self.radius * np.eye(2), 0.0, 1.0, "origin"

    def line_intervals(self, X, dirs):
        return _ellipse_chords(X, dirs, self.center, self.radius * np.eye(2))

    def boundary_nodes(self, m):
        if m < 2:
            raise ParameterError("need at least 2 boundary nodes")
        t = 2 * np.pi * np.arange(m) / m
        nu = np.stack([np.cos(t), np.sin(t)], axis=1)
        return BoundaryQuadrature(self.center + self.radius * nu, nu,
                                  np.full(m, 2 * np.pi * self.radius / m))

    def star_shape_margin(self, origin):
        o = self._check_origin(origin)
        return self.radius - float(np.linalg.norm(self.center - o))

    def boundary_normal(self, Z):
        v = np.asarray(Z, dtype=float).reshape(-1, 2) - self.center
        return v / np.linalg.norm(v, axis=1, keepdims=True)

    def scaled(self, t):
        return Ball(self.center * t, self.radius * t, self.distance_cap * t)


class Ellipse(_Planar):
    """Ellipse with semi-axes (A, B) along a frame rotated by `angle`."""

    shape = "ellipse"

    def __init__(self, center=(0.0, 0.0), semi_axes=(2.0, 1.0), angle=0.0, distance_cap=None):
        self.center = np.array(center, dtype=float).reshape(2)
        A, B = (float(v) for v in semi_axes)
        if not (A > 0 and B > 0):
            raise ParameterError("ellipse semi-axes must be positive")
        self.semi_axes = (A, B)
        self.angle = float(angle)
        self.R = _rot(self.angle)
        super().__init__(distance_cap)

    def params(self):
        return {"center": self.center.tolist(), "semi_axes": list(self.semi_axes), "angle": self.angle}

    @property
    def inradius(self):
        return min(self.semi_axes)

    @property
    def min_curvature_radius(self):
        A, B = self.semi_axes
        return min(A, B) ** 2 / max(A, B)

    @property
    def volume(self):
        return np.pi * self.semi_axes[0] * self.semi_axes[1]

    @property
    def diameter(self):
        return 2 * max(self.semi_axes)

    @property
    def perimeter(self):
        speed = self._speed_coeffs()
        return float(2 * np.pi * speed[0].real)

    def _body(self, P):
        return (np.asarray(P, dtype=float).reshape(-1, 2) - self.center) @ self.R

    def exact_distance(self, X):
        q = self._body(X)
        A, B = self.semi_axes
        inside = (q[:, 0] / A) ** 2 + (q[:, 1] / B) ** 2 < 1
        if A == B:
            return A - np.linalg.norm(q, axis=1)
        dist = _ellipse_point_distance(q, A, B)
        return np.where(inside, dist, -dist)

    def polar_map(self):
        A, B = self.semi_axes
        return self.center, self.R @ np.diag([A, B]), 0.0, 1.0, "origin"

    def boundary_normal(self, Z):
        A, B = self.semi_axes
        q = self._body(Z)
        g = np.stack([q[:, 0] / A**2, q[:, 1] / B**2], axis=1) @ self.R.T
        return g / np.linalg.norm(g, axis=1, keepdims=True)

    def line_intervals(self, X, dirs):
        return _ellipse_chords(X, dirs, self.center, self.R @ np.diag(self.semi_axes))

    def _speed_coeffs(self, K=1024):
        A, B = self.semi_axes
        t = 2 * np.pi * np.arange(K) / K
        speed = np.hypot(A * np.sin(t), B * np.cos(t))
        return np.fft.rfft(speed) / K

    def _arclength(self, t, coeffs):
        # s(t) = c0 t + sum_k 2 Re(c_k e^{ikt}/(ik)), from the Fourier series of the speed
        k = np.arange(1, coeffs.size)
        ph = np.exp(1j * np.outer(t, k))
        return coeffs[0].real * t + 2 * np.real(ph @ (coeffs[1:] / (1j * k))) - 2 * np.real(
            np.sum(coeffs[1:] / (1j * k)))

    def boundary_nodes(self, m):
        if m < 2:
            raise ParameterError("need at least 2 boundary nodes")
        A, B = self.semi_axes
        coeffs = self._speed_coeffs()
        P = 2 * np.pi * coeffs[0].real
        target = P * np.arange(m) / m
        t = 2 * np.pi * np.arange(m) / m
        for _ in range(30):
            f = self._arclength(t, coeffs) - target
            step = f / np.hypot(A * np.sin(t), B * np.cos(t))
            t = t - step
            if np.max(np.abs(step)) < 1e-15:
                break
        zb = np.stack([A * np.cos(t), B * np.sin(t)], axis=1)
        nb = np.stack([B * np.cos(t), A * np.sin(t)], axis=1)
        nb /= np.linalg.norm(nb, axis=1, keepdims=True)
        return BoundaryQuadrature(self.center + zb @ self.R.T, nb @ self.R.T, np.full(m, P / m))

    def star_shape_margin(self, origin):
        from scipy.optimize import minimize_scalar

        o = self._check_origin(origin)
        q = (o - self.center) @ self.R
        A, B = self.semi_axes

        def support(t):
            return (A * B - q[0] * B * np.cos(t) - q[1] * A * np.sin(t)) / np.hypot(
                B * np.cos(t), A * np.sin(t))

        t = 2 * np.pi * np.arange(4096) / 4096
        k = int(np.argmin(support(t)))
        h = 2 * np.pi / 4096
        res = minimize_scalar(support, bounds=(t[k] - h, t[k] + h), method="bounded",
                              options={"xatol": 1e-14})
        return float(min(res.fun, support(t[k])))

    def scaled(self, t):
        A, B = self.semi_axes
        return Ellipse(self.center * t, (A * t, B * t), self.angle, self.distance_cap * t)


class Annulus(_Planar):
    shape = "annulus"

    def __init__(self, r_in=0.5, r_out=1.0, center=(0.0, 0.0), distance_cap=None):
        self.r_in, self.r_out = float(r_in), float(r_out)
        if not (0 < self.r_in < self.r_out):
            raise ParameterError("annulus needs 0 < r_in < r_out")
        self.center = np.array(center, dtype=float).reshape(2)
        super().__init__(distance_cap)

    def params(self):
        return {"r_in": self.r_in, "r_out": self.r_out, "center": self.center.tolist()}

    @property
    def inradius(self):
        return 0.5 * (self.r_out - self.r_in)

    @property
    def min_curvature_radius(self):
        return self.r_in

    @property
    def volume(self):
        return np.pi * (self.r_out**2 - self.r_in**2)

    @property
    def diameter(self):
        return 2 * self.r_out

    @property
    def perimeter(self):
        return 2 * np.pi * (self.r_in + self.r_out)

    def exact_distance(self, X):
        r = np.linalg.norm(np.asarray(X, dtype=float).reshape(-1, 2) - self.center, axis=1)
        return np.minimum(r - self.r_in, self.r_out - r)

    def polar_map(self):
        return self.center, np.eye(2), self.r_in, self.r_out, "boundary"

    def boundary_normal(self, Z):
        v = np.asarray(Z, dtype=float).reshape(-1, 2) - self.center
        r = np.linalg.norm(v, axis=1, keepdims=True)
        outer = r > 0.5 * (self.r_in + self.r_out)
        return np.where(outer, 1.0, -1.0) * v / r

    def line_intervals(self, X, dirs):
        outer = _ellipse_chords(X, dirs, self.center, self.r_out * np.eye(2))
        inner = _ellipse_chords(X, dirs, self.center, self.r_in * np.eye(2))
        lo_o, hi_o = outer[..., 0, 0], outer[..., 0, 1]
        lo_i, hi_i = inner[..., 0, 0], inner[..., 0, 1]
        hit = np.isfinite(lo_i)
        out = np.full(outer.shape, np.nan)
        out[..., 0, 0] = lo_o
        out[..., 0, 1] = np.where(hit, lo_i, hi_o)
        out[..., 1, 0] = np.where(hit, hi_i, np.nan)
        out[..., 1, 1] = np.where(hit, hi_o, np.nan)
        return out

    def boundary_nodes(self, m):
        if m < 4:
            raise ParameterError("annulus needs at least 4 boundary nodes")
        m_out = int(round(m * self.r_out / (self.r_in + self.r_out)))
        m_out = min(max(m_out, 2), m - 2)
        m_in = m - m_out
        parts = []
        for mm, r, sgn in ((m_out, self.r_out, 1.0), (m_in, self.r_in, -1.0)):
            t = 2 * np.pi * np.arange(mm) / mm
            om = np.stack([np.cos(t), np.sin(t)], axis=1)
            parts.append((self.center + r * om, sgn * om, np.full(mm, 2 * np.pi * r / mm)))
        return BoundaryQuadrature(*(np.concatenate(p) for p in zip(*parts)))

    def star_shape_margin(self, origin):
        o = self._check_origin(origin)
        return -self.r_in - float(np.linalg.norm(self.center - o))

    def scaled(self, t):
        return Annulus(self.r_in * t, self.r_out * t, self.center * t, self.distance_cap * t)


def _ellipse_chords(X, dirs, center, J):
    """Parameter intervals r with X + r*dir inside the ellipse c + J(unit disk).

    Returns shape (m, k, 2, 2): one interval per (point, direction) in slot 0,
    slot 1 left as NaN (convex domain).
    """
    Jinv = np.linalg.inv(J)
    p = (np.asarray(X, dtype=float).reshape(-1, 2) - center) @ Jinv.T
    q = np.asarray(dirs, dtype=float).reshape(-1, 2) @ Jinv.T
    a = np.sum(q * q, axis=1)[None, :]
    b = p @ q.T
    c = np.sum(p * p, axis=1)[:, None] - 1.0
    disc = b * b - a * c
    with np.errstate(invalid="ignore"):
        sq = np.sqrt(disc)
    lo = np.where(disc > 0, (-b - sq) / a, np.nan)
    hi = np.where(disc > 0, (-b + sq) / a, np.nan)
    # stable root pairing for points near the boundary
    out = np.full(lo.shape + (2, 2), np.nan)
    out[..., 0, 0] = lo
    out[..., 0, 1] = hi
    return out


def _ellipse_point_distance(q, A, B):
    """Euclidean distance from body-frame points q to the ellipse (x/A)^2 + (y/B)^2 = 1."""
    swap = B > A
    if swap:
        q = q[:, ::-1]
        A, B = B, A
    y0, y1 = np.abs(q[:, 0]), np.abs(q[:, 1])
    # points within rounding of an axis are treated as on it
    y0 = np.where(y0 < 1e-14 * A, 0.0, y0)
    y1 = np.where(y1 < 1e-14 * B, 0.0, y1)
    dist = np.empty(q.shape[0])
    gen = (y0 > 0) & (y1 > 0)
    if gen.any():
        z0, z1 = y0[gen], y1[gen]
        lo = -B * B + B * z1
        hi = -B * B + np.sqrt(A * A * z0 * z0 + B * B * z1 * z1)
        for _ in range(200):
            mid = 0.5 * (lo + hi)
            F = (A * z0 / (mid + A * A)) ** 2 + (B * z1 / (mid + B * B)) ** 2 - 1
            pos = F > 0
            lo = np.where(pos, mid, lo)
            hi = np.where(pos, hi, mid)
            if np.all(hi - lo <= 4e-16 * np.maximum(1.0, np.abs(hi))):
                break
        t = 0.5 * (lo + hi)
        x0 = A * A * z0 / (t + A * A)
        x1 = B * B * z1 / (t + B * B)
        dist[gen] = np.hypot(x0 - z0, x1 - z1)
    on_minor = (y0 == 0) & (y1 > 0)
    dist[on_minor] = np.abs(y1[on_minor] - B)
    on_major = y1 == 0
    if on_major.any():
        z0 = y0[on_major]
        near = z0 < (A * A - B * B) / A
        x0 = np.where(near, A * A * z0 / (A * A - B * B), A)
        x1 = np.where(near, B * np.sqrt(np.clip(1 - (x0 / A) ** 2, 0, None)), 0.0)
        dist[on_major] = np.where(near, np.hypot(x0 - z0, x1), np.abs(z0 - A))
    return dist


def make_domain(shape, params=None, distance_cap=None):
    """Build a domain from a shape name and parameter dict."""
    p = dict(params or {})
    try:
        if shape == "interval":
            return Interval(p.get("a", -1.0), p.get("b", 1.0), distance_cap)
        if shape == "ball":
            center = np.atleast_1d(np.asarray(p.get("center", [0.0, 0.0]), dtype=float))
            r = float(p.get("radius", 1.0))
            if center.size == 1:
                return Interval(center[0] - r, center[0] + r, distance_cap)
            return Ball(center, r, distance_cap)
        if shape == "ellipse":
            return Ellipse(p.get("center", [0.0, 0.0]), p.get("semi_axes", [2.0, 1.0]),
                           p.get("angle", 0.0), distance_cap)
        if shape == "annulus":
            return Annulus(p.get("r_in", 0.5), p.get("r_out", 1.0), p.get("center", [0.0, 0.0]),
                           distance_cap)
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ParameterError):
            raise
        raise ParameterError(f"bad parameters for shape {shape!r}: {exc}") from exc
    raise ParameterError(f"unsupported shape {shape!r}")


def domain_from_spec(spec):
    return make_domain(spec["shape"], spec.get("params"), spec.get("distance_cap"))


# --- public operations -----------------------------------------------------

def distance(domain, x):
    return domain.distance(x)


def star_shape_margin(domain, origin):
    """min over the boundary of (z - origin) . nu(z); positive means strictly star-shaped."""
    return domain.star_shape_margin(origin)


def boundary_nodes(domain, m=2):
    if not hasattr(domain, "boundary_nodes"):
        raise ParameterError(f"unsupported shape {type(domain).__name__}")
    return domain.boundary_nodes(m)


def build_grid(domain, N, grading=DEFAULT_GRADING, **kw):
    """Interior grid clustered toward the boundary with exponent `grading`."""
    if int(N) != N or N < 8:
        raise ParameterError(f"grid resolution N must be an integer >= 8, got {N!r}")
    if not grading >= 1:
        raise ParameterError(f"grading exponent must be >= 1, got {grading!r}")
    if isinstance(domain, Interval):
        return IntervalGrid(domain, int(N), float(grading), **kw)
    if isinstance(domain, _Planar):
        return PolarGrid(domain, int(N), float(grading), **kw)
    raise ParameterError(f"unsupported shape {type(domain).__name__}")


def grid_from_spec(spec):
    """Rebuild a grid from the dict returned by its spec()."""
    spec = dict(spec)
    domain = domain_from_spec(spec["domain"])
    kw = {}
    if spec.get("centering") is not None:
        kw["centering"] = spec["centering"]
    if spec.get("n_theta") is not None:
        kw["n_theta"] = spec["n_theta"]
    return build_grid(domain, spec["N"], spec["grading"], **kw)


def _two_sided(xi, beta):
    """Grading map on [0,1] clustering at both ends; returns (g, g')."""
    left = xi <= 0.5
    g = np.where(left, 0.5 * (2 * xi) ** beta, 1 - 0.5 * (2 * (1 - xi)) ** beta)
    dg = np.where(left, beta * (2 * xi) ** (beta - 1), beta * (2 * (1 - xi)) ** (beta - 1))
    return g, dg


class IntervalGrid:
    """Graded nodes on an interval, cell-centred by default.

    Node values are interpolated piecewise linearly, with zero at both
    endpoints and outside.
    """

    n = 1

    def __init__(self, domain, N, grading=DEFAULT_GRADING, centering="cell"):
        self.domain = domain
        self.N = N
        self.grading = grading
        self.centering = centering
        L = domain.b - domain.a
        if centering == "cell":
            xi = (np.arange(N) + 0.5) / N
            g, dg = _two_sided(xi, grading)
            self.weights = L * dg / N
        elif centering == "vertex":
            xi = np.arange(1, N + 1) / (N + 1)
            g, dg = _two_sided(xi, grading)
            self.weights = L * dg / (N + 1)
        else:
            raise ParameterError(f"centering must be 'cell' or 'vertex', got {centering!r}")
        x = domain.a + L * g
        self.x = x
        self.nodes = x.reshape(-1, 1)
        self.P = np.concatenate([[domain.a], x, [domain.b]])
        self.size = N

    def spec(self):
        return {"n": 1, "N": self.N, "grading": self.grading, "centering": self.centering,
                "domain": self.domain.spec()}

    def spacing(self):
        """Smaller of the two adjacent gaps at each node."""
        return np.minimum(np.diff(self.P)[:-1], np.diff(self.P)[1:])

    def boundary_cell_width(self):
        return float(min(self.P[1] - self.P[0], self.P[-1] - self.P[-2]))

    def node_distance(self):
        return self.domain.exact_distance(self.x)

    def interp_weights(self, X):
        """Sparse linear interpolation: indices and weights of shape (m, 2); index -1 = zero."""
        x = np.asarray(X, dtype=float).reshape(-1)
        P = self.P
        k = np.clip(np.searchsorted(P, x, side="right") - 1, 0, self.N)
        x0, x1 = P[k], P[k + 1]
        f = np.clip((x - x0) / (x1 - x0), 0.0, 1.0)
        idx = np.stack([k - 1, k], axis=1)
        w = np.stack([1 - f, f], axis=1)
        idx[:, 1] = np.where(k >= self.N, -1, idx[:, 1])
        outside = (x <= P[0]) | (x >= P[-1])
        w[outside] = 0.0
        w[idx < 0] = 0.0
        return np.where(idx < 0, 0, idx), w

    def interpolate(self, values, X):
        idx, w = self.interp_weights(X)
        return np.sum(np.asarray(values)[idx] * w, axis=1)

    def second_derivative_rows(self):
        """Three-point nonuniform second difference at each node (zero boundary values)."""
        P = self.P
        hl = P[1:-1] - P[:-2]
        hr = P[2:] - P[1:-1]
        cl = 2 / (hl * (hl + hr))
        cr = 2 / (hr * (hl + hr))
        cc = -2 / (hl * hr)
        return cl, cc, cr

    def cells(self):
        """Cell quadrature: centers, lengths, gradient and midpoint-value matrices."""
        P = self.P
        N = self.N
        m = N + 1
        h = np.diff(P)
        rows = np.repeat(np.arange(m), 2)
        cols = np.stack([np.arange(m) - 1, np.arange(m)], axis=1).ravel()
        gv = np.stack([-1 / h, 1 / h], axis=1).ravel()
        cv = np.full(2 * m, 0.5)
        ok = (cols >= 0) & (cols < N)
        G = sp.csr_matrix((gv[ok], (rows[ok], cols[ok])), shape=(m, N))
        C = sp.csr_matrix((cv[ok], (rows[ok], cols[ok])), shape=(m, N))
        centers = 0.5 * (P[:-1] + P[1:]).reshape(-1, 1)
        return CellQuadrature(centers, h, (G,), C)


@dataclass(frozen=True)
class CellQuadrature:
    centers: np.ndarray
    areas: np.ndarray
    gradient: tuple      # sparse matrices, one per coordinate
    midvalue: object     # sparse matrix

    def directional(self, values, field):
        """Cell values of field(x) . grad u."""
        F = np.asarray(field(self.centers), dtype=float).reshape(self.centers.shape)
        return sum(F[:, k] * (G @ values) for k, G in enumerate(self.gradient))


class PolarGrid:
    """Mapped polar grid x = c + J (rho cos t, rho sin t) for disks, ellipses, annuli.

    rho is graded toward the outer boundary (and toward the inner one for the
    annulus); angles are cell-centred.  Interpolation is bilinear in
    (rho, theta).  For disks and ellipses the region inside the first ring is
    bridged through the centre to the antipodal node of the same ring.
    """

    n = 2

    def __init__(self, domain, N, grading=DEFAULT_GRADING, n_theta=None):
        self.domain = domain
        self.N = N
        self.grading = grading
        Nt = N if n_theta is None else int(n_theta)
        if Nt < 8 or Nt % 2:
            raise ParameterError("angular resolution must be even and >= 8")
        self.Nr, self.Nt = N, Nt
        c, J, r0, r1, inner = domain.polar_map()
        self.center, self.J, self.inner = c, J, inner
        self.Jinv = np.linalg.inv(J)
        self.detJ = abs(np.linalg.det(J))
        self.rho_in, self.rho_out = r0, r1
        xi = (np.arange(N) + 0.5) / N
        if inner == "origin":
            self.rho = 1 - (1 - xi) ** grading
            drho = grading * (1 - xi) ** (grading - 1) / N
        else:
            g, dg = _two_sided(xi, grading)
            self.rho = r0 + (r1 - r0) * g
            drho = (r1 - r0) * dg / N
        self.drho = drho
        self.dtheta = 2 * np.pi / Nt
        self.theta = self.dtheta * (np.arange(Nt) + 0.5)
        R, T = np.meshgrid(self.rho, self.theta, indexing="ij")
        p = np.stack([R * np.cos(T), R * np.sin(T)], axis=-1).reshape(-1, 2)
        self.nodes = c + p @ J.T
        self.weights = (self.detJ * self.rho[:, None] * drho[:, None]
                        * np.full((1, Nt), self.dtheta)).ravel()
        self.size = N * Nt
        # ring coordinates including the closing values on either side
        lo = -self.rho[0] if inner == "origin" else r0
        self.ring_edges = np.concatenate([[lo], self.rho, [r1]])

    def spec(self):
        return {"n": 2, "N": self.N, "n_theta": self.Nt, "grading": self.grading,
                "domain": self.domain.spec()}

    def index(self, i, j):
        return i * self.Nt + j % self.Nt

    def node_distance(self):
        return self.domain.exact_distance(self.nodes)

    def to_polar(self, X):
        p = (np.asarray(X, dtype=float).reshape(-1, 2) - self.center) @ self.Jinv.T
        return np.hypot(p[:, 0], p[:, 1]), np.mod(np.arctan2(p[:, 1], p[:, 0]), 2 * np.pi)

    def radial_spacing(self):
        """Radial node gap in x-space (per node)."""
        sv = np.linalg.svd(self.J, compute_uv=False)
        return np.repeat(self.drho, self.Nt) * sv[0]

    def spacing(self):
        """Local node spacing in x-space: max of radial and angular gaps (per node)."""
        sv = np.linalg.svd(self.J, compute_uv=False)
        ang = np.repeat(self.rho, self.Nt) * self.dtheta * sv[0]
        return np.maximum(self.radial_spacing(), ang)

    def boundary_cell_width(self):
        sv = np.linalg.svd(self.J, compute_uv=False)
        w = self.rho_out - self.rho[-1]
        if self.inner == "boundary":
            w = min(w, self.rho[0] - self.rho_in)
        return float(w * sv[-1])

    def interp_weights(self, X):
        """Bilinear (rho, theta) interpolation: indices and weights of shape (m, 4)."""
        rho, th = self.to_polar(X)
        Nr, Nt = self.Nr, self.Nt
        rr = self.ring_edges
        k = np.clip(np.searchsorted(rr, rho, side="right") - 1, 0, Nr)
        r0, r1 = rr[k], rr[k + 1]
        fr = np.clip((rho - r0) / (r1 - r0), 0.0, 1.0)
        tpos = th / self.dtheta - 0.5
        j0 = np.floor(tpos).astype(int)
        ft = tpos - j0
        j0 %= Nt
        j1 = (j0 + 1) % Nt
        ilo, ihi = k - 1, k
        idx = np.zeros((rho.size, 4), dtype=int)
        wt = np.zeros((rho.size, 4))
        if self.inner == "origin":
            across = ilo < 0
            sh = Nt // 2
            a0 = np.where(across, (j0 + sh) % Nt, j0)
            a1 = np.where(across, (j1 + sh) % Nt, j1)
            ilo_ok = np.ones_like(across)
            ilo = np.where(across, 0, ilo)
        else:
            a0, a1 = j0, j1
            ilo_ok = ilo >= 0
            ilo = np.where(ilo_ok, ilo, 0)
        idx[:, 0] = ilo * Nt + a0
        idx[:, 1] = ilo * Nt + a1
        wt[:, 0] = np.where(ilo_ok, (1 - fr) * (1 - ft), 0.0)
        wt[:, 1] = np.where(ilo_ok, (1 - fr) * ft, 0.0)
        ihi_ok = ihi < Nr
        ihi = np.where(ihi_ok, ihi, 0)
        idx[:, 2] = ihi * Nt + j0
        idx[:, 3] = ihi * Nt + j1
        wt[:, 2] = np.where(ihi_ok, fr * (1 - ft), 0.0)
        wt[:, 3] = np.where(ihi_ok, fr * ft, 0.0)
        outside = rho >= self.rho_out
        if self.inner == "boundary":
            outside |= rho <= self.rho_in
        wt[outside] = 0.0
        return idx, wt

    def interpolate(self, values, X):
        idx, w = self.interp_weights(X)
        return np.sum(np.asarray(values)[idx] * w, axis=1)

    def derivative_stencils(self, i):
        """Polar finite-difference stencils at ring i (angle index 0).

        Returns (cols, D) with cols of shape (3, 3) indexing nodes at ring
        offsets -1, 0, +1 and angle offsets -1, 0, +1 (-1 marks a zero
        boundary value) and D of shape (5, 3, 3) holding coefficients of
        u_rr, u_r, u_tt, u_t, u_rt.  Rows for other angles follow by rotation.
        """
        Nr, Nt = self.Nr, self.Nt
        rr = self.ring_edges
        rho = rr[i + 1]
        hl = rho - rr[i]
        hr = rr[i + 2] - rho
        cols = np.full((3, 3), -1, dtype=int)
        for dj, j in enumerate((-1, 0, 1)):
            cols[1, dj] = self.index(i, j)
            if i + 1 < Nr:
                cols[2, dj] = self.index(i + 1, j)
            if i > 0:
                cols[0, dj] = self.index(i - 1, j)
            elif self.inner == "origin":
                cols[0, dj] = self.index(0, j + Nt // 2)
        D = np.zeros((5, 3, 3))
        dt = self.dtheta
        D[0, 0, 1] = 2 / (hl * (hl + hr))
        D[0, 2, 1] = 2 / (hr * (hl + hr))
        D[0, 1, 1] = -2 / (hl * hr)
        D[1, 0, 1] = -hr / (hl * (hl + hr))
        D[1, 2, 1] = hl / (hr * (hl + hr))
        D[1, 1, 1] = (hr - hl) / (hl * hr)
        D[2, 1, 0] = D[2, 1, 2] = 1 / dt**2
        D[2, 1, 1] = -2 / dt**2
        D[3, 1, 0], D[3, 1, 2] = -1 / (2 * dt), 1 / (2 * dt)
        cross = 1 / ((hl + hr) * 2 * dt)
        D[4, 2, 2] = D[4, 0, 0] = cross
        D[4, 2, 0] = D[4, 0, 2] = -cross
        return cols, D

    def cells(self):
        """Polar cell quadrature between consecutive rings/angles, closed at the boundary."""
        Nr, Nt = self.Nr, self.Nt
        edges = self.ring_edges.copy()
        if self.inner == "origin":
            edges[0] = 0.0
        rows, cols, gx, gy, cv = [], [], [], [], []
        centers, areas = [], []
        cid = 0
        dt = self.dtheta
        Jt = self.Jinv.T
        for k in range(Nr + 1):
            r_in, r_out = edges[k], edges[k + 1]
            dr = r_out - r_in
            rc = 0.5 * (r_in + r_out)
            tc = self.theta + 0.5 * dt
            for j in range(Nt):
                # corner node lists (index, weight) at inner/outer edge, angles j and j+1
                corners = {}
                for side, ring in (("in", k - 1), ("out", k)):
                    for jj, a in ((0, j), (1, j + 1)):
                        if 0 <= ring < Nr:
                            corners[(side, jj)] = [(self.index(ring, a), 1.0)]
                        elif ring < 0 and self.inner == "origin":
                            corners[(side, jj)] = [(self.index(0, q), 1.0 / Nt) for q in range(Nt)]
                        else:
                            corners[(side, jj)] = []
                th = tc[j]
                er = np.array([np.cos(th), np.sin(th)])
                et = np.array([-np.sin(th), np.cos(th)])
                # d/drho and d/dtheta of the bilinear interpolant at the centre
                coef = {}

                def add(key, scale_r, scale_t, scale_v):
                    for idx, w in corners[key]:
                        a = coef.setdefault(idx, np.zeros(3))
                        a += w * np.array([scale_r, scale_t, scale_v])

                add(("in", 0), -0.5 / dr, -0.5 / dt, 0.25)
                add(("in", 1), -0.5 / dr, 0.5 / dt, 0.25)
                add(("out", 0), 0.5 / dr, -0.5 / dt, 0.25)
                add(("out", 1), 0.5 / dr, 0.5 / dt, 0.25)
                for idx, (cr, ct, val) in coef.items():
                    gp = cr * er + (ct / rc) * et
                    g = Jt @ gp
                    rows.append(cid)
                    cols.append(idx)
                    gx.append(g[0])
                    gy.append(g[1])
                    cv.append(val)
                p = rc * er
                centers.append(self.center + self.J @ p)
                areas.append(self.detJ * rc * dr * dt)
                cid += 1
        shape = (cid, self.size)
        G0 = sp.csr_matrix((gx, (rows, cols)), shape=shape)
        G1 = sp.csr_matrix((gy, (rows, cols)), shape=shape)
        C = sp.csr_matrix((cv, (rows, cols)), shape=shape)
        return CellQuadrature(np.array(centers), np.array(areas), (G0, G1), C)
