"""Evaluation and assembly of the nonlocal operator

    Lu(x) = 1/2 int (2u(x) - u(x+y) - u(x-y)) K(y) dy,   K(y) = a(y/|y|) |y|^(-n-2s),

with u extended by zero outside the domain.

Every rule below uses the directional form

    Lu(x) = int_0^pi a(theta) T_theta(x) dtheta,
    T_theta(x) = int_0^inf (2u(x) - u(x + r w) - u(x - r w)) r^(-1-2s) dr,

with w = (cos theta, sin theta) (in 1D a single direction with weight a).
The radial integral is split at a radius h: inside, a second-order Taylor
surrogate contracts the Hessian with the analytic moment h^(2-2s)/(2-2s);
outside, 2u(x) integrates in closed form and u(x +- r w) is integrated by
product quadrature.

Grid functions are interpolated piecewise linearly (1D) or bilinearly in
mapped polar coordinates (2D); this interpolation caps the scheme at
second order for smooth u.
"""

import os
from dataclasses import dataclass, replace

import numpy as np

from .errors import ParameterError, ResourceError
from .geometry import IntervalGrid, PolarGrid, _as_points
from .quadrature import jacobi_near_rule, piecewise_rule, polyline_weights, linear_moment_weights


@dataclass(frozen=True)
class QuadratureParams:
    """Knobs of the discrete operator.

    split_radius_factor: near-field radius h as a multiple of the local node spacing.
    split_distance_fraction (2D grids): h is also capped at this fraction of the boundary
        distance, but never below split_radius_factor radial gaps; near the boundary the
        angular gap does not shrink, and without the cap h would stick to the distance.
    cutoff_factor: far-field radius R (callables) as a multiple of the domain diameter.
    angular_nodes: number of directions on the half circle (2D).
    radial_samples / end_samples / end_gap_factor: sampling of grid functions along rays,
        geometric away from h and toward boundary crossings; the smallest gap at a
        crossing is end_gap_factor times the smallest boundary cell.
    near_order, panel_*: Gauss-Jacobi / graded Gauss-Legendre sizes of the callable rule.
    near_field (2D grids): "directional" uses (u(x+hw) - 2u(x) + u(x-hw))/h^2 along each
        quadrature direction, which keeps the sign pattern for any kernel and mapping;
        "stencil" uses polar finite differences of the full Hessian.
    interp_correction (1D grids): subtract the second-order bias of the linear
        interpolant in the far field (raises the smooth-data order to about 2).
    """

    split_radius_factor: float = 2.0
    split_distance_fraction: float = 0.5
    cutoff_factor: float = 4.0
    angular_nodes: int = 128
    radial_samples: int = 40
    end_samples: int = 32
    end_gap_factor: float = 0.25
    near_order: int = 20
    panel_levels: int = 14
    panel_ratio: float = 0.25
    panel_order: int = 12
    near_field: str = "stencil"
    interp_correction: bool = True

    @classmethod
    def from_spec(cls, spec):
        spec = dict(spec or {})
        unknown = set(spec) - set(cls.__dataclass_fields__)
        if unknown:
            raise ParameterError(f"unknown quadrature fields {sorted(unknown)}")
        return cls(**spec)

    def spec(self):
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


DEFAULT_QUAD = QuadratureParams()


class GridFunction:
    """Nodal values on a grid, extended by zero outside the domain."""

    def __init__(self, grid, values, info=None):
        v = np.array(values, dtype=float).reshape(-1)
        if v.size != grid.size:
            raise ParameterError(f"grid function needs {grid.size} values, got {v.size}")
        if not np.all(np.isfinite(v)):
            raise ParameterError("grid function values must be finite")
        v.setflags(write=False)
        self.grid = grid
        self.values = v
        self.info = {} if info is None else info     # solver diagnostics, never compared

    @classmethod
    def sample(cls, grid, fn):
        return cls(grid, fn(grid.nodes))

    def __call__(self, X):
        P, single = _as_points(X, self.grid.n)
        vals = self.grid.interpolate(self.values, P)
        return float(vals[0]) if single else vals

    def __mul__(self, c):
        return GridFunction(self.grid, self.values * float(c))

    __rmul__ = __mul__

    def __add__(self, other):
        if other.grid is not self.grid:
            raise ParameterError("grid functions live on different grids")
        return GridFunction(self.grid, self.values + other.values)

    def __neg__(self):
        return GridFunction(self.grid, -self.values)


@dataclass
class OperatorMatrix:
    """Dense collocation matrix with the exterior-zero condition built in."""

    matrix: np.ndarray
    grid: object
    kernel: object
    split_radius: np.ndarray
    params: QuadratureParams
    tail_constant: float

    def __matmul__(self, u):
        if isinstance(u, GridFunction):
            u = u.values
        return self.matrix @ u

    @property
    def size(self):
        return self.matrix.shape[0]

    def symmetry_defect(self):
        """max |M_ij - M_ji| / max |M|."""
        M = self.matrix
        return float(np.max(np.abs(M - M.T)) / np.max(np.abs(M)))

    def weighted_symmetry_defect(self):
        """Same for W M with W the quadrature weights."""
        WM = self.grid.weights[:, None] * self.matrix
        return float(np.max(np.abs(WM - WM.T)) / np.max(np.abs(WM)))

    def sign_pattern_violations(self, rel_tol=1e-13):
        """Number of positive off-diagonal entries and of non-positive diagonal entries."""
        M = self.matrix
        tol = rel_tol * np.max(np.abs(M))
        off = M - np.diag(np.diag(M))
        return int(np.sum(off > tol)) + int(np.sum(np.diag(M) <= 0))


# --- memory guard -----------------------------------------------------------

def memory_budget():
    """Bytes available for dense matrices: 60% of physical memory, overridable."""
    env = os.environ.get("FRACPOH_MEMORY_BYTES")
    if env:
        return float(env)
    try:
        return 0.6 * os.sysconf("SC_PAGE_SIZE") * os.sysconf("SC_PHYS_PAGES")
    except (ValueError, OSError, AttributeError):
        return 4e9


def check_memory(grid, copies=2):
    need = copies * 8.0 * grid.size**2
    budget = memory_budget()
    if need > budget:
        per_row = (budget / (copies * 8.0)) ** 0.5
        if grid.n == 1:
            suggest = int(per_row)
        else:
            suggest = int(per_row**0.5) // 2 * 2
        raise ResourceError(
            f"dense operator with {grid.size} unknowns needs {need / 1e9:.2f} GB "
            f"(budget {budget / 1e9:.2f} GB); use N <= {suggest}", suggested_N=suggest)


# --- 1D rows ----------------------------------------------------------------

_EDGE_SKIP = 2    # boundary segment and its neighbour get no bubble correction


def _interval_row_block(grid, kernel, x, h, value_rows, hess_rows, stencil=None):
    """Rows for evaluation points x (1D); value_rows/hess_rows are dense (m, N) arrays.

    With stencil = (cl, cc, cr) the far field also removes the bias of the linear
    interpolant: on each interior segment it exceeds u by u''/2 times the bubble
    (t - t0)(t1 - t), and u'' there is taken from the discrete second differences
    at the segment's end nodes.
    """
    s = kernel.s
    a = kernel.value
    P = grid.P
    N = grid.N
    m = x.size
    rows = np.zeros((m, N + 2))   # columns in P-indexing; 0 and N+1 are boundary
    t0, t1 = P[:-1][None, :], P[1:][None, :]
    L = t1 - t0
    xc = x[:, None]
    hc = h[:, None]
    bseg = np.zeros((m, N + 1))
    for side in (1, -1):
        if side == 1:
            lo = np.maximum(t0, xc + hc)
            hi = np.broadcast_to(t1, lo.shape)
            r_lo, r_hi = lo - xc, hi - xc
            pos_near = lo                    # position at r_lo
        else:
            lo = np.broadcast_to(t0, (m, N + 1))
            hi = np.minimum(t1, xc - hc)
            r_lo, r_hi = xc - hi, xc - lo
            pos_near = hi
        mask = r_hi > r_lo
        rl, rh = np.where(mask, r_lo, 1.0), np.where(mask, r_hi, 2.0)
        w_near, w_far = linear_moment_weights(rl, rh, s)
        w_near = np.where(mask, w_near, 0.0) * a
        w_far = np.where(mask, w_far, 0.0) * a
        if stencil is not None:
            # moment of (t - t0)(t1 - t) with t = x + side * r over the clipped segment
            alpha, beta = side * (t0 - xc), side * (t1 - xc)
            m0, m1, m2 = _power_moments(rl, rh, s)
            bseg += np.where(mask, -m2 + (alpha + beta) * m1 - alpha * beta * m0, 0.0)
        f = (pos_near - t0) / L             # interpolation fraction toward t1
        if side == 1:
            c0 = w_near * (1 - f)
            c1 = w_near * f + w_far
        else:
            c0 = w_near * (1 - f) + w_far
            c1 = w_near * f
        rows[:, :-1] -= c0
        rows[:, 1:] -= c1
    out = rows[:, 1:-1]
    out += value_rows * (a * 2 * h ** (-2 * s) / (2 * s))[:, None]
    out -= hess_rows * (a * h ** (2 - 2 * s) / (2 - 2 * s))[:, None]
    if stencil is not None:
        # segments touching the boundary are skipped: u need not be smooth there
        cl, cc, cr = stencil
        bnode = np.zeros((m, N))
        k = _EDGE_SKIP
        bseg[:, :k] = 0.0
        bseg[:, N + 1 - k:] = 0.0
        bnode[:, :-1] += 0.5 * bseg[:, 1:N]
        bnode[:, 1:] += 0.5 * bseg[:, 1:N]
        bnode *= 0.5 * a
        out += bnode * cc
        out[:, :-1] += bnode[:, 1:] * cl[1:]
        out[:, 1:] += bnode[:, :-1] * cr[:-1]
    return out


def _power_moments(lo, hi, s):
    """int_lo^hi r^(k-1-2s) dr for k = 0, 1, 2 (stable log/expm1 forms)."""
    lg = np.log(hi / lo)
    out = []
    for k in range(3):
        e = k - 2 * s
        if abs(e) < 1e-14:
            out.append(lg)
        else:
            out.append(lo**e * np.expm1(e * lg) / e)
    return out


def _interval_node_data(grid, params):
    N = grid.N
    P = grid.P
    spacing = grid.spacing()
    dist = np.minimum(grid.x - P[0], P[-1] - grid.x)
    h = np.minimum(params.split_radius_factor * spacing, dist) * (1 - 1e-6)
    cl, cc, cr = grid.second_derivative_rows()
    return h, (cl, cc, cr)


def _interval_rows(grid, kernel, X, params, node_index=None):
    """Operator rows at arbitrary interior points (1D)."""
    N = grid.N
    x = np.asarray(X, dtype=float).reshape(-1)
    h_nodes, (cl, cc, cr) = _interval_node_data(grid, params)
    m = x.size
    V = np.zeros((m, N))
    H = np.zeros((m, N))
    h = np.empty(m)
    if node_index is None:
        node_index = _match_nodes_1d(grid, x)
    for r, (xi, ni) in enumerate(zip(x, node_index)):
        if ni >= 0:
            V[r, ni] = 1.0
            _put_stencil_1d(H[r], ni, 1.0, cl, cc, cr, N)
            h[r] = h_nodes[ni]
            continue
        k = np.searchsorted(grid.P, xi, side="right") - 1    # cell [P_k, P_{k+1}]
        x0, x1 = grid.P[k], grid.P[k + 1]
        f = (xi - x0) / (x1 - x0)
        corners = [(k - 1, 1 - f), (k, f)]
        valid = [(j, w) for j, w in corners if 0 <= j < N]
        for j, w in valid:
            V[r, j] += w
        tot = sum(w for _, w in valid)
        for j, w in valid:
            _put_stencil_1d(H[r], j, w / tot if tot > 0 else 0.0, cl, cc, cr, N)
        dist = min(xi - grid.P[0], grid.P[-1] - xi)
        h[r] = min(params.split_radius_factor * (x1 - x0), dist) * (1 - 1e-6)
    rows = np.zeros((m, N))
    chunk = max(1, int(2_000_000 // (N + 1)))
    for a in range(0, m, chunk):
        b = min(m, a + chunk)
        rows[a:b] = _interval_row_block(grid, kernel, x[a:b], h[a:b], V[a:b], H[a:b],
                                        stencil=(cl, cc, cr) if params.interp_correction else None)
    return rows, h


def _put_stencil_1d(row, i, w, cl, cc, cr, N):
    row[i] += w * cc[i]
    if i > 0:
        row[i - 1] += w * cl[i]
    if i < N - 1:
        row[i + 1] += w * cr[i]


def _match_nodes_1d(grid, x):
    k = np.searchsorted(grid.x, x)
    k = np.clip(k, 0, grid.N - 1)
    return np.where(grid.x[k] == x, k, -1)


# --- 2D rows ----------------------------------------------------------------

def _ray_breaks(grid, X, dirs):
    """Boundary crossings along +-dirs from each X.

    Returns e1 (first exit) and a second inside-interval (b2, e2) per
    (point, direction, side); absent second intervals repeat e1.
    """
    iv = grid.domain.line_intervals(X, dirs)       # (m, k, 2, 2)
    lo, hi = iv[..., 0], iv[..., 1]                 # (m, k, 2)
    has = np.isfinite(lo)
    contains = has & (lo < 0) & (hi > 0)
    out = []
    for side in (1.0, -1.0):
        if side > 0:
            e1 = np.where(contains, hi, np.nan)
            other = has & ~contains & (lo > 0)
            b2 = np.where(other, lo, np.nan)
            e2 = np.where(other, hi, np.nan)
        else:
            e1 = np.where(contains, -lo, np.nan)
            other = has & ~contains & (hi < 0)
            b2 = np.where(other, -hi, np.nan)
            e2 = np.where(other, -lo, np.nan)
        e1 = np.nanmax(e1, axis=-1)
        b2 = np.nanmin(np.where(np.isnan(b2), np.inf, b2), axis=-1)
        e2 = np.nanmin(np.where(np.isnan(e2), np.inf, e2), axis=-1)
        none = ~np.isfinite(b2)
        b2 = np.where(none, e1, b2)
        e2 = np.where(none, e1, e2)
        out.append((e1, b2, e2))
    return out


def _ray_samples(h, e1, b2, e2, params, gap):
    """Sample radii along a ray: geometric from h, graded into each boundary crossing."""
    n1, n2 = params.radial_samples, params.end_samples
    mid1 = 0.5 * (h + e1)
    t = np.arange(n1 + 1) / n1
    left = h[..., None] * (mid1 / h)[..., None] ** t
    parts = [left, _toward(mid1, e1, n2, gap)]
    mid2 = 0.5 * (b2 + e2)
    parts.append(_away(b2, mid2, n2, gap))
    parts.append(_toward(mid2, e2, n2, gap))
    return np.concatenate(parts, axis=-1)


def _toward(a, b, n, gap):
    """n points in (a, b] clustering at b: b - g_k with g_k geometric from (b-a) down to gap."""
    L = b - a
    g = np.minimum(gap, 0.25 * np.maximum(L, 0.0))
    safe = np.where(L > 0, L, 1.0)
    safe_g = np.where(g > 0, g, safe)
    k = np.arange(1, n + 1) / n
    gaps = safe[..., None] * (safe_g / safe)[..., None] ** k[None, :]
    pts = b[..., None] - gaps
    pts[..., -1] = b
    return np.where((L > 0)[..., None], pts, b[..., None])


def _away(a, b, n, gap):
    """n points in [a, b) clustering at a (mirror of _toward)."""
    L = b - a
    g = np.minimum(gap, 0.25 * np.maximum(L, 0.0))
    safe = np.where(L > 0, L, 1.0)
    safe_g = np.where(g > 0, g, safe)
    k = np.arange(n, 0, -1) / n
    gaps = safe[..., None] * (safe_g / safe)[..., None] ** k[None, :]
    pts = a[..., None] + gaps
    pts[..., 0] = a
    return np.where((L > 0)[..., None], pts, a[..., None])


def _polar_node_geometry(grid, kernel, params):
    """Per-node split radius and near-field Hessian coefficients (2D)."""
    dirs, wts = kernel.direction_rule(params.angular_nodes)
    S = (dirs * wts[:, None]).T @ dirs              # discrete sum of a w w^T
    Sp = grid.Jinv @ S @ grid.Jinv.T
    h = _polar_split_radius(params, grid.spacing(), grid.radial_spacing(), grid.node_distance())
    return dirs, wts, Sp, h


def _polar_split_radius(params, spacing, radial, dist):
    f = params.split_radius_factor
    h = np.maximum(np.minimum(f * spacing, params.split_distance_fraction * dist), f * radial)
    return np.minimum(h, dist) * (1 - 1e-6)


def _hessian_row(grid, Sp, i, j):
    """Coefficients (cols, vals) of tr(S H) at node (ring i, angle j)."""
    cols, D = grid.derivative_stencils(i)
    rho = grid.rho[i]
    th = grid.theta[j]
    er = np.array([np.cos(th), np.sin(th)])
    et = np.array([-np.sin(th), np.cos(th)])
    crr = er @ Sp @ er
    ctt = et @ Sp @ et
    crt = er @ Sp @ et
    coef = crr * D[0] + ctt * (D[1] / rho + D[2] / rho**2) + 2 * crt * (D[4] / rho - D[3] / rho**2)
    # rotate the angle index from 0 to j
    cols = cols.copy()
    ring = np.where(cols >= 0, cols // grid.Nt, -1)
    ang = np.where(cols >= 0, cols % grid.Nt, 0)
    cols = np.where(cols >= 0, ring * grid.Nt + (ang + j) % grid.Nt, -1)
    return cols.ravel(), coef.ravel()


def _polar_rows(grid, kernel, X, params, node_ids=None, chunk=32):
    """Operator rows at points X (2D)."""
    X = np.asarray(X, dtype=float).reshape(-1, 2)
    m = X.shape[0]
    size = grid.size
    s = kernel.s
    dirs, wts, Sp, h_nodes = _polar_node_geometry(grid, kernel, params)
    if node_ids is None:
        node_ids = _match_nodes_2d(grid, X)
    gap = params.end_gap_factor * grid.boundary_cell_width()
    rows = np.zeros((m, size))
    h = np.empty(m)
    Nt = grid.Nt
    spacing = grid.spacing()
    radial = grid.radial_spacing()
    dist_all = grid.domain.exact_distance(X)
    directional = params.near_field == "directional"
    if params.near_field not in ("directional", "stencil"):
        raise ParameterError(f"near_field must be 'directional' or 'stencil', got {params.near_field!r}")
    for r in range(m):
        nid = node_ids[r]
        if nid >= 0:
            i, j = divmod(nid, Nt)
            cols, vals = _hessian_row(grid, Sp, i, j)
            ok = cols >= 0
            hess_c, hess_v = cols[ok], vals[ok]
            h[r] = h_nodes[nid]
            val_c, val_v = np.array([nid]), np.array([1.0])
        else:
            idx, w = grid.interp_weights(X[r:r + 1])
            idx, w = idx[0], w[0]
            keep = w > 0
            hc, hv = [], []
            tot = w[keep].sum()
            for nidx, ww in zip(idx[keep], w[keep]):
                i, j = divmod(int(nidx), Nt)
                c, v = _hessian_row(grid, Sp, i, j)
                ok = c >= 0
                hc.append(c[ok])
                hv.append(v[ok] * ww / tot)
            hess_c = np.concatenate(hc) if hc else np.zeros(0, int)
            hess_v = np.concatenate(hv) if hv else np.zeros(0)
            sel = idx[keep] if keep.any() else np.array([int(np.argmin(spacing))])
            h[r] = float(_polar_split_radius(params, spacing[sel].max(), radial[sel].max(), dist_all[r]))
            val_c, val_v = idx[keep], w[keep]
        hr = h[r]
        np.add.at(rows[r], val_c, val_v * np.sum(wts) * 2 * hr ** (-2 * s) / (2 * s))
        if directional:
            np.add.at(rows[r], val_c, val_v * np.sum(wts) * 2 * hr ** (-2 * s) / (2 - 2 * s))
        else:
            np.add.at(rows[r], hess_c, -hess_v * hr ** (2 - 2 * s) / (2 - 2 * s))
    # far field, vectorized over chunks of rows
    for a in range(0, m, chunk):
        b = min(m, a + chunk)
        Xc = X[a:b]
        hc = h[a:b]
        breaks = _ray_breaks(grid, Xc, dirs)
        for side, (e1, b2, e2) in zip((1.0, -1.0), breaks):
            hh = np.broadcast_to(hc[:, None], e1.shape)
            rs = _ray_samples(hh, e1, b2, e2, params, gap)          # (mc, k, S)
            om = polyline_weights(rs, s)
            if directional:
                om[..., 0] += hh ** (-2 * s) / (2 - 2 * s)
            om = om * wts[None, :, None]
            pts = Xc[:, None, None, :] + side * rs[..., None] * dirs[None, :, None, :]
            idx, w = grid.interp_weights(pts.reshape(-1, 2))
            contrib = (om.reshape(-1)[:, None] * w).reshape(b - a, -1)
            idx = idx.reshape(b - a, -1)
            flat = (np.arange(b - a)[:, None] * size + idx).ravel()
            acc = np.bincount(flat, weights=-contrib.ravel(), minlength=(b - a) * size)
            rows[a:b] += acc.reshape(b - a, size)
    return rows, h


def _match_nodes_2d(grid, X):
    rho, th = grid.to_polar(X)
    i = np.searchsorted(grid.rho, rho)
    i = np.clip(i, 0, grid.Nr - 1)
    cand = []
    for ii in (i - 1, i, i + 1):
        ii = np.clip(ii, 0, grid.Nr - 1)
        j = np.round(th / grid.dtheta - 0.5).astype(int) % grid.Nt
        nid = ii * grid.Nt + j
        d = np.linalg.norm(grid.nodes[nid] - X, axis=1)
        cand.append((d, nid))
    d = np.stack([c[0] for c in cand])
    nid = np.stack([c[1] for c in cand])
    best = np.argmin(d, axis=0)
    dbest = d[best, np.arange(X.shape[0])]
    nb = nid[best, np.arange(X.shape[0])]
    scale = max(1.0, float(np.max(np.abs(grid.nodes))))
    return np.where(dbest <= 1e-13 * scale, nb, -1)


# --- public API -------------------------------------------------------------

def operator_rows(kernel, grid, X, params=DEFAULT_QUAD):
    """Discrete rows r(x) with r(x) . u = (Lu)(x) for grid functions u."""
    _check_pair(kernel, grid)
    P, _ = _as_points(X, grid.n)
    if not np.all(grid.domain.exact_distance(P) > 0):
        raise ParameterError("evaluation points must lie strictly inside the domain")
    if grid.n == 1:
        return _interval_rows(grid, kernel, P[:, 0], params)[0]
    return _polar_rows(grid, kernel, P, params)[0]


def _check_pair(kernel, grid):
    if kernel.n != grid.n:
        raise ParameterError(f"kernel dimension {kernel.n} does not match grid dimension {grid.n}")


def assemble(kernel, grid, params=DEFAULT_QUAD):
    """Dense operator matrix on the grid (exterior columns omitted)."""
    _check_pair(kernel, grid)
    check_memory(grid)
    if isinstance(grid, IntervalGrid):
        M, h = _interval_rows(grid, kernel, grid.x, params, node_index=np.arange(grid.N))
    elif isinstance(grid, PolarGrid):
        if _rotationally_symmetric(kernel, grid):
            M, h = _assemble_rotational(kernel, grid, params)
        else:
            M, h = _polar_rows(grid, kernel, grid.nodes, params, node_ids=np.arange(grid.size))
    else:
        raise ParameterError(f"unsupported grid {type(grid).__name__}")
    return OperatorMatrix(M, grid, kernel, h, params, tail_constant=kernel.angular_mass() / (2 * kernel.s))


def _rotationally_symmetric(kernel, grid):
    J = grid.J
    return kernel.is_isotropic and np.allclose(J, J[0, 0] * np.eye(2), rtol=0, atol=1e-15 * abs(J[0, 0]))


def _assemble_rotational(kernel, grid, params):
    """Rows at angle index 0 of every ring, rotated to the other angles."""
    Nr, Nt = grid.Nr, grid.Nt
    ids = np.arange(Nr) * Nt
    R, h0 = _polar_rows(grid, kernel, grid.nodes[ids], params, node_ids=ids)
    M = np.empty((grid.size, grid.size))
    shift = (np.arange(Nt)[None, :] - np.arange(Nt)[:, None]) % Nt      # [j, col]
    for i in range(Nr):
        block = R[i].reshape(Nr, Nt)
        M[i * Nt:(i + 1) * Nt] = block[:, shift].transpose(1, 0, 2).reshape(Nt, -1)
    return M, np.repeat(h0, Nt)


def apply_pointwise(kernel, u, x, domain=None, params=DEFAULT_QUAD, support=None):
    """Lu at interior point(s) x.

    Grid functions use exactly the assembled rule (rows of `assemble`).
    Callables u(X) (X of shape (m, n)) use a high-order rule: Gauss-Jacobi
    on the second difference near x, graded Gauss-Legendre panels split at
    the boundary crossings of `support` (default: `domain`) out to
    R = cutoff_factor * diameter, and the exact tail beyond R.
    """
    if isinstance(u, GridFunction):
        grid = u.grid
        dom = grid.domain if domain is None else domain
        P, single = _as_points(x, kernel.n)
        if not np.all(dom.exact_distance(P) > 0):
            raise ParameterError("x must lie strictly inside the domain")
        vals = operator_rows(kernel, grid, P, params) @ u.values
        return float(vals[0]) if single else vals
    P, single = _as_points(x, kernel.n)
    if domain is not None and not np.all(domain.exact_distance(P) > 0):
        raise ParameterError("x must lie strictly inside the domain")
    supp = domain if support is None else support
    vals = np.array([_pointwise_one(kernel, u, p, supp, params) for p in P])
    return float(vals[0]) if single else vals


def _pointwise_one(kernel, u, x, support, params, cutoff=None):
    n, s = kernel.n, kernel.s
    dirs, wts = kernel.direction_rule(params.angular_nodes)
    diam = support.diameter if support is not None else 10.0
    R = params.cutoff_factor * diam if cutoff is None else cutoff
    if support is not None:
        dist = float(support.exact_distance(x.reshape(1, -1))[0])
        r0 = 0.5 * dist if dist > 0 else 0.25
    else:
        r0 = 0.25
    r0 = min(r0, 0.25 * R)
    ux = float(np.asarray(u(x.reshape(1, -1))).reshape(-1)[0])
    # crossing radii on both sides
    breaks = [np.full(len(dirs), r0)]
    if support is not None:
        if n == 1:
            a, b = support.a, support.b
            cr = np.array([[b - x[0]], [x[0] - a]])
        else:
            iv = support.line_intervals(x.reshape(1, 2), dirs)[0]      # (k, 2, 2)
            cr = np.abs(iv.reshape(len(dirs), -1)).T
        for c in cr:
            c = np.where(np.isfinite(c) & (c > r0) & (c < R), c, r0)
            breaks.append(c)
    breaks.append(np.full(len(dirs), R))
    B = np.sort(np.stack(breaks, axis=-1), axis=-1)
    rn, rw = piecewise_rule(B, params.panel_levels, params.panel_ratio, params.panel_order)
    far = _second_difference(u, x, dirs, rn, ux) * rw * rn ** (-1 - 2 * s)
    tn, tw = jacobi_near_rule(params.near_order, s)
    rnear = r0 * tn[None, :]
    fnear = _second_difference(u, x, dirs, np.broadcast_to(rnear, (len(dirs), tn.size)), ux)
    near = fnear / rnear**2 * (tw * r0 ** (2 - 2 * s))[None, :]
    T = far.sum(-1) + near.sum(-1) + 2 * ux * R ** (-2 * s) / (2 * s)
    return float(np.dot(wts, T))


def _second_difference(u, x, dirs, r, ux):
    k, q = r.shape
    pts_p = x[None, None, :] + r[..., None] * dirs[:, None, :]
    pts_m = x[None, None, :] - r[..., None] * dirs[:, None, :]
    n = x.size
    up = np.asarray(u(pts_p.reshape(-1, n)), dtype=float).reshape(k, q)
    um = np.asarray(u(pts_m.reshape(-1, n)), dtype=float).reshape(k, q)
    return 2 * ux - up - um


# --- identity checks ----------------------------------------------------------

def _fd_gradient(u, X, step=1e-6):
    X = np.asarray(X, dtype=float)
    g = np.empty_like(X)
    for k in range(X.shape[1]):
        e = np.zeros(X.shape[1])
        e[k] = step
        g[:, k] = (np.asarray(u(X + e)) - np.asarray(u(X - e))) / (2 * step)
    return g


def scaling_identity_residual(kernel, u, probes, grad=None, params=DEFAULT_QUAD, fd_step=1e-4,
                              domain=None, grid=None, relative=False):
    """max over probes of |L(x.grad u) - x.grad(Lu) - 2s Lu|.

    With `grid` given, L is the discrete grid operator applied to samples (the
    refinement study) and x.grad(Lu) is sum_k x_k L(d_k u); otherwise the
    pointwise rule for callables is used and x.grad(Lu) is a centered
    difference with step fd_step.
    """
    P, _ = _as_points(probes, kernel.n)
    if grad is None:
        def grad(X):
            return _fd_gradient(u, X)

    def xgrad(X):
        X = np.asarray(X, dtype=float).reshape(-1, kernel.n)
        return np.sum(X * grad(X), axis=1)

    if grid is not None:
        # L commutes with translations, so x.grad(Lu) = sum_k x_k L(d_k u); differencing the
        # discrete operator in x instead would amplify its row-to-row quadrature jumps
        rows = operator_rows(kernel, grid, P, params)
        X = grid.nodes
        G = np.asarray(grad(X), dtype=float).reshape(X.shape)
        Lu = rows @ np.asarray(u(X), dtype=float)
        Lxg = rows @ np.sum(X * G, axis=1)
        dLu = np.sum(P * (rows @ G), axis=1)
    else:
        Lu = apply_pointwise(kernel, u, P, support=domain, params=params)
        Lxg = apply_pointwise(kernel, xgrad, P, support=domain, params=params)
        dLu = np.zeros(P.shape[0])
        for k in range(kernel.n):
            e = np.zeros(kernel.n)
            e[k] = fd_step
            dLu += P[:, k] * (apply_pointwise(kernel, u, P + e, support=domain, params=params)
                              - apply_pointwise(kernel, u, P - e, support=domain, params=params)) / (2 * fd_step)
    Lu, Lxg = np.atleast_1d(Lu), np.atleast_1d(Lxg)
    res = np.abs(Lxg - dLu - 2 * kernel.s * Lu)
    if relative:
        scale = max(np.max(np.abs(Lxg)), np.max(np.abs(dLu)), np.max(np.abs(2 * kernel.s * Lu)))
        return float(res.max() / scale) if scale > 0 else 0.0
    return float(res.max())


def compact_support_identity_residual(kernel, u, grid, grad=None, params=DEFAULT_QUAD,
                                      method="auto", op=None):
    """(lhs, rhs) = (2 int (x.grad u) Lu, (2s - n) int u Lu) by grid quadrature.

    Lu at the nodes comes from the pointwise rule (method "pointwise", the
    default) or from the assembled grid operator ("grid").  The left side
    cancels heavily, so the grid operator's interpolation error (order
    spacing^(2-2s) in 2D) shows up amplified; the pointwise rule avoids it.
    """
    dom = grid.domain
    X = grid.nodes
    uv = np.asarray(u(X), dtype=float)
    # support must stay away from the boundary: check a band of near-boundary points
    bq = dom.boundary_nodes(max(64, 4 * int(np.sqrt(grid.size))))
    band = np.concatenate([bq.nodes - t * bq.normals for t in (0.0, 1e-3, 1e-2)])
    near = dom.exact_distance(X) < 2 * grid.boundary_cell_width()
    probe_vals = np.concatenate([np.asarray(u(band), dtype=float), uv[near]])
    if np.any(probe_vals != 0):
        raise ParameterError("support of u touches the boundary; the identity needs compact support inside")
    if not np.any(uv):
        return 0.0, 0.0
    if method == "auto":
        method = "pointwise"
    live = uv != 0
    Lu = np.zeros(grid.size)
    if method == "pointwise":
        Lu[live] = apply_pointwise(kernel, u, X[live], params=params)
    else:
        M = op if op is not None else assemble(kernel, grid, params)
        Lu = M.matrix @ uv
    if grad is None:
        g = _fd_gradient(u, X)
    else:
        g = np.asarray(grad(X), dtype=float).reshape(X.shape)
    xg = np.sum(X * g, axis=1)
    w = grid.weights
    lhs = 2 * np.sum(w * xg * Lu)
    rhs = (2 * kernel.s - kernel.n) * np.sum(w * uv * Lu)
    return float(lhs), float(rhs)


def lds_bound_check(kernel, domain, probes, N=None, grading=2.0, params=DEFAULT_QUAD, grid=None):
    """max |L(d^s)| over probes, with d^s sampled on a grid and the grid rule at the probes."""
    from .geometry import build_grid

    if grid is None:
        if N is None:
            N = 1024 if domain.n == 1 else 64
        grid = build_grid(domain, N, grading)
    ds = GridFunction(grid, domain.distance(grid.nodes) ** kernel.s)
    vals = apply_pointwise(kernel, ds, probes, params=params)
    return float(np.max(np.abs(np.atleast_1d(vals))))


def halfspace_harmonicity_residual(kernel, e, probes, params=DEFAULT_QUAD, cutoff=None):
    """max |L((x.e)_+^s)| over probes with x.e > 0.

    Each ray integral is truncated at R (default cutoff_factor * 10 length
    units, enlarged to twice the kink radius) and completed by the exact
    binomial series of the growing tail int_R^inf (2t^s - (t + r|alpha|)^s) r^(-1-2s) dr.
    """
    n, s = kernel.n, kernel.s
    e = np.asarray(e, dtype=float).reshape(-1)
    if e.size != n or abs(np.linalg.norm(e) - 1) > 1e-10:
        raise ParameterError("e must be a unit vector")
    P, _ = _as_points(probes, n)
    if np.any(P @ e <= 0):
        raise ParameterError("probes must satisfy x.e > 0")
    dirs, wts = kernel.direction_rule(params.angular_nodes)
    R0 = params.cutoff_factor * 10.0 if cutoff is None else cutoff
    res = []
    for x in P:
        t = float(x @ e)
        alpha = dirs @ e
        aa = np.abs(alpha)
        with np.errstate(divide="ignore"):
            kink = np.where(aa > 0, t / np.where(aa > 0, aa, 1.0), np.inf)
        R = np.where(np.isfinite(kink), np.maximum(R0, 2 * kink), R0)
        r0 = np.minimum(0.5 * t, 0.25 * R)
        kk = np.where(np.isfinite(kink) & (kink > r0) & (kink < R), kink, r0)
        B = np.sort(np.stack([r0, kk, R], axis=-1), axis=-1)

        def u(X):
            return np.clip(X @ e, 0, None) ** s

        ux = t**s
        rn, rw = piecewise_rule(B, params.panel_levels, params.panel_ratio, params.panel_order)
        far = _second_difference(u, x, dirs, rn, ux) * rw * rn ** (-1 - 2 * s)
        tn, tw = jacobi_near_rule(params.near_order, s)
        rnear = r0[:, None] * tn[None, :]
        fnear = _second_difference(u, x, dirs, rnear, ux)
        near = fnear / rnear**2 * tw[None, :] * r0[:, None] ** (2 - 2 * s)
        T = far.sum(-1) + near.sum(-1) + _growth_tail(t, aa, R, s)
        res.append(abs(float(np.dot(wts, T))))
    return float(max(res))


def _growth_tail(t, aa, R, s, terms=80):
    """int_R^inf (2 t^s - (t + r a)_+^s - (t - r a)_+^s) r^(-1-2s) dr for R > t/a."""
    out = 2 * t**s * R ** (-2 * s) / (2 * s)
    pos = aa > 0
    if not np.any(pos):
        return out
    a = np.where(pos, aa, 1.0)
    q = t / a
    ser = np.zeros_like(a)
    coef = 1.0
    for k in range(terms):
        ser += coef * q**k * R ** (-s - k) / (s + k)
        coef *= (s - k) / (k + 1)
    return out - np.where(pos, a**s * ser, 0.0)


def with_params(params, **kw):
    return replace(params, **kw)
