"""Homogeneous jump kernels K(y) = a(y/|y|) / |y|^(n+2s) and their constants."""

from dataclasses import dataclass

import numpy as np
from scipy.special import gamma, roots_jacobi, roots_legendre

from .errors import ParameterError

DEFAULT_RESOLUTION = 1024


def _check_ns(n, s):
    if n not in (1, 2) or isinstance(n, bool):
        raise ParameterError(f"dimension n must be 1 or 2, got {n!r}")
    if not (np.isfinite(s) and 0.0 < s < 1.0):
        raise ParameterError(f"order s must lie strictly inside (0, 1), got {s!r}")


def frac_constant(n, s):
    """Normalization c_{n,s} for which c_{n,s}|y|^(-n-2s) has Fourier symbol |xi|^(2s)."""
    _check_ns(n, s)
    return s * 4.0**s * gamma(n / 2 + s) / (np.pi ** (n / 2) * gamma(1 - s))


def torsion_constant(n, s):
    """kappa with (-Delta)^s [kappa (1-|x|^2)_+^s] = 1 in the unit ball."""
    _check_ns(n, s)
    return gamma(n / 2) / (4.0**s * gamma(1 + s) * gamma(n / 2 + s))


def sphere_cos_moment(n, s):
    """Integral of |nu . theta|^(2s) over the unit sphere S^(n-1) (counting measure in 1D)."""
    _check_ns(n, s)
    if n == 1:
        return 2.0
    return 2.0 * np.sqrt(np.pi) * gamma(s + 0.5) / gamma(s + 1.0)


def critical_exponent(n, s):
    """(n + 2s)/(n - 2s), or inf when n <= 2s (no supercritical regime)."""
    _check_ns(n, s)
    if n <= 2 * s:
        return np.inf
    return (n + 2 * s) / (n - 2 * s)


@dataclass(frozen=True)
class KernelConstants:
    c_frac: float
    kappa: float
    c_s_norm: float
    gamma_sq: float


def kernel_constants(n, s):
    c = frac_constant(n, s)
    return KernelConstants(
        c_frac=float(c),
        kappa=float(torsion_constant(n, s)),
        # pinned so that A(nu) == 1 for the fractional kernel a == c_{n,s}
        c_s_norm=float(1.0 / (c * sphere_cos_moment(n, s))),
        gamma_sq=float(gamma(1.0 + s) ** 2),
    )


class Kernel:
    """Even homogeneous kernel of order 2s in dimension 1 or 2.

    The angular density is either a constant or a table of samples on the
    uniform angles theta_k = 2 pi k / M (2D only).  Tables are symmetrized
    on construction so that a(theta + pi) = a(theta) holds exactly, and are
    interpolated periodically and linearly between samples.
    """

    def __init__(self, s, n, value=None, table=None, ellipticity=None):
        _check_ns(n, s)
        self.s = float(s)
        self.n = int(n)
        self.constants = kernel_constants(self.n, self.s)
        if value is not None and table is not None:
            raise ParameterError("give either a constant value or a sample table, not both")
        if table is not None:
            t = np.array(table, dtype=float).ravel()
            if self.n == 1:
                if t.size != 2:
                    raise ParameterError("a 1D sampled density has exactly two entries a(+1), a(-1)")
                value, table = 0.5 * (t[0] + t[1]), None
            else:
                if t.size < 4 or t.size % 2:
                    raise ParameterError("angular table length must be even and >= 4")
                if not np.all(np.isfinite(t)) or t.min() < 0:
                    raise ParameterError("angular density samples must be finite and >= 0")
                half = t.size // 2
                t = 0.5 * (t + np.roll(t, half))
                t.setflags(write=False)
                self.table = t
        if table is None:
            if value is None:
                value = self.constants.c_frac
            value = float(value)
            if not (np.isfinite(value) and value > 0):
                raise ParameterError(f"constant angular density must be positive, got {value!r}")
            self.value = value
            self.table = None
        else:
            self.value = None
        lo, hi = self._sample_range()
        if ellipticity is None:
            ellipticity = (lo, hi)
        lam, Lam = (float(v) for v in ellipticity)
        if not (0 < lam <= Lam):
            raise ParameterError(f"ellipticity bounds need 0 < lambda <= Lambda, got {ellipticity!r}")
        if lo < lam * (1 - 1e-12) or hi > Lam * (1 + 1e-12):
            raise ParameterError("angular density leaves the stated ellipticity bounds")
        self.ellipticity = (lam, Lam)

    # construction helpers

    @classmethod
    def fractional(cls, n, s):
        """The fractional Laplacian (-Delta)^s."""
        return cls(s, n)

    @classmethod
    def from_function(cls, n, s, fn, resolution=DEFAULT_RESOLUTION, ellipticity=None):
        """Sample a(theta) = fn(theta) on a uniform angular table (2D)."""
        if n == 1:
            return cls(s, n, table=[fn(0.0), fn(np.pi)], ellipticity=ellipticity)
        theta = 2 * np.pi * np.arange(resolution) / resolution
        return cls(s, n, table=np.asarray(fn(theta), dtype=float), ellipticity=ellipticity)

    @classmethod
    def from_spec(cls, spec):
        spec = dict(spec)
        ang = spec.get("angular", {"type": "constant"})
        kind = ang.get("type", "constant")
        ell = spec.get("ellipticity")
        if kind == "constant":
            return cls(spec["s"], spec["n"], value=ang.get("value"), ellipticity=ell)
        if kind == "sampled":
            return cls(spec["s"], spec["n"], table=ang["table"], ellipticity=ell)
        raise ParameterError(f"unknown angular density type {kind!r}")

    def spec(self):
        ang = {"type": "constant", "value": self.value} if self.table is None else {
            "type": "sampled", "table": [float(v) for v in self.table]}
        return {"s": self.s, "n": self.n, "angular": ang,
                "ellipticity": [self.ellipticity[0], self.ellipticity[1]]}

    def scaled(self, m):
        """Kernel with angular density multiplied by m > 0."""
        if not m > 0:
            raise ParameterError("scale factor must be positive")
        ell = (self.ellipticity[0] * m, self.ellipticity[1] * m)
        if self.table is None:
            return Kernel(self.s, self.n, value=self.value * m, ellipticity=ell)
        return Kernel(self.s, self.n, table=self.table * m, ellipticity=ell)

    def with_order(self, s):
        """Same angular density at a different order (fractional kernels stay fractional)."""
        if self.table is None and np.isclose(self.value, self.constants.c_frac, rtol=1e-14, atol=0):
            return Kernel.fractional(self.n, s)
        if self.table is None:
            return Kernel(s, self.n, value=self.value)
        return Kernel(s, self.n, table=self.table)

    # evaluation

    @property
    def is_isotropic(self):
        return self.table is None

    def _sample_range(self):
        if self.table is None:
            return self.value, self.value
        return float(self.table.min()), float(self.table.max())

    def density(self, theta):
        """a(theta) for polar angles theta (2D) or a(+-1) in 1D (any argument)."""
        theta = np.asarray(theta, dtype=float)
        if self.table is None:
            return np.full(theta.shape, self.value)
        M = self.table.size
        pos = np.mod(theta, 2 * np.pi) * (M / (2 * np.pi))
        k = np.floor(pos).astype(int) % M
        f = pos - np.floor(pos)
        return (1 - f) * self.table[k] + f * self.table[(k + 1) % M]

    def density_dir(self, omega):
        """a at unit directions omega of shape (..., n)."""
        omega = np.asarray(omega, dtype=float)
        if self.n == 1 or self.table is None:
            return self.density(np.zeros(omega.shape[:-1]))
        return self.density(np.arctan2(omega[..., 1], omega[..., 0]))

    def K(self, y):
        """Kernel values at points y of shape (..., n)."""
        y = np.asarray(y, dtype=float)
        r = np.linalg.norm(y, axis=-1)
        with np.errstate(divide="ignore", invalid="ignore"):
            return self.density_dir(y / r[..., None]) * r ** (-self.n - 2 * self.s)

    def angular_mass(self):
        """Integral of a over the unit sphere (two-point sum in 1D)."""
        if self.n == 1:
            return 2 * self.value
        if self.table is None:
            return 2 * np.pi * self.value
        return 2 * np.pi * float(np.mean(self.table))

    def direction_rule(self, m):
        """Half-sphere directions and weights for integrals of a(theta) g(theta) over [0, pi).

        Midpoint rule with m nodes; the weights include a(theta).  In 1D the
        rule is the single direction +1 with weight a.
        """
        if self.n == 1:
            return np.ones((1, 1)), np.array([self.value])
        theta = np.pi * (np.arange(m) + 0.5) / m
        dirs = np.stack([np.cos(theta), np.sin(theta)], axis=-1)
        return dirs, self.density(theta) * (np.pi / m)

    def half_moment(self):
        """Second moment S = int_0^pi a(theta) omega omega^T dtheta (just a in 1D)."""
        if self.n == 1:
            return np.array([[self.value]])
        if self.table is None:
            return 0.5 * np.pi * self.value * np.eye(2)
        M = self.table.size
        xg, wg = roots_legendre(6)
        edges = 2 * np.pi * np.arange(M // 2 + 1) / M
        lo, hi = edges[:-1], edges[1:]
        th = 0.5 * (lo + hi)[:, None] + 0.5 * (hi - lo)[:, None] * xg[None, :]
        w = 0.5 * (hi - lo)[:, None] * wg[None, :] * self.density(th)
        c, sn = np.cos(th), np.sin(th)
        return np.array([[np.sum(w * c * c), np.sum(w * c * sn)],
                         [np.sum(w * c * sn), np.sum(w * sn * sn)]])

    def anisotropy(self, nu):
        """A(nu) = c_s int |nu . theta|^(2s) a(theta) dtheta."""
        nu = np.asarray(nu, dtype=float).ravel()
        if nu.size != self.n or not np.all(np.isfinite(nu)):
            raise ParameterError(f"nu must be a finite vector of length {self.n}")
        if abs(np.linalg.norm(nu) - 1.0) > 1e-10:
            raise ParameterError("nu must be a unit vector")
        cs = self.constants.c_s_norm
        if self.table is None:
            return cs * self.value * sphere_cos_moment(self.n, self.s)
        return cs * self._table_cos_integral(np.arctan2(nu[1], nu[0]))

    def _table_cos_integral(self, phi, order=12):
        # exact integration of |cos(theta - phi)|^(2s) against the piecewise-linear density;
        # zeros of the cosine are breakpoints and get Gauss-Jacobi weight t^(2s)
        M = self.table.size
        two_s = 2 * self.s
        zeros = np.mod(phi + np.array([0.5, 1.5]) * np.pi, 2 * np.pi)
        br = np.unique(np.concatenate([2 * np.pi * np.arange(M + 1) / M, zeros]))
        lo, hi = br[:-1], br[1:]
        keep = hi - lo > 1e-15
        lo, hi = lo[keep], hi[keep]
        L = hi - lo
        dz_lo = np.min(np.abs(np.angle(np.exp(1j * (lo[:, None] - zeros[None, :])))), axis=1)
        dz_hi = np.min(np.abs(np.angle(np.exp(1j * (hi[:, None] - zeros[None, :])))), axis=1)
        at_lo = dz_lo < 1e-13
        at_hi = (dz_hi < 1e-13) & ~at_lo
        plain = ~(at_lo | at_hi)
        total = 0.0
        xg, wg = roots_legendre(order)
        if plain.any():
            a, b = lo[plain, None], hi[plain, None]
            th = 0.5 * (a + b) + 0.5 * (b - a) * xg
            vals = np.abs(np.cos(th - phi)) ** two_s * self.density(th)
            total += np.sum(0.5 * (b - a) * wg * vals)
        xj, wj = roots_jacobi(order, 0.0, two_s)
        for mask, sign in ((at_lo, 1.0), (at_hi, -1.0)):
            if not mask.any():
                continue
            start = np.where(sign > 0, lo[mask], hi[mask])[:, None]
            Lm = L[mask][:, None]
            t = 0.5 * Lm * (1 + xj)
            th = start + sign * t
            with np.errstate(invalid="ignore", divide="ignore"):
                ratio = np.where(t > 0, np.abs(np.sin(t)) / t, 1.0)
            vals = ratio**two_s * self.density(th)
            total += np.sum((0.5 * Lm) ** (1 + two_s) * wj * vals)
        return float(total)

    def __repr__(self):
        kind = f"value={self.value:.6g}" if self.table is None else f"table[{self.table.size}]"
        return f"Kernel(s={self.s}, n={self.n}, {kind})"
