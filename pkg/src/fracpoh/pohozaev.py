"""Pohozaev-type integral identities with boundary trace terms, and the verdicts they imply.

For Lu = f in the domain with u = 0 outside,

    -2 int ((x - o).grad u) Lu = (n - 2s) int u Lu + G int A(nu) (u/d^s)^2 ((z - o).nu) dz,
    -int (e.grad u) Lu = (G / 2) int A(nu) (u/d^s)^2 (e.nu) dz,

with G = Gamma(1+s)^2.  Volume integrals use f(x, u) in place of Lu, which
is exact on solutions; a residual gate refuses inputs that are not solutions.
"""

import inspect
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import ParameterError, PreconditionError
from .geometry import star_shape_margin
from .kernel import critical_exponent
from .nonlocal_op import assemble
from .trace import trace_quotient

GATE_FACTOR = 10.0


@dataclass
class PohozaevReport:
    check: str
    lhs_volume: float
    rhs_volume: float
    rhs_boundary: float
    residual_abs: float
    residual_rel: float
    direction: list = None
    origin: list = None
    meta: dict = field(default_factory=dict)

    @property
    def recomputed_residual(self):
        return abs(self.lhs_volume - self.rhs_volume - self.rhs_boundary)

    def as_dict(self):
        return asdict(self)


@dataclass
class ObstructionVerdict:
    p: float
    p_critical: float
    coefficient: float
    sign_class: str
    boundary_term: float         # star-shape margin min (z - o).nu
    verdict: str


def _as_source(f):
    """Normalize f to a function (X, u) -> values; constants and f(u) are accepted."""
    if f is None:
        raise ParameterError("a right-hand side or nonlinearity f is required")
    if not callable(f):
        c = float(f)
        return lambda X, v: np.full(v.shape, c)
    try:
        nargs = len(inspect.signature(f).parameters)
    except (TypeError, ValueError):
        nargs = 2
    if nargs == 1:
        return lambda X, v: np.asarray(f(v), dtype=float) * np.ones_like(v)
    return lambda X, v: np.asarray(f(X, v), dtype=float) * np.ones_like(v)


def equation_residual(u, f, operator):
    """max_i |(Mu)_i - f(x_i, u_i)|."""
    src = _as_source(f)
    fv = src(u.grid.nodes, u.values)
    return float(np.max(np.abs(operator.matrix @ u.values - fv))), fv


def _gate(u, kernel, f, operator, solver_tol):
    if operator is None:
        operator = assemble(kernel, u.grid)
    res, fv = equation_residual(u, f, operator)
    scale = max(1.0, float(np.max(np.abs(fv))))
    if res > GATE_FACTOR * solver_tol * scale:
        raise PreconditionError(
            f"u is not a solution: equation residual {res:.2e} exceeds {GATE_FACTOR:g} x tolerance; "
            "substituting f for Lu would be invalid")
    return res


def boundary_traces(u, kernel, domain, m=None, **trace_kw):
    """Boundary quadrature plus trace quotients Q_j and anisotropy A(nu_j)."""
    if m is None:
        m = 2 if domain.n == 1 else max(64, u.grid.Nt)
    bq = domain.boundary_nodes(m)
    if not np.any(u.values):
        Q = np.zeros(bq.size)
    else:
        Q = np.array([trace_quotient(u, domain, z, kernel.s, **trace_kw).value for z in bq.nodes])
    A = np.array([kernel.anisotropy(nu) for nu in bq.normals])
    return bq, Q, A


def _relative(lhs, rhs_vol, parts):
    """|lhs - rhs| over the largest individual term (boundary counted node by node)."""
    res = abs(lhs - rhs_vol - float(np.sum(parts)))
    scale = max(abs(lhs), abs(rhs_vol), float(np.sum(np.abs(parts))))
    return res, (res / scale if scale > 0 else 0.0)


def _directional_volume(u, field_fn, src):
    """int (field . grad u) f(x, u) by cell quadrature of the interpolant."""
    cq = u.grid.cells()
    dgrad = cq.directional(u.values, field_fn)
    uc = cq.midvalue @ u.values
    fc = src(cq.centers, uc)
    return float(np.sum(cq.areas * dgrad * fc)), cq.areas.size


def verify_poh1(u, kernel, domain, f, origin=None, operator=None, solver_tol=1e-8, m=None, gate=True,
                **trace_kw):
    """All terms of the identity with multiplier (x - origin).grad u."""
    n, s = kernel.n, kernel.s
    o = np.zeros(n) if origin is None else np.asarray(origin, dtype=float).reshape(-1)
    src = _as_source(f)
    eq_res = _gate(u, kernel, f, operator, solver_tol) if gate else None
    G = kernel.constants.gamma_sq
    lhs, ncell = _directional_volume(u, lambda X: X - o, src)
    lhs *= -2.0
    fv = src(u.grid.nodes, u.values)
    rhs_vol = (n - 2 * s) * float(np.sum(u.grid.weights * u.values * fv))
    bq, Q, A = boundary_traces(u, kernel, domain, m, **trace_kw)
    parts = G * bq.weights * A * Q**2 * np.sum((bq.nodes - o) * bq.normals, axis=1)
    res, rel = _relative(lhs, rhs_vol, parts)
    meta = {"cells": ncell, "boundary_nodes": bq.size, "traces": Q.tolist(), "equation_residual": eq_res,
            "N": u.grid.N, "s": s, "n": n}
    return PohozaevReport("poh1", lhs, rhs_vol, float(np.sum(parts)), res, rel, None, o.tolist(), meta)


def verify_poh2(u, kernel, domain, f, e, operator=None, solver_tol=1e-8, m=None, gate=True, **trace_kw):
    """-int (e.grad u) Lu against (G/2) int A(nu) (u/d^s)^2 (e.nu)."""
    n = kernel.n
    e = np.asarray(e, dtype=float).reshape(-1)
    if e.size != n or not np.all(np.isfinite(e)) or abs(np.linalg.norm(e) - 1) > 1e-10:
        raise ParameterError("direction e must be a unit vector")
    src = _as_source(f)
    eq_res = _gate(u, kernel, f, operator, solver_tol) if gate else None
    G = kernel.constants.gamma_sq
    lhs, ncell = _directional_volume(u, lambda X: np.broadcast_to(e, X.shape), src)
    lhs = -lhs
    bq, Q, A = boundary_traces(u, kernel, domain, m, **trace_kw)
    parts = 0.5 * G * bq.weights * A * Q**2 * (bq.normals @ e)
    res, rel = _relative(lhs, 0.0, parts)
    meta = {"cells": ncell, "boundary_nodes": bq.size, "traces": Q.tolist(), "equation_residual": eq_res,
            "N": u.grid.N, "s": kernel.s, "n": n}
    return PohozaevReport("poh2", lhs, 0.0, float(np.sum(parts)), res, rel, e.tolist(), None, meta)


def f_form_identity(u, kernel, domain, f, F, origin=None, operator=None, solver_tol=1e-8, m=None,
                    gate=True, **trace_kw):
    """int 2n F(u) against (n - 2s) int u f(u) + G int A(nu) (u/d^s)^2 ((z - o).nu) for autonomous f."""
    n, s = kernel.n, kernel.s
    o = np.zeros(n) if origin is None else np.asarray(origin, dtype=float).reshape(-1)
    src = _as_source(f)
    if abs(float(np.asarray(F(np.zeros(1))).reshape(-1)[0])) > 0:
        raise ParameterError("the antiderivative F must satisfy F(0) = 0")
    eq_res = _gate(u, kernel, f, operator, solver_tol) if gate else None
    G = kernel.constants.gamma_sq
    w, v = u.grid.weights, u.values
    Fv = np.asarray(F(v), dtype=float) * np.ones_like(v)
    lhs = 2 * n * float(np.sum(w * Fv))
    rhs_vol = (n - 2 * s) * float(np.sum(w * v * src(u.grid.nodes, v)))
    bq, Q, A = boundary_traces(u, kernel, domain, m, **trace_kw)
    parts = G * bq.weights * A * Q**2 * np.sum((bq.nodes - o) * bq.normals, axis=1)
    res, rel = _relative(lhs, rhs_vol, parts)
    meta = {"boundary_nodes": bq.size, "traces": Q.tolist(), "equation_residual": eq_res,
            "N": u.grid.N, "s": s, "n": n}
    return PohozaevReport("f_form", lhs, rhs_vol, float(np.sum(parts)), res, rel, None, o.tolist(), meta)


def volume_coefficient(n, s, p):
    """2n/(p+1) - (n - 2s); zero exactly at the critical exponent."""
    return 2 * n / (p + 1) - (n - 2 * s)


def classify_exponent(n, s, p, rtol=1e-12):
    pc = critical_exponent(n, s)
    if not np.isfinite(pc) or p < pc * (1 - rtol):
        return "subcritical"
    if p <= pc * (1 + rtol):
        return "critical"
    return "supercritical"


def nonexistence_verdict(p, kernel, domain, origin=None):
    """Sign of the volume coefficient and star-shapedness, and what they imply."""
    n, s = kernel.n, kernel.s
    if not p > 1:
        raise ParameterError(f"power exponent must exceed 1, got {p!r}")
    o = np.zeros(n) if origin is None else np.asarray(origin, dtype=float).reshape(-1)
    pc = critical_exponent(n, s)
    coef = volume_coefficient(n, s, p)
    cls = classify_exponent(n, s, p)
    margin = star_shape_margin(domain, o)
    if not np.isfinite(pc):
        text = "n <= 2s: no supercritical regime; no obstruction"
    elif cls == "subcritical":
        text = "subcritical: no obstruction from the identity"
    elif margin > 0:
        text = (f"{cls}: left side <= 0 while the boundary side is > 0 for u != 0; "
                "the only nonnegative bounded solution is u = 0")
    else:
        text = f"{cls}, but the domain is not star-shaped about the origin; the identity gives no verdict"
    return ObstructionVerdict(float(p), float(pc), float(coef), cls, float(margin), text)


def unique_continuation_check(pair, domain, s, m=None, **trace_kw):
    """min over boundary nodes of |phi/d^s|; positive means the trace does not vanish."""
    phi = pair.eigenfunction
    if not np.any(phi.values):
        return 0.0
    if m is None:
        m = 2 if domain.n == 1 else max(64, phi.grid.Nt)
    bq = domain.boundary_nodes(m)
    vals = [trace_quotient(phi, domain, z, s, **trace_kw).value for z in bq.nodes]
    return float(np.min(np.abs(vals)))
