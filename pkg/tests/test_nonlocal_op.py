import numpy as np
import pytest

import oracles
from fracpoh.errors import ParameterError, ResourceError
from fracpoh.geometry import Annulus, Ball, Ellipse, Interval, build_grid
from fracpoh.kernel import Kernel, frac_constant, torsion_constant
from fracpoh.nonlocal_op import (DEFAULT_QUAD, GridFunction, QuadratureParams, apply_pointwise, assemble,
                                 compact_support_identity_residual, halfspace_harmonicity_residual,
                                 lds_bound_check, operator_rows, scaling_identity_residual, with_params)


def gauss(X):
    return np.exp(-np.sum(np.atleast_2d(X) ** 2, axis=-1))


def gauss_grad(X):
    X = np.atleast_2d(X)
    return -2 * X * gauss(X)[:, None]


def bump(X, scale=1.0):
    q = 1 - scale**2 * np.sum(np.atleast_2d(X) ** 2, axis=-1)
    return np.clip(q, 0, None) ** 6


def bump_grad(X, scale=1.0):
    X = np.atleast_2d(X)
    q = np.clip(1 - scale**2 * np.sum(X**2, axis=-1), 0, None)
    return (-12 * scale**2 * q**5)[:, None] * X


def aniso_kernel(s):
    return Kernel.from_function(2, s, lambda t: frac_constant(2, s) * (1 + np.cos(t) ** 2))


# --- apply_pointwise ---------------------------------------------------------

def test_halfline_profile_is_harmonic():
    k = Kernel.fractional(1, 0.5)
    assert halfspace_harmonicity_residual(k, [1.0], [0.5]) <= 1e-10


def test_zero_function_gives_zero():
    k = Kernel.fractional(2, 0.3)
    zero = lambda X: np.zeros(len(np.atleast_2d(X)))
    assert apply_pointwise(k, zero, [0.1, 0.2], domain=Ball()) == 0.0
    g = build_grid(Interval(-1, 1), 64)
    assert np.all(apply_pointwise(Kernel.fractional(1, 0.5), GridFunction(g, np.zeros(64)), g.x) == 0.0)


def test_gaussian_against_fourier_oracle():
    k = Kernel.fractional(1, 0.5)
    assert abs(apply_pointwise(k, gauss, 0.0) - oracles.frac_lap_gauss_1d(0.0, 0.5)[0]) <= 1e-6


@pytest.mark.parametrize("s", [0.25, 0.75])
def test_gaussian_oracle_other_orders(s):
    x = np.array([0.0, 0.7, 1.5])
    for n in (1, 2):
        k = Kernel.fractional(n, s)
        if n == 1:
            ref = oracles.frac_lap_gauss_1d(x, s)
            got = apply_pointwise(k, gauss, x)
        else:
            ref = oracles.frac_lap_gauss_2d(x, s)
            got = apply_pointwise(k, gauss, np.stack([x * 0.6, x * 0.8], axis=1))
        assert np.max(np.abs(got - ref)) <= 1e-6


def test_torsion_profile_with_support():
    # callable rule split at the support: kappa (1 - x^2)^s has L = 1 inside
    for n, s in ((1, 0.3), (2, 0.6)):
        k = Kernel.fractional(n, s)
        dom = Interval(-1, 1) if n == 1 else Ball()
        u = lambda X: torsion_constant(n, s) * np.clip(1 - np.sum(np.atleast_2d(X) ** 2, axis=-1), 0, None) ** s
        pts = np.array([[0.0], [0.5], [-0.9]]) if n == 1 else np.array([[0.0, 0.0], [0.3, -0.4], [0.6, 0.6]])
        assert np.max(np.abs(apply_pointwise(k, u, pts, domain=dom) - 1)) <= 1e-6


def test_point_on_boundary_rejected():
    k = Kernel.fractional(1, 0.5)
    g = build_grid(Interval(-1, 1), 32)
    with pytest.raises(ParameterError):
        apply_pointwise(k, GridFunction(g, np.ones(32)), 1.0)
    with pytest.raises(ParameterError):
        apply_pointwise(k, gauss, 1.2, domain=Interval(-1, 1))
    with pytest.raises(ParameterError):
        apply_pointwise(Kernel.fractional(2, 0.5), gauss, [1.0, 0.0], domain=Ball())


def test_linearity():
    k = aniso_kernel(0.4)
    X = np.array([[0.1, 0.2], [-0.3, 0.5]])
    a, b = 1.7, -0.4
    comb = lambda Y: a * gauss(Y) + b * bump(Y)
    lhs = apply_pointwise(k, comb, X, domain=Ball(radius=1.0))
    rhs = a * apply_pointwise(k, gauss, X, domain=Ball()) + b * apply_pointwise(k, bump, X, domain=Ball())
    assert np.max(np.abs(lhs - rhs)) <= 1e-12 * max(1.0, np.max(np.abs(lhs)))


def test_deterministic():
    k = aniso_kernel(0.6)
    X = np.array([[0.1, 0.2]])
    assert apply_pointwise(k, gauss, X) == apply_pointwise(k, gauss, X)


# --- assembled operator --------------------------------------------------------

def test_row_consistency():
    rng = np.random.default_rng(0)
    for dom, N, k in ((Interval(-1, 1), 128, Kernel.fractional(1, 0.4)), (Ball(), 16, Kernel.fractional(2, 0.6)),
                      (Ellipse(semi_axes=(1.5, 1.0), angle=0.3), 16, aniso_kernel(0.5))):
        g = build_grid(dom, N)
        M = assemble(k, g)
        c = rng.normal(size=3)
        u = GridFunction(g, np.cos(g.nodes @ c[: g.n]) * dom.distance(g.nodes))
        Mu = M @ u
        pw = apply_pointwise(k, u, g.nodes)
        assert np.max(np.abs(Mu - pw)) <= 1e-10 * np.max(np.abs(Mu))


def test_symmetric_configuration():
    # vertex-centred uniform grid with split radius within one spacing: a Toeplitz matrix
    g = build_grid(Interval(-1, 1), 200, 1.0, centering="vertex")
    params = with_params(DEFAULT_QUAD, split_radius_factor=1.0, interp_correction=False)
    for s in (0.25, 0.5, 0.75):
        M = assemble(Kernel.fractional(1, s), g, params)
        assert M.symmetry_defect() <= 1e-12


def test_torsion_constant_row_values():
    s = 0.5
    k = Kernel.fractional(1, s)
    g = build_grid(Interval(-1, 1), 512)
    M = assemble(k, g)
    v = M @ np.clip(1 - g.x**2, 0, None) ** s
    inner = np.abs(g.x) < 0.9
    kappa = torsion_constant(1, s)
    assert np.max(np.abs(v[inner] * kappa - 1)) <= 0.01


@pytest.mark.parametrize("dom,kernel,N", [
    (Interval(-1, 1), Kernel.fractional(1, 0.25), 256),
    (Interval(-1, 1), Kernel.fractional(1, 0.5), 256),
    (Interval(-1, 1), Kernel.fractional(1, 0.75), 256),
    (Interval(-1, 1), Kernel(0.5, 1, value=2.0), 256),
    (Ball(), Kernel.fractional(2, 0.5), 24),
    (Ball(), Kernel.fractional(2, 0.75), 24),
    (Annulus(0.5, 1.0), Kernel.fractional(2, 0.5), 24),
])
def test_sign_pattern(dom, kernel, N):
    M = assemble(kernel, build_grid(dom, N))
    assert M.sign_pattern_violations() == 0


@pytest.mark.parametrize("dom,kernel,N", [
    (Interval(-1, 1), Kernel.fractional(1, 0.5), 128),
    (Ball(), Kernel.fractional(2, 0.75), 16),
])
def test_maximum_principle(dom, kernel, N):
    g = build_grid(dom, N)
    M = assemble(kernel, g)
    rng = np.random.default_rng(1)
    for _ in range(20):
        u = rng.uniform(-1, 1, g.size)
        i = rng.integers(g.size)
        u[i] = 1.5
        assert (M @ u)[i] > 0


def test_smooth_data_convergence_order():
    s = 0.5
    k = Kernel.fractional(1, s)
    errs = []
    for N in (128, 256, 512, 1024):
        g = build_grid(Interval(-1, 1), N)
        sel = np.abs(g.x) < 0.9
        ref = oracles.frac_lap_bump_1d(g.x[sel], s)
        got = assemble(k, g) @ bump(g.nodes)
        errs.append(np.max(np.abs(got[sel] - ref)) / np.max(np.abs(ref)))
    orders = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
    assert np.all(orders >= 1.0), (errs, orders)


def test_pointwise_rule_convergence_under_refinement():
    k = Kernel.fractional(1, 0.5)
    x = np.array([0.0, 0.3, 0.6])
    ref = oracles.frac_lap_bump_1d(x, 0.5)
    errs = []
    for order in (4, 6, 8):
        p = with_params(DEFAULT_QUAD, near_order=order, panel_order=order, panel_levels=4 + order)
        errs.append(np.max(np.abs(apply_pointwise(k, bump, x, domain=Interval(-1, 1), params=p) - ref)))
    assert errs[0] > errs[1] > errs[2]
    assert np.log2(errs[0] / errs[2]) >= 2.0


def test_resource_error(monkeypatch):
    monkeypatch.setenv("FRACPOH_MEMORY_BYTES", "1e6")
    with pytest.raises(ResourceError) as info:
        assemble(Kernel.fractional(1, 0.5), build_grid(Interval(-1, 1), 1024))
    assert 8 <= info.value.suggested_N < 1024
    assert str(info.value.suggested_N) in str(info.value)


def test_dimension_mismatch():
    with pytest.raises(ParameterError):
        assemble(Kernel.fractional(2, 0.5), build_grid(Interval(-1, 1), 16))


def test_quadrature_params_from_spec():
    p = QuadratureParams.from_spec({"split_radius_factor": 3.0, "angular_nodes": 64})
    assert p.split_radius_factor == 3.0 and p.angular_nodes == 64
    with pytest.raises(ParameterError):
        QuadratureParams.from_spec({"bogus": 1})


def test_operator_rows_reject_exterior_points():
    g = build_grid(Ball(), 16)
    with pytest.raises(ParameterError):
        operator_rows(Kernel.fractional(2, 0.5), g, np.array([[1.0, 0.0]]))


# --- scaling and compact-support identities ------------------------------------

def _disk_probes(m, radius, seed):
    rng = np.random.default_rng(seed)
    ang = rng.uniform(0, 2 * np.pi, m)
    r = radius * np.sqrt(rng.uniform(0, 1, m))
    return np.stack([r * np.cos(ang), r * np.sin(ang)], axis=1)


def test_scaling_identity_zero():
    zero = lambda X: np.zeros(len(np.atleast_2d(X)))
    assert scaling_identity_residual(Kernel.fractional(1, 0.5), zero, np.array([[0.1], [0.2]])) == 0.0


@pytest.mark.parametrize("n", [1, 2])
def test_scaling_identity_refinement(n):
    k = Kernel.fractional(n, 0.5)
    if n == 1:
        probes = np.random.default_rng(2).uniform(-0.5, 0.5, (16, 1))
        grids = [build_grid(Interval(-1.5, 1.5), N) for N in (128, 256, 512, 1024)]
    else:
        probes = _disk_probes(16, 0.5, 3)
        grids = [build_grid(Ball(radius=1.5), N) for N in (24, 48, 96)]
    res = [scaling_identity_residual(k, bump, probes, grad=bump_grad, grid=g) for g in grids]
    orders = np.log2(np.array(res[:-1]) / np.array(res[1:]))
    assert np.all(orders >= 0.5), (res, orders)


@pytest.mark.parametrize("n", [1, 2])
def test_scaling_identity_gaussian(n):
    k = Kernel.fractional(n, 0.25)
    probes = np.random.default_rng(4).uniform(-1, 1, (8, n))
    assert scaling_identity_residual(k, gauss, probes, grad=gauss_grad) <= 1e-3
    # finite-difference gradient of u gives the same verdict
    assert scaling_identity_residual(k, gauss, probes) <= 1e-3


def test_compact_support_identity_zero():
    zero = lambda X: np.zeros(len(np.atleast_2d(X)))
    g = build_grid(Interval(-1, 1), 64)
    assert compact_support_identity_residual(Kernel.fractional(1, 0.5), zero, g) == (0.0, 0.0)


def _bump_integrals_1d(s):
    # u(x) = b(2x) with b = (1 - y^2)^6: Lu(x) = 4^s (Lb)(2x); integrals by dense Gauss-Legendre
    from scipy.special import roots_legendre
    t, w = roots_legendre(400)
    x, w = 0.5 * t, 0.5 * w
    Lu = 4**s * oracles.frac_lap_bump_1d(2 * x, s)
    u = bump(x[:, None], 2.0)
    xg = x * bump_grad(x[:, None], 2.0)[:, 0]
    return 2 * np.sum(w * xg * Lu), (2 * s - 1) * np.sum(w * u * Lu), np.sum(w * u * Lu)


@pytest.mark.parametrize("s", [0.25, 0.5, 0.75])
def test_compact_support_identity_1d(s):
    k = Kernel.fractional(1, s)
    u = lambda X: bump(X, 2.0)
    ug = lambda X: bump_grad(X, 2.0)
    lhs, rhs = compact_support_identity_residual(k, u, build_grid(Interval(-1, 1), 512), grad=ug)
    lo, ro, energy = _bump_integrals_1d(s)
    assert abs(lo - ro) <= 1e-6 * energy          # the oracle itself satisfies the identity
    assert abs(lhs - rhs) <= 1e-3 * energy
    assert abs(lhs - lo) <= 1e-3 * energy and abs(rhs - ro) <= 1e-3 * energy


def test_compact_support_identity_disk():
    s = 0.75
    k = Kernel.fractional(2, s)
    u = lambda X: bump(X, 2.0)
    lhs, rhs = compact_support_identity_residual(k, u, build_grid(Ball(), 64), grad=lambda X: bump_grad(X, 2.0))
    assert abs(lhs - rhs) <= 1e-2 * max(abs(lhs), abs(rhs))


def test_compact_support_identity_touching_boundary():
    k = Kernel.fractional(1, 0.5)
    with pytest.raises(ParameterError):
        compact_support_identity_residual(k, bump, build_grid(Interval(-1, 1), 64))


# --- L(d^s) and the half-space profile -----------------------------------------

def test_lds_halfline_proxy():
    # on (0, L) the profile d^s is capped far away; L(d^s) near 0 decays like L^(-s)
    k = Kernel.fractional(1, 0.5)
    probes = np.array([0.05, 0.1, 0.2])
    vals = [lds_bound_check(k, Interval(0, L), probes, N=2048) for L in (10.0, 100.0, 1000.0)]
    assert vals[2] <= 0.03
    ratios = np.array(vals[:-1]) / np.array(vals[1:])
    assert np.all(np.abs(ratios / np.sqrt(10) - 1) <= 0.1), ratios


def test_lds_stable_interval():
    k = Kernel.fractional(1, 0.5)
    probes = -1 + np.array([0.2, 0.1, 0.05, 0.025])
    a, b = (lds_bound_check(k, Interval(-1, 1), probes, N=N) for N in (1024, 2048))
    assert abs(a - b) <= 0.1 * b


def test_lds_stable_disk():
    k = Kernel.fractional(2, 0.75)
    probes = np.array([[1 - d, 0.0] for d in (0.2, 0.1, 0.05, 0.025)])
    a, b = (lds_bound_check(k, Ball(), probes, N=N) for N in (64, 96))
    assert abs(a - b) <= 0.1 * b


def test_halfspace_anisotropic():
    k = aniso_kernel(0.5)
    probes = np.array([[0.3, 0.5], [-0.2, 1.0], [0.0, 0.1], [2.0, 3.0]])
    r_plus = halfspace_harmonicity_residual(k, [0.0, 1.0], probes)
    r_minus = halfspace_harmonicity_residual(k, [0.0, -1.0], -probes)
    assert r_plus <= 1e-3
    assert abs(r_plus - r_minus) <= 1e-15 + 1e-10 * r_plus


@pytest.mark.parametrize("s", [0.2, 0.5, 0.8])
def test_halfspace_translation(s):
    k1 = Kernel.fractional(1, s)
    res = [halfspace_harmonicity_residual(k1, [1.0], [t]) for t in (0.1, 0.5, 2.0, 7.0)]
    assert max(res) <= 1e-8
    k2 = aniso_kernel(s)
    e = np.array([np.cos(0.4), np.sin(0.4)])
    perp = np.array([-e[1], e[0]])
    base = halfspace_harmonicity_residual(k2, e, [0.5 * e])
    for shift in (0.3, 1.5):
        assert halfspace_harmonicity_residual(k2, e, [(0.5 + shift) * e]) <= 1e-3
        assert abs(halfspace_harmonicity_residual(k2, e, [0.5 * e + shift * perp]) - base) <= 1e-3


def test_halfspace_rejects_bad_input():
    k = Kernel.fractional(2, 0.5)
    with pytest.raises(ParameterError):
        halfspace_harmonicity_residual(k, [1.0, 1.0], [[1.0, 0.0]])
    with pytest.raises(ParameterError):
        halfspace_harmonicity_residual(k, [1.0, 0.0], [[-1.0, 0.0]])
