import numpy as np
import pytest
from scipy.special import gamma

import cases
from fracpoh.errors import ParameterError, PreconditionError
from fracpoh.geometry import Annulus, Ball, Interval, build_grid
from fracpoh.kernel import Kernel
from fracpoh.nonlocal_op import GridFunction
from fracpoh.pohozaev import (classify_exponent, equation_residual, f_form_identity, nonexistence_verdict,
                              unique_continuation_check, verify_poh1, verify_poh2, volume_coefficient)
from fracpoh.solve import EigenPair, ProblemSpec, solve_eigen, solve_linear
from fracpoh.trace import trace_quotient


def _x_source():
    # f(x, u) = x: odd data on (0, 2) so the directional identity is not 0 = 0
    return lambda X, v: X[:, 0]


@pytest.fixture(scope="module")
def shifted_x_solution():
    dom = Interval(0.0, 2.0)
    k = Kernel.fractional(1, 0.5)
    spec = ProblemSpec(k, dom, g=lambda X: X[:, 0], N=2048)
    return spec, solve_linear(spec)


# --- identity with the radial multiplier ----------------------------------------------

def test_poh1_interval_torsion_closed_form():
    # both sides equal (n + 2s) int u = 2 * pi/2 and Gamma(3/2)^2 * (2 + 2) = pi
    spec, u = cases.interval_torsion(0.5, 2048)
    rep = verify_poh1(u, spec.kernel, spec.domain, 1.0, operator=spec.operator())
    assert abs(rep.lhs_volume - np.pi) <= 0.02 * np.pi
    assert abs(rep.rhs_volume + rep.rhs_boundary - np.pi) <= 0.02 * np.pi
    assert rep.residual_rel <= 0.02
    assert gamma(1.5) ** 2 * 4 == pytest.approx(np.pi, rel=1e-15)


def test_poh1_residual_decreases_under_refinement():
    res = []
    for N in (256, 512, 1024, 2048):
        spec, u = cases.interval_torsion(0.5, N)
        res.append(verify_poh1(u, spec.kernel, spec.domain, 1.0, operator=spec.operator()).residual_rel)
    for a, b in zip(res[:-1], res[1:]):
        assert b <= 1.1 * a


def test_poh1_zero_function():
    dom = Interval(-1, 1)
    g = build_grid(dom, 64)
    rep = verify_poh1(GridFunction(g, np.zeros(64)), Kernel.fractional(1, 0.5), dom, 0.0)
    assert rep.lhs_volume == rep.rhs_volume == rep.rhs_boundary == 0.0
    assert rep.residual_rel == 0.0


@pytest.mark.slow
def test_poh1_disk_torsion_refinement():
    s = 0.75
    res = []
    for N in (64, 96):
        spec, u = cases.disk_torsion(s, N)
        res.append(verify_poh1(u, spec.kernel, spec.domain, 1.0, operator=spec.operator()).residual_rel)
    assert res[1] <= 0.05
    assert res[1] < res[0]


def test_poh1_gate_refuses_non_solutions():
    spec, u = cases.interval_torsion(0.5, 512)
    with pytest.raises(PreconditionError):
        verify_poh1(u, spec.kernel, spec.domain, 2.0, operator=spec.operator())
    rep = verify_poh1(u, spec.kernel, spec.domain, 2.0, operator=spec.operator(), gate=False)
    assert rep.meta["equation_residual"] is None


@pytest.mark.parametrize("s", [0.25, 0.5])
def test_poh1_quadratic_homogeneity(s):
    # linear source f = lam u: doubling the eigenfunction multiplies every term by 4
    spec, pair = cases.interval_eigen(s, 512)
    lam, phi = pair.eigenvalue, pair.eigenfunction
    op = spec.operator()
    a = verify_poh1(phi, spec.kernel, spec.domain, lambda v: lam * v, operator=op)
    b = verify_poh1(2 * phi, spec.kernel, spec.domain, lambda v: lam * v, operator=op)
    for x, y in ((a.lhs_volume, b.lhs_volume), (a.rhs_volume, b.rhs_volume), (a.rhs_boundary, b.rhs_boundary)):
        assert abs(y - 4 * x) <= 1e-10 * max(abs(a.lhs_volume), abs(a.rhs_boundary))


def test_star_shaped_boundary_term_positive():
    spec, u = cases.interval_torsion(0.5, 512)
    for o in (-0.5, 0.0, 0.7):
        assert verify_poh1(u, spec.kernel, spec.domain, 1.0, origin=[o], operator=spec.operator()).rhs_boundary > 0
    spec, u = cases.disk_torsion(0.75, 64)
    rep = verify_poh1(u, spec.kernel, spec.domain, 1.0, origin=[0.2, -0.1], operator=spec.operator())
    assert rep.rhs_boundary > 0


def test_report_fields():
    spec, u = cases.interval_torsion(0.5, 512)
    rep = verify_poh1(u, spec.kernel, spec.domain, 1.0, operator=spec.operator())
    assert rep.recomputed_residual == pytest.approx(rep.residual_abs, rel=1e-12)
    d = rep.as_dict()
    assert d["check"] == "poh1" and d["origin"] == [0.0]
    assert d["meta"]["boundary_nodes"] == 2 and len(d["meta"]["traces"]) == 2


# --- directional identity --------------------------------------------------------------

def test_poh2_symmetric_interval_vanishes():
    spec, u = cases.interval_torsion(0.5, 2048)
    rep = verify_poh2(u, spec.kernel, spec.domain, 1.0, [1.0], operator=spec.operator())
    assert abs(rep.lhs_volume) <= 1e-12 and abs(rep.rhs_boundary) <= 1e-12


def test_poh2_shifted_interval_torsion():
    # constant source on (0, 2): the solution is even about 1, so both sides vanish
    spec, u = cases.interval_torsion(0.5, 2048, 0.0, 2.0)
    rep = verify_poh2(u, spec.kernel, spec.domain, 1.0, [1.0], operator=spec.operator())
    assert abs(rep.lhs_volume) <= 1e-10 and abs(rep.rhs_boundary) <= 1e-10


def test_poh2_shifted_interval_nonzero(shifted_x_solution):
    spec, v = shifted_x_solution
    rep = verify_poh2(v, spec.kernel, spec.domain, _x_source(), [1.0], operator=spec.operator())
    assert abs(rep.lhs_volume) > 1.0
    assert rep.residual_rel <= 0.03


def test_poh2_antisymmetric_in_direction(shifted_x_solution):
    spec, v = shifted_x_solution
    op = spec.operator()
    a = verify_poh2(v, spec.kernel, spec.domain, _x_source(), [1.0], operator=op)
    b = verify_poh2(v, spec.kernel, spec.domain, _x_source(), [-1.0], operator=op)
    assert abs(a.lhs_volume + b.lhs_volume) <= 1e-10 * abs(a.lhs_volume)
    assert abs(a.rhs_boundary + b.rhs_boundary) <= 1e-10 * abs(a.rhs_boundary)


def test_translation_consistency(shifted_x_solution):
    spec, v = shifted_x_solution
    op, f = spec.operator(), _x_source()
    o, e = np.array([0.5]), np.array([1.0])
    a = verify_poh1(v, spec.kernel, spec.domain, f, origin=o, operator=op)
    b = verify_poh1(v, spec.kernel, spec.domain, f, origin=o + e, operator=op)
    c = verify_poh2(v, spec.kernel, spec.domain, f, e, operator=op)
    scale = abs(a.lhs_volume) + abs(b.lhs_volume)
    assert abs(a.lhs_volume - b.lhs_volume - 2 * c.lhs_volume) <= 1e-12 * scale
    assert a.rhs_volume == b.rhs_volume
    assert abs(a.rhs_boundary - b.rhs_boundary - 2 * c.rhs_boundary) <= 1e-12 * scale


def test_translation_consistency_disk():
    spec, u = cases.disk_torsion(0.75, 64)
    op = spec.operator()
    o, e = np.array([0.1, 0.0]), np.array([0.6, 0.8])
    a = verify_poh1(u, spec.kernel, spec.domain, 1.0, origin=o, operator=op)
    b = verify_poh1(u, spec.kernel, spec.domain, 1.0, origin=o + e, operator=op)
    c = verify_poh2(u, spec.kernel, spec.domain, 1.0, e, operator=op)
    scale = abs(a.lhs_volume) + abs(a.rhs_boundary)
    assert abs(a.lhs_volume - b.lhs_volume - 2 * c.lhs_volume) <= 1e-12 * scale
    assert abs(a.rhs_boundary - b.rhs_boundary - 2 * c.rhs_boundary) <= 1e-12 * scale


def test_poh2_rejects_non_unit_direction():
    spec, u = cases.interval_torsion(0.5, 512)
    for e in ([2.0], [0.0], [np.nan]):
        with pytest.raises(ParameterError):
            verify_poh2(u, spec.kernel, spec.domain, 1.0, e, operator=spec.operator())


# --- f-form identity -----------------------------------------------------------------------

def test_f_form_torsion():
    spec, u = cases.interval_torsion(0.5, 2048)
    rep = f_form_identity(u, spec.kernel, spec.domain, 1.0, lambda t: t, operator=spec.operator())
    assert abs(rep.lhs_volume - np.pi) <= 0.02 * np.pi
    assert abs(rep.rhs_boundary - np.pi) <= 0.02 * np.pi


def test_f_form_eigenfunction():
    # f = lam u, F = lam u^2 / 2, unit L2 norm: 2n F - (n - 2s) u f integrates to 2 s lam
    s = 0.5
    for N in (1024, 2048):
        spec, pair = cases.interval_eigen(s, N)
        lam = pair.eigenvalue
        rep = f_form_identity(pair.eigenfunction, spec.kernel, spec.domain, lambda t: lam * t,
                              lambda t: lam * t**2 / 2, operator=spec.operator())
        assert abs(rep.lhs_volume - rep.rhs_volume - 2 * s * lam) <= 1e-10 * lam
        assert abs(rep.rhs_boundary - 2 * s * lam) <= 0.05 * 2 * s * lam


def test_f_form_zero_and_bad_antiderivative():
    dom = Interval(-1, 1)
    g = build_grid(dom, 64)
    k = Kernel.fractional(1, 0.5)
    rep = f_form_identity(GridFunction(g, np.zeros(64)), k, dom, 0.0, lambda t: 0 * t)
    assert (rep.lhs_volume, rep.rhs_boundary) == (0.0, 0.0)
    with pytest.raises(ParameterError):
        f_form_identity(GridFunction(g, np.zeros(64)), k, dom, 0.0, lambda t: t + 1)


def test_equation_residual_source_conventions():
    spec, u = cases.interval_torsion(0.5, 512)
    op = spec.operator()
    r0, _ = equation_residual(u, 1.0, op)
    r1, _ = equation_residual(u, lambda v: np.ones_like(v), op)
    r2, _ = equation_residual(u, lambda X, v: np.ones(len(X)), op)
    assert r0 == r1 == r2 <= 1e-8
    with pytest.raises(ParameterError):
        equation_residual(u, None, op)


# --- verdicts -----------------------------------------------------------------------------

def test_critical_exponent_and_coefficient():
    k = Kernel.fractional(2, 0.75)
    v = nonexistence_verdict(7.0, k, Ball())
    assert v.p_critical == 7.0
    assert v.coefficient == 0.0 and v.sign_class == "critical"
    for n, s in ((2, 0.25), (2, 0.5), (2, 0.9), (1, 0.3)):
        pc = (n + 2 * s) / (n - 2 * s)
        assert abs(volume_coefficient(n, s, pc)) <= 1e-12


def test_classification_ladder():
    got = [classify_exponent(2, 0.75, p) for p in (2, 5, 7, 9)]
    assert got == ["subcritical", "subcritical", "critical", "supercritical"]


def test_verdict_texts():
    k = Kernel.fractional(2, 0.75)
    v = nonexistence_verdict(12.0, k, Ball())
    assert v.sign_class == "supercritical" and v.coefficient < 0 and v.boundary_term > 0
    assert "u = 0" in v.verdict
    ann = nonexistence_verdict(12.0, k, Annulus(0.5, 1.0), origin=[0.75, 0.0])
    assert ann.boundary_term < 0 and "not star-shaped" in ann.verdict
    assert "no obstruction" in nonexistence_verdict(2.0, k, Ball()).verdict


def test_degenerate_dimension():
    v = nonexistence_verdict(3.0, Kernel.fractional(1, 0.5), Interval(-1, 1))
    assert v.p_critical == np.inf and v.sign_class == "subcritical"
    assert "no supercritical regime" in v.verdict
    with pytest.raises(ParameterError):
        nonexistence_verdict(1.0, Kernel.fractional(1, 0.5), Interval(-1, 1))


# --- unique continuation -------------------------------------------------------------------

def test_first_eigenfunction_trace_bounded_below():
    spec, pair = cases.interval_eigen(0.5, 2048)
    assert unique_continuation_check(pair, spec.domain, 0.5) >= 0.1


def test_zero_eigenfunction_gives_zero():
    dom = Interval(-1, 1)
    g = build_grid(dom, 64)
    pair = EigenPair(1.0, GridFunction(g, np.zeros(64)), 0.0, 1)
    assert unique_continuation_check(pair, dom, 0.5) == 0.0


def test_second_eigenfunction_traces_opposite():
    dom = Interval(-1, 1)
    pair = solve_eigen(ProblemSpec(Kernel.fractional(1, 0.5), dom, "eigen", index=2, N=1024))
    lo = trace_quotient(pair.eigenfunction, dom, [-1.0], 0.5).value
    hi = trace_quotient(pair.eigenfunction, dom, [1.0], 0.5).value
    assert lo * hi < 0
    assert abs(lo + hi) <= 1e-6 * abs(hi)
    assert unique_continuation_check(pair, dom, 0.5) > 0
