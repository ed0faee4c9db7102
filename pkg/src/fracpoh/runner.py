"""Experiment pipeline: config -> geometry -> operator -> solve -> checks -> reports."""

import os
import time
from dataclasses import asdict, dataclass, fields

import numpy as np

from . import io
from .config import DEFAULT_TOL, validate
from .errors import FracpohError, ParameterError
from .geometry import Annulus, Ball, Ellipse, Interval, build_grid, domain_from_spec
from .kernel import Kernel
from .nonlocal_op import (QuadratureParams, assemble, compact_support_identity_residual,
                          lds_bound_check, scaling_identity_residual)
from .pohozaev import (f_form_identity, nonexistence_verdict, unique_continuation_check, verify_poh1,
                       verify_poh2)
from .solve import ProblemSpec, solve_eigen, solve_linear, solve_power
from .trace import default_radii, points_from_spec, regularity_probe, trace_quotient

LDS_DISTANCES = (0.2, 0.1, 0.05, 0.025)


@dataclass
class ReportRow:
    check: str
    lhs: float = None
    rhs_volume: float = None
    rhs_boundary: float = None
    residual_abs: float = None
    residual_rel: float = None
    N: int = None
    s: float = None
    p: float = None
    sweep_parameter: str = ""
    sweep_value: float = None
    value: float = None
    label: str = ""
    tol: float = None
    passed: bool = True
    wall_time: float = 0.0


TRACE_COLUMNS = ["check", "sweep_value", "z", "Q_z", "fit_residual", "gamma_fit", "r_squared"]


# wall time is hardware-dependent and would break byte-identical CSVs, so it lives in the JSON only
CSV_COLUMNS = [f.name for f in fields(ReportRow) if f.name != "wall_time"]


@dataclass
class RunResult:
    rows: list
    summary: dict
    diagnostics: list
    paths: dict

    @property
    def passed(self):
        return all(r.passed for r in self.rows)


# --- problem pieces -----------------------------------------------------------------

def _source(problem, n):
    """(f for the identities, F with F(0) = 0 or None, g for the linear solve)."""
    kind = problem["kind"]
    if kind == "linear":
        g = problem["g"]
        if isinstance(g, dict):
            c = float(g.get("constant", 0.0))
            grad = np.asarray(g.get("gradient", [0.0] * n), dtype=float)
        else:
            c, grad = float(g), np.zeros(n)
        if np.any(grad):
            return (lambda X, v: c + X @ grad), None, (lambda X: c + X @ grad)
        return (lambda X, v: np.full(v.shape, c)), (lambda v: c * v), c
    if kind == "power":
        p = float(problem["p"])
        return (lambda X, v: np.abs(v) ** (p - 1) * v), (lambda v: np.abs(v) ** (p + 1) / (p + 1)), None
    lam = float(problem["eigenvalue"])
    return (lambda X, v: lam * v), (lambda v: 0.5 * lam * v * v), None


def interior_ball(domain):
    """A ball well inside the domain: (center, radius)."""
    if isinstance(domain, Interval):
        return np.array([0.5 * (domain.a + domain.b)]), 0.25 * (domain.b - domain.a)
    if isinstance(domain, Annulus):
        mid = 0.5 * (domain.r_in + domain.r_out)
        return domain.center + np.array([mid, 0.0]), 0.4 * (domain.r_out - domain.r_in)
    if isinstance(domain, (Ball, Ellipse)):
        return domain.center.copy(), 0.5 * domain.inradius
    raise ParameterError(f"no interior ball for {type(domain).__name__}")


def smooth_bump(center, radius):
    """exp(1 - 1/(1 - |x-c|^2/r^2)) inside the ball, 0 outside."""
    c = np.asarray(center, dtype=float)

    def u(X):
        X = np.asarray(X, dtype=float).reshape(-1, c.size)
        q = np.sum((X - c) ** 2, axis=1) / radius**2
        out = np.zeros(q.shape)
        inside = q < 1
        out[inside] = np.exp(1.0 - 1.0 / (1.0 - q[inside]))
        return out
    return u


def _ball_domain(center, radius):
    if center.size == 1:
        return Interval(center[0] - radius, center[0] + radius)
    return Ball(center, radius)


class Point:
    """One sweep point: kernel, domain, grid, operator and solution, built lazily."""

    def __init__(self, cfg, overrides):
        self.cfg = cfg
        k = dict(cfg["kernel"])
        if "s" in overrides:
            k["s"] = float(overrides["s"])
        self.kernel = Kernel.from_spec(k)
        d = cfg["domain"]
        dom = domain_from_spec({k: d[k] for k in ("shape", "params", "distance_cap") if k in d})
        if "scale" in overrides:
            dom = dom.scaled(float(overrides["scale"]))
        self.domain = dom
        self.N = int(overrides.get("N", d["grid"]["N"]))
        self.grading = float(d["grid"]["grading"])
        self.boundary_nodes = d.get("boundary_nodes")
        pb = dict(cfg["problem"])
        if "p" in overrides:
            pb["p"] = float(overrides["p"])
        self.problem = pb
        self.params = QuadratureParams.from_spec(cfg["quadrature"])
        tr = cfg.get("trace", {})
        lad = tr.get("ladder", {})
        self.trace_kw = {k: lad[k] for k in ("t0", "levels", "order") if k in lad}
        rad = tr.get("radii", {})
        self.radii = rad.get("values")
        if self.radii is None and "levels" in rad:
            self.radii = default_radii(dom, rad["levels"])
        self.trace_points = tr.get("points", "all")
        self._grid = self._op = self._u = self._pair = None
        self.solver_info = {}

    @property
    def grid(self):
        if self._grid is None:
            self._grid = build_grid(self.domain, self.N, self.grading)
        return self._grid

    @property
    def operator(self):
        if self._op is None:
            self._op = assemble(self.kernel, self.grid, self.params)
        return self._op

    def spec(self, kind=None):
        pb = self.problem
        kind = kind or pb["kind"]
        g = _source(pb, self.kernel.n)[2] if kind == "linear" else 1.0
        return ProblemSpec(self.kernel, self.domain, kind=kind, g=g, p=pb.get("p"), index=pb["index"],
                           tol=pb["tol"], max_iter=pb["max_iter"], N=self.N, grading=self.grading,
                           params=self.params, grid=self.grid)

    def eigenpair(self):
        if self._pair is None:
            spec = self.spec("eigen")
            if self.problem["kind"] != "eigen":
                spec.index = 1
            self._pair = solve_eigen(spec, self.operator)
        return self._pair

    @property
    def solution(self):
        if self._u is None:
            kind = self.problem["kind"]
            if kind == "linear":
                self._u = solve_linear(self.spec(), self.operator)
            elif kind == "power":
                self._u = solve_power(self.spec(), self.operator)
            else:
                pair = self.eigenpair()
                self._u = pair.eigenfunction
                self.problem["eigenvalue"] = pair.eigenvalue
            self.solver_info = {k: v for k, v in self._u.info.items() if k != "objective_history"}
        return self._u

    def source(self):
        self.solution
        return _source(self.problem, self.kernel.n)[:2]

    def problem_record(self):
        keep = ("kind", "g", "p", "index", "tol", "max_iter", "eigenvalue")
        rec = {k: self.problem[k] for k in keep if k in self.problem}
        rec["quadrature"] = self.params.spec()
        return rec


# --- checks -------------------------------------------------------------------------------

def _identity_row(row, rep, tol):
    row.lhs, row.rhs_volume, row.rhs_boundary = rep.lhs_volume, rep.rhs_volume, rep.rhs_boundary
    row.residual_abs, row.residual_rel, row.tol = rep.residual_abs, rep.residual_rel, tol
    row.passed = bool(rep.residual_rel <= tol)
    return dict(rep.meta)


def _check_poh1(pt, c, row):
    f, _ = pt.source()
    rep = verify_poh1(pt.solution, pt.kernel, pt.domain, f, origin=c.get("origin"), operator=pt.operator,
                      solver_tol=pt.problem["tol"], m=pt.boundary_nodes, **pt.trace_kw)
    return _identity_row(row, rep, c.get("tol", DEFAULT_TOL["poh1"]))


def _check_poh2(pt, c, row):
    f, _ = pt.source()
    e = c.get("direction", [1.0] + [0.0] * (pt.kernel.n - 1))
    rep = verify_poh2(pt.solution, pt.kernel, pt.domain, f, e, operator=pt.operator,
                      solver_tol=pt.problem["tol"], m=pt.boundary_nodes, **pt.trace_kw)
    return _identity_row(row, rep, c.get("tol", DEFAULT_TOL["poh2"]))


def _check_f_form(pt, c, row):
    f, F = pt.source()
    if F is None:
        raise ParameterError("the f-form identity needs an autonomous source")
    rep = f_form_identity(pt.solution, pt.kernel, pt.domain, f, F, origin=c.get("origin"), operator=pt.operator,
                          solver_tol=pt.problem["tol"], m=pt.boundary_nodes, **pt.trace_kw)
    return _identity_row(row, rep, c.get("tol", DEFAULT_TOL["f_form"]))


def _check_trace(pt, c, row):
    Z = points_from_spec(pt.domain, pt.trace_points, pt.boundary_nodes)
    samples = [trace_quotient(pt.solution, pt.domain, z, pt.kernel.s, **pt.trace_kw) for z in Z]
    Q = np.array([t.value for t in samples])
    row.value = float(Q.mean())
    row.label = "; ".join(sorted({t.warning for t in samples if t.warning}))
    if "expected" in c:
        ex = float(c["expected"])
        row.residual_abs = float(np.max(np.abs(Q - ex)))
        row.residual_rel = row.residual_abs / abs(ex) if ex != 0 else row.residual_abs
        row.tol = c.get("tol", DEFAULT_TOL["trace"])
        row.passed = bool(row.residual_rel <= row.tol)
    return {"traces": Q.tolist(), "orders": [t.order for t in samples],
            "trace_rows": [{"z": t.z.tolist(), "Q_z": t.value, "fit_residual": t.fit_residual} for t in samples]}


def _check_regularity(pt, c, row):
    bq = pt.domain.boundary_nodes(pt.boundary_nodes or (2 if pt.kernel.n == 1 else 64))
    z = bq.nodes[c.get("point", 0) % bq.size]
    fit = regularity_probe(pt.solution, pt.domain, z, pt.kernel.s, radii=pt.radii)
    need = c.get("min_gamma", 0.5)
    row.value = fit.gamma_fit
    row.label = f"gamma >= {need:g}"
    row.residual_abs = row.residual_rel = max(0.0, need - fit.gamma_fit)
    row.tol = need
    row.passed = bool(fit.gamma_fit >= need)
    return {"z": z.tolist(), "radii": fit.radii.tolist(), "Q": fit.Q.tolist(),
            "deviation": fit.deviation.tolist(), "r_squared": fit.r_squared,
            "trace_rows": [{"z": z.tolist(), "gamma_fit": fit.gamma_fit, "r_squared": fit.r_squared}]}


def _lds_probes(domain, distances):
    bq = domain.boundary_nodes(2 if domain.n == 1 else 8)
    z, nu = bq.nodes[0], bq.normals[0]
    if max(distances) >= domain.inradius:
        raise ParameterError(f"probe distance {max(distances)} reaches beyond the inradius {domain.inradius}")
    return np.array([z - d * nu for d in distances])


def _check_lds(pt, c, row):
    P = _lds_probes(pt.domain, c.get("distances", LDS_DISTANCES))
    N, g = pt.N, pt.grading
    v1 = lds_bound_check(pt.kernel, pt.domain, P, N=N, grading=g, params=pt.params)
    v2 = lds_bound_check(pt.kernel, pt.domain, P, N=2 * N, grading=g, params=pt.params)
    row.lhs, row.value = v1, v2
    row.label = "max|L(d^s)| at N and 2N"
    row.residual_abs = abs(v2 - v1)
    row.residual_rel = row.residual_abs / max(abs(v1), abs(v2), 1e-300)
    row.tol = c.get("tol", DEFAULT_TOL["lds"])
    row.passed = bool(row.residual_rel <= row.tol)
    return {"probes": P.tolist()}


def _check_scaling(pt, c, row):
    ctr, rad = interior_ball(pt.domain)
    u = smooth_bump(ctr, rad)
    rng = np.random.default_rng(pt.cfg["seed"])
    m = c.get("probes", 3)
    # probes inside the inner 80% of the bump, direction and radius drawn from the seeded generator
    d = rng.standard_normal((m, pt.kernel.n))
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    P = ctr + d * (0.8 * rad * rng.random((m, 1)))
    rel = scaling_identity_residual(pt.kernel, u, P, params=pt.params, domain=_ball_domain(ctr, rad),
                                    relative=True)
    row.residual_rel = row.residual_abs = rel
    row.tol = c.get("tol", DEFAULT_TOL["scaling_identity"])
    row.passed = bool(rel <= row.tol)
    return {"probes": P.tolist()}


def _check_toy(pt, c, row):
    ctr, rad = interior_ball(pt.domain)
    u = smooth_bump(ctr, rad)
    lhs, rhs = compact_support_identity_residual(pt.kernel, u, pt.grid, params=pt.params)
    row.lhs, row.rhs_volume = lhs, rhs
    row.residual_abs = abs(lhs - rhs)
    scale = max(abs(lhs), abs(rhs))
    row.residual_rel = row.residual_abs / scale if scale > 0 else 0.0
    row.tol = c.get("tol", DEFAULT_TOL["toy_identity"])
    row.passed = bool(row.residual_rel <= row.tol)
    return {"center": ctr.tolist(), "radius": rad}


def _check_nonexistence(pt, c, row):
    v = nonexistence_verdict(pt.problem["p"], pt.kernel, pt.domain, origin=c.get("origin"))
    row.value, row.label = v.coefficient, v.sign_class
    row.rhs_boundary = v.boundary_term
    return {"p_critical": v.p_critical, "verdict": v.verdict, "star_margin": v.boundary_term}


def _check_unique_continuation(pt, c, row):
    pair = pt.eigenpair()
    mt = unique_continuation_check(pair, pt.domain, pt.kernel.s, m=pt.boundary_nodes, **pt.trace_kw)
    need = c.get("min_trace", 0.1)
    row.value, row.tol = mt, need
    row.label = f"eigenvalue {pair.eigenvalue!r}"
    row.residual_abs = row.residual_rel = max(0.0, need - mt)
    row.passed = bool(mt >= need)
    return {"eigenvalue": pair.eigenvalue, "eigen_residual": pair.residual}


CHECK_FUNCS = {"poh1": _check_poh1, "poh2": _check_poh2, "f_form": _check_f_form, "trace": _check_trace,
               "regularity": _check_regularity, "lds": _check_lds, "scaling_identity": _check_scaling,
               "toy_identity": _check_toy, "nonexistence": _check_nonexistence,
               "unique_continuation": _check_unique_continuation}


def run_checks(pt, checks, sweep_parameter="", sweep_value=None):
    rows, diag = [], []
    for c in checks:
        t = time.perf_counter()
        row = ReportRow(c["name"], N=int(pt.N), s=pt.kernel.s, p=pt.problem.get("p"),
                        sweep_parameter=sweep_parameter, sweep_value=sweep_value)
        try:
            meta = CHECK_FUNCS[c["name"]](pt, c, row)
        except FracpohError as exc:
            where = f"check {c['name']}" + (f" at {sweep_parameter} = {sweep_value}" if sweep_parameter else "")
            exc.args = (f"{where}: {exc.args[0] if exc.args else ''}",) + exc.args[1:]
            raise
        row.wall_time = time.perf_counter() - t
        rows.append(row)
        diag.append({"check": c["name"], "sweep_value": sweep_value, "meta": meta})
    return rows, diag


# --- run / sweep ----------------------------------------------------------------------------

def _solution_path(out_dir, prefix, tag):
    return os.path.join(out_dir, f"{prefix}{tag}.sol")


def _run_points(cfg, out_dir, save):
    sweep = cfg.get("sweep")
    points = [({}, "", None)] if sweep is None else \
        [({sweep["parameter"]: v}, sweep["parameter"], v) for v in sweep["values"]]
    rows, diags, sols = [], [], []
    for over, name, val in points:
        pt = Point(cfg, over)
        t = time.perf_counter()
        r, d = run_checks(pt, cfg["checks"], name, val)
        rows += r
        diags.append({"sweep_parameter": name, "sweep_value": val, "solver": pt.solver_info,
                      "checks": d, "wall_time": time.perf_counter() - t})
        if save and pt._u is not None:
            tag = "" if not name else f"-{name}{val:g}"
            path = _solution_path(out_dir, cfg["output"]["prefix"], tag)
            io.serialize_solution(pt.solution, path, pt.kernel, pt.problem_record())
            sols.append(path)
    return rows, diags, sols


def convergence_summary(rows, parameter):
    """Per check: residuals along the sweep and observed orders from successive log2 ratios."""
    out = {}
    for name in dict.fromkeys(r.check for r in rows):
        rr = [r for r in rows if r.check == name and r.residual_rel is not None]
        if len(rr) < 2:
            continue
        vals = [r.sweep_value for r in rr]
        res = np.array([r.residual_rel for r in rr], dtype=float)
        orders = []
        for a, b, va, vb in zip(res[:-1], res[1:], vals[:-1], vals[1:]):
            if a > 0 and b > 0:
                step = np.log2(vb / va) if parameter == "N" else 1.0
                orders.append(float(np.log2(a / b) / step))
            else:
                orders.append(None)
        entry = {"values": vals, "residual_rel": res.tolist(), "orders": orders}
        if parameter == "N" and res[0] > 0 and res[-1] > 0:
            entry["observed_order"] = float(np.log2(res[0] / res[-1]) / np.log2(vals[-1] / vals[0]))
        out[name] = entry
    for name in dict.fromkeys(r.check for r in rows if r.label and r.check == "nonexistence"):
        out.setdefault(name, {})["sign_class"] = [r.label for r in rows if r.check == name]
    return out


def run(cfg, out_dir=None, seed=None, write=True):
    """Execute a config (validated here); a sweep block runs one point per value."""
    cfg = validate(cfg)
    if seed is not None:
        cfg["seed"] = int(seed)
    out_dir = out_dir or cfg["output"]["dir"]
    rows, diags, sols = _run_points(cfg, out_dir, write and cfg["output"]["save_solution"])
    summary = convergence_summary(rows, cfg["sweep"]["parameter"]) if cfg.get("sweep") else {}
    paths = {"solutions": sols}
    if write:
        prefix = cfg["output"]["prefix"]
        paths["csv"] = os.path.join(out_dir, prefix + ".csv")
        paths["json"] = os.path.join(out_dir, prefix + ".json")
        io.atomic_write(paths["csv"], io.csv_bytes([asdict(r) for r in rows], CSV_COLUMNS))
        doc = {"config": cfg, "created": time.strftime("%Y-%m-%dT%H:%M:%S%z"),
               "passed": all(r.passed for r in rows), "rows": [asdict(r) for r in rows],
               "summary": summary, "points": diags}
        io.atomic_write(paths["json"], io.json_bytes(doc))
        trows = _trace_rows(diags)
        if trows:
            paths["trace_csv"] = os.path.join(out_dir, prefix + "_trace.csv")
            io.atomic_write(paths["trace_csv"], io.csv_bytes(trows, TRACE_COLUMNS))
    return RunResult(rows, summary, diags, paths)


def _trace_rows(diags):
    out = []
    for point in diags:
        for c in point["checks"]:
            for r in c["meta"].get("trace_rows", []):
                row = dict.fromkeys(TRACE_COLUMNS)
                row.update(r, check=c["check"], sweep_value=point["sweep_value"])
                row["z"] = " ".join(repr(float(v)) for v in r["z"])
                out.append(row)
    return out


def sweep(cfg, out_dir=None, seed=None, write=True):
    cfg = validate(cfg)
    if cfg.get("sweep") is None:
        raise ParameterError("sweep needs a sweep block (parameter and values)")
    return run(cfg, out_dir, seed, write)


def check_solution(path, checks, tol=None):
    """Run checks on a saved solution using the kernel and problem stored in its header."""
    u = io.load_solution(path)
    hdr = u.info
    if hdr.get("kernel") is None:
        raise ParameterError("solution file has no kernel spec")
    grid = u.grid
    prob = {k: v for k, v in hdr["problem"].items() if k not in ("eigenvalue", "quadrature")}
    cfg = validate({"kernel": hdr["kernel"],
                    "domain": grid.domain.spec() | {"grid": {"N": grid.N, "grading": grid.grading}},
                    "problem": prob, "quadrature": hdr["problem"].get("quadrature", {}),
                    "checks": [{"name": c} | ({"tol": tol} if tol is not None else {}) for c in checks]})
    pt = Point(cfg, {})
    pt.problem.update(hdr["problem"])
    pt._grid = grid
    pt._u = u
    if pt.problem["kind"] == "eigen" and "eigenvalue" not in pt.problem:
        raise ParameterError("eigen solution file has no eigenvalue")
    return run_checks(pt, cfg["checks"])[0]

