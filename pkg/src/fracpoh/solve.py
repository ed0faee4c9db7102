"""Linear, power-nonlinearity and eigenvalue solvers for the discrete operator."""

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import LinAlgWarning, cho_factor, cho_solve, lu_factor, lu_solve, norm, qr
from scipy.linalg.lapack import dgecon
from scipy.sparse.linalg import LinearOperator, gmres

from .errors import IterationError, NumericalError, ParameterError, SupercriticalError
from .geometry import build_grid
from .kernel import critical_exponent
from .nonlocal_op import DEFAULT_QUAD, GridFunction, assemble

KINDS = ("linear", "power", "eigen")
RCOND_MIN = 1e-14
ITERATIVE_THRESHOLD = 10000      # unknowns above which solve_linear switches to GMRES


@dataclass(eq=False)
class ProblemSpec:
    """Kernel, domain, discretization and problem data.

    kind "linear" solves Mu = g (g a constant or a callable on points (m, n)),
    "power" solves Mu = |u|^(p-1) u with u >= 0 nontrivial, "eigen" returns
    the index-th smallest eigenpair.
    """

    kernel: object
    domain: object
    kind: str = "linear"
    g: object = 1.0
    p: float = None
    index: int = 1
    tol: float = 1e-8
    max_iter: int = 500
    N: int = 256
    grading: float = 2.0
    params: object = DEFAULT_QUAD
    grid: object = None
    _op: object = field(default=None, init=False, repr=False)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ParameterError(f"problem kind must be one of {KINDS}, got {self.kind!r}")
        if self.kernel.n != self.domain.n:
            raise ParameterError("kernel and domain dimensions differ")
        if self.kind == "power":
            if self.p is None or not self.p > 1:
                raise ParameterError(f"power problems need p > 1, got {self.p!r}")
        if self.kind == "eigen" and (int(self.index) != self.index or self.index < 1):
            raise ParameterError(f"eigen index must be a positive integer, got {self.index!r}")
        if not self.tol > 0 or int(self.max_iter) < 1:
            raise ParameterError("tol must be positive and max_iter at least 1")
        if self.grid is None:
            self.grid = build_grid(self.domain, self.N, self.grading)

    @property
    def subcritical(self):
        """p below (n+2s)/(n-2s); always true when n <= 2s."""
        return self.p is None or self.p < critical_exponent(self.kernel.n, self.kernel.s)

    def operator(self):
        if self._op is None:
            self._op = assemble(self.kernel, self.grid, self.params)
        return self._op

    def with_operator(self, op):
        if op.grid is not self.grid:
            raise ParameterError("operator was assembled on a different grid")
        self._op = op
        return self


def _rhs_values(g, grid):
    if callable(g):
        v = np.asarray(g(grid.nodes), dtype=float).reshape(-1)
    else:
        v = np.full(grid.size, float(g))
    if v.size != grid.size or not np.all(np.isfinite(v)):
        raise ParameterError("right-hand side must be finite at every node")
    return v


# --- linear -------------------------------------------------------------------

def factorize(M):
    """LU factors with a LAPACK 1-norm reciprocal condition estimate."""
    with warnings.catch_warnings():
        # singularity is reported below through the condition estimate
        warnings.simplefilter("ignore", LinAlgWarning)
        lu, piv = lu_factor(M, check_finite=False)
    rcond, info = dgecon(lu, norm(M, 1), norm="1")
    if info != 0 or not rcond >= RCOND_MIN:
        raise NumericalError(f"operator matrix is singular or ill-conditioned (rcond {rcond:.2e})",
                             condition=1.0 / rcond if rcond > 0 else np.inf)
    return lu, piv, float(rcond)


def solve_linear(spec, operator=None):
    """u with Mu = g at the nodes (exterior values zero by construction)."""
    if operator is not None:
        spec.with_operator(operator)
    M = spec.operator().matrix
    g = _rhs_values(spec.g, spec.grid)
    gscale = max(1.0, float(np.max(np.abs(g))))
    info = {"method": "lu"}
    if M.shape[0] > ITERATIVE_THRESHOLD:
        u, info = _gmres(M, g, spec.tol * gscale, spec.max_iter)
    else:
        lu, piv, rcond = factorize(M)
        u = lu_solve((lu, piv), g)
        r = g - M @ u
        if np.max(np.abs(r)) > spec.tol * gscale:
            u = u + lu_solve((lu, piv), r)          # one step of iterative refinement
        info["rcond"] = rcond
    res = float(np.max(np.abs(M @ u - g)))
    info["residual"] = res
    if res > spec.tol * gscale:
        raise IterationError(f"linear residual {res:.2e} above tolerance", residual=res)
    return GridFunction(spec.grid, u, info=info)


def _gmres(M, g, atol, max_iter):
    d = np.diag(M)
    pre = LinearOperator(M.shape, matvec=lambda v: v / d)
    u, code = gmres(M, g, rtol=0.0, atol=atol, restart=200, maxiter=max_iter, M=pre)
    if code != 0:
        res = float(np.max(np.abs(M @ u - g)))
        raise IterationError(f"GMRES stopped after {max_iter} cycles", residual=res, iterations=max_iter)
    return u, {"method": "gmres"}


# --- power nonlinearity ---------------------------------------------------------

def solve_power(spec, operator=None, init=None, descent_tol=1e-9):
    """Nonnegative nontrivial u with Mu = u^p, via constrained minimization.

    Minimizes Q(u) = 1/2 <u, Mu>_w subject to sum w |u|^(p+1) = 1 by projected
    gradient descent in the energy inner product of the symmetric part of WM
    (step 1 is the normalized fixed-point map u <- M^-1 u^p; Armijo backtracking
    keeps Q non-increasing), rescales by the Lagrange multiplier and finishes
    with Newton on Mu = |u|^(p-1) u.
    """
    if spec.kind != "power":
        raise ParameterError("solve_power needs a power problem")
    n, s, p = spec.kernel.n, spec.kernel.s, float(spec.p)
    pc = critical_exponent(n, s)
    if p >= pc:
        raise SupercriticalError(
            f"p = {p} is not subcritical; the critical exponent (n+2s)/(n-2s) is {pc:.6g}", p_critical=pc)
    if operator is not None:
        spec.with_operator(operator)
    op = spec.operator()
    M = op.matrix
    w = spec.grid.weights
    WM = w[:, None] * M
    A = 0.5 * (WM + WM.T)
    chol = cho_factor(A)

    def constraint(u):
        return float(np.sum(w * np.abs(u) ** (p + 1)))

    def normalize(u):
        return u / constraint(u) ** (1 / (p + 1))

    if init is None:
        tors = ProblemSpec(spec.kernel, spec.domain, "linear", g=1.0, tol=1e-8,
                           grid=spec.grid, params=spec.params).with_operator(op)
        init = solve_linear(tors).values
    elif isinstance(init, GridFunction):
        init = init.values
    u = normalize(np.asarray(init, dtype=float))
    Q = 0.5 * u @ A @ u
    history = [Q]
    converged = False
    for it in range(spec.max_iter):
        g = w * np.abs(u) ** (p - 1) * u
        z = cho_solve(chol, g)
        zz = float(z @ g)
        d = u - z / zz                          # A-gradient of Q projected on the constraint tangent
        dAd = max(2 * Q - 1 / zz, 0.0)
        if np.sqrt(dAd) <= descent_tol * np.sqrt(2 * Q):
            converged = True
            break
        tau = 1.0
        while True:
            v = normalize(u - tau * d)
            Qv = 0.5 * v @ A @ v
            if Qv <= Q - 1e-4 * tau * dAd:
                break
            tau *= 0.5
            if tau < 1e-12:
                break
        if Qv > Q:
            break                               # no descent possible at rounding level
        u, Q = v, Qv
        history.append(Q)
    lam = 2 * Q
    v = lam ** (1 / (p - 1)) * u
    v, res, newton_its = _newton_power(M, v, p, spec.tol, 50)
    if v.max() < -v.min():
        v = -v
    info = {"descent_iterations": len(history) - 1, "descent_converged": converged,
            "objective_history": history, "multiplier": lam, "newton_iterations": newton_its,
            "residual": res}
    if res > spec.tol:
        raise IterationError(f"power solve residual {res:.2e} above tolerance", residual=res,
                             iterations=newton_its)
    if np.max(v) <= 0:
        raise IterationError("power solve collapsed to the trivial solution", residual=res)
    return GridFunction(spec.grid, v, info=info)


def _newton_power(M, v, p, tol, max_iter):
    res = np.inf
    for k in range(max_iter):
        F = M @ v - np.abs(v) ** (p - 1) * v
        res = float(np.max(np.abs(F)))
        if res <= tol:
            return v, res, k
        J = M - np.diag(p * np.abs(v) ** (p - 1))
        v = v - np.linalg.solve(J, F)
    F = M @ v - np.abs(v) ** (p - 1) * v
    return v, float(np.max(np.abs(F))), max_iter


# --- eigenpairs -------------------------------------------------------------------

@dataclass
class EigenPair:
    eigenvalue: float
    eigenfunction: GridFunction
    residual: float
    iterations: int


def weighted_norm(grid, v):
    return float(np.sqrt(np.sum(grid.weights * v * v)))


def solve_eigen(spec, operator=None, block_extra=3, eig_tol=1e-10):
    """index-th smallest eigenpair of M.

    Block inverse iteration with Rayleigh-Ritz deflation of the lower modes
    locates the eigenvalue; shifted inverse iteration at the Ritz value then
    refines the pair until ||M phi - lam phi||_w <= eig_tol |lam|.  phi has unit
    weighted L2 norm and a positive maximum entry.
    """
    if spec.kind != "eigen":
        raise ParameterError("solve_eigen needs an eigen problem")
    if operator is not None:
        spec.with_operator(operator)
    M = spec.operator().matrix
    grid = spec.grid
    k = int(spec.index)
    n = M.shape[0]
    if k > n:
        raise ParameterError(f"index {k} exceeds the number of unknowns {n}")
    b = min(n, k + block_extra)
    lu, piv, _ = factorize(M)
    rng = np.random.default_rng(12345)
    V = rng.standard_normal((n, b))
    V[:, 0] = 1.0
    V, _ = qr(V, mode="economic")
    prev = np.inf
    lam = None
    for it in range(spec.max_iter):
        V, _ = qr(lu_solve((lu, piv), V), mode="economic")
        H = V.T @ M @ V
        vals, vecs = np.linalg.eig(H)
        order = np.argsort(vals.real)
        lam = vals[order[k - 1]]
        if abs(lam - prev) <= 1e-6 * abs(lam):
            break
        prev = lam
    if abs(lam.imag) > 1e-8 * abs(lam):
        raise NumericalError(f"eigenvalue {k} is not real ({lam})")
    x = (V @ vecs[:, order[k - 1]]).real
    sigma = float(lam.real)
    lam, phi, res, its = _shifted_inverse(M, x, sigma, grid, eig_tol, spec.max_iter)
    if res > eig_tol * abs(lam):
        raise IterationError(f"eigen residual {res:.2e} above tolerance", residual=res, iterations=its)
    if lam <= 0:
        raise NumericalError(f"computed eigenvalue {lam} is not positive")
    return EigenPair(float(lam), GridFunction(grid, phi, info={"residual": res}), float(res), it + its)


def _shifted_inverse(M, x, sigma, grid, tol, max_iter):
    n = M.shape[0]
    # nudge the shift off the eigenvalue so the shifted matrix stays factorizable
    shift = sigma * (1 - 1e-9)
    lu, piv = lu_factor(M - shift * np.eye(n), check_finite=False)
    lam, res = sigma, np.inf
    for it in range(1, max_iter + 1):
        x = lu_solve((lu, piv), x)
        x /= weighted_norm(grid, x)
        Mx = M @ x
        lam = float(np.sum(grid.weights * x * Mx))
        res = weighted_norm(grid, Mx - lam * x)
        if res <= tol * abs(lam):
            break
    if x.max() < -x.min():
        x = -x
    return lam, x, res, it


# --- energy -------------------------------------------------------------------------

def energy(kernel, domain, u, F, operator=None):
    """Discrete energy 1/2 <u, Mu>_w - sum_i w_i F(u_i).

    <a, b>_w = sum_i w_i a_i b_i.  Only the symmetric part of WM enters the
    quadratic form, so the exact gradient is energy_gradient below; it reduces
    to Mu - f(u) when WM is symmetric.
    """
    grid = u.grid
    if kernel.n != domain.n or grid.n != domain.n:
        raise ParameterError("kernel, domain and grid dimensions differ")
    v = u.values
    if not np.any(v):
        return 0.0
    M = (operator if operator is not None else assemble(kernel, grid)).matrix
    w = grid.weights
    Fv = np.asarray(F(v), dtype=float) * np.ones_like(v)
    return float(0.5 * np.sum(w * v * (M @ v)) - np.sum(w * Fv))


def energy_gradient(u, f, operator):
    """Gradient of energy() in the w-inner product: W^-1 (WM + M^T W)/2 u - f(u)."""
    w = u.grid.weights
    M = operator.matrix
    v = u.values
    sym = 0.5 * (M @ v + (M.T @ (w * v)) / w)
    return sym - np.asarray(f(v), dtype=float) * np.ones_like(v)


def barrier_constant(u, domain, s):
    """max_i |u_i| / dist(x_i)^s, the constant C of the barrier |u| <= C d^s."""
    d = domain.exact_distance(u.grid.nodes)
    return float(np.max(np.abs(u.values) / d**s))
