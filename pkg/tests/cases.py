"""Cached reference solutions shared by several test modules."""

from functools import lru_cache

from fracpoh.geometry import Ball, Interval
from fracpoh.kernel import Kernel
from fracpoh.solve import ProblemSpec, solve_eigen, solve_linear


@lru_cache(maxsize=None)
def interval_torsion(s=0.5, N=2048, a=-1.0, b=1.0):
    """(spec, u) for Lu = 1 on (a, b) with the fractional kernel."""
    spec = ProblemSpec(Kernel.fractional(1, s), Interval(a, b), "linear", g=1.0, N=N)
    return spec, solve_linear(spec)


@lru_cache(maxsize=None)
def disk_torsion(s=0.75, N=64):
    spec = ProblemSpec(Kernel.fractional(2, s), Ball(), "linear", g=1.0, N=N)
    return spec, solve_linear(spec)


@lru_cache(maxsize=None)
def interval_eigen(s=0.5, N=2048, index=1):
    spec = ProblemSpec(Kernel.fractional(1, s), Interval(-1, 1), "eigen", index=index, N=N)
    return spec, solve_eigen(spec)
