"""Bracketing root finders used for decay constants, tilts and fixed points."""

from __future__ import annotations

import math
from typing import Callable

from .errors import ConvergenceError

_EPS = 2.220446049250313e-16


def bisect(f: Callable[[float], float], lo: float, hi: float, xtol: float = 1e-14,
           maxiter: int = 400) -> float:
    """Locate a sign change of ``f`` in ``[lo, hi]`` by plain bisection.

    ``f(lo)`` and ``f(hi)`` must have opposite signs (zero counts as either).
    Returns the midpoint of the final bracket, whose width is at most ``xtol``
    or a few ulps, whichever is larger.
    """
    flo = f(lo)
    if flo == 0.0:
        return lo
    fhi = f(hi)
    if fhi == 0.0:
        return hi
    if (flo > 0) == (fhi > 0):
        raise ConvergenceError(f"no sign change on [{lo}, {hi}]")
    for _ in range(maxiter):
        mid = 0.5 * (lo + hi)
        if hi - lo <= max(xtol, 4 * _EPS * abs(mid)) or mid in (lo, hi):
            return mid
        fm = f(mid)
        if fm == 0.0:
            return mid
        if (fm > 0) == (flo > 0):
            lo, flo = mid, fm
        else:
            hi = mid
    raise ConvergenceError(f"bisection did not reach width {xtol}", last_gap=hi - lo)


def newton_bracketed(f: Callable[[float], float], fprime: Callable[[float], float],
                     lo: float, hi: float, maxiter: int = 200) -> float:
    """Safeguarded Newton iteration for an increasing function on ``[lo, hi]``.

    Requires ``f(lo) < 0 < f(hi)``. Newton steps that leave the bracket or fail
    to halve it are replaced by bisection steps, so the method converges
    globally and quadratically near the root. Stops once the step has shrunk
    to rounding level or the bracket collapses; callers check the residual.
    """
    x = 0.5 * (lo + hi)
    width_prev = hi - lo
    for _ in range(maxiter):
        fx = f(x)
        if fx == 0.0:
            return x
        if fx < 0:
            lo = x
        else:
            hi = x
        d = fprime(x)
        step = fx / d if d > 0 else math.inf
        cand = x - step
        if not (lo < cand < hi) or abs(step) > 0.5 * width_prev:
            cand = 0.5 * (lo + hi)
            step = x - cand
        width_prev = abs(step)
        x = cand
        if abs(step) <= 4 * _EPS * abs(x):
            return x
        if hi - lo <= 4 * _EPS * abs(x):
            return x
    raise ConvergenceError("safeguarded Newton did not converge", last_gap=hi - lo)
