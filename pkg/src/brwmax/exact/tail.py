"""Exact tail table of the maximal displacement.

``u(n) = P(M >= n)`` solves ``u(n) = sum_y a_y Q(u(n - y))`` for ``n >= 1``
with ``u(j) = 1`` for ``j <= 0``. We work with the scaled unknown
``ell(n) = rho^n u(n)``, which stays of order one, so the tolerance is
meaningful at every level rather than only where ``u`` is large.

In scaled form the fixed-point map reads

    ell(n) = sum_y a_y rho^y ell(n - y) Q(u(n - y)) / u(n - y)

and, since ``Q(s)/s`` is nonincreasing, ``F(ell) = ell - T(ell)`` is convex
with an M-matrix Jacobian. Newton steps from above and Fourier steps from
below (both using the Jacobian at the upper iterate) give a shrinking
two-sided bracket that converges quadratically. Beyond the horizon the
closure ``u = 0`` is used; it biases the table low near the horizon only,
and the report window stops well short of it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import solve_banded

from ..errors import ConfigurationError, ConvergenceError, ModeError
from ..model import SUBCRITICAL, ModelSpec, decay_constant, lower_decay_constant

MIN_TOL = 1e-13
ROUNDING_NOISE = 1e-13


@dataclass
class TailTable:
    """Solved tail ``u(n) = P(M >= n)`` for ``n = 0..horizon``.

    Only ``n <= report_limit`` is certified; values above it are kept for
    diagnostics. ``ell``, ``lower`` and ``upper`` are on the scaled level
    ``rho^n u(n)``; ``bracket_gap`` and ``residual`` are maxima over the
    report window on that scale (the same bounds hold a fortiori for ``u``).
    """

    values: np.ndarray
    log_values: np.ndarray
    ell: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    residual: np.ndarray
    horizon: int
    report_limit: int
    tolerance: float
    bracket_gap: float
    iterations: int
    rho: float
    m: float
    gap_history: list = field(default_factory=list)
    contraction_ratios: list = field(default_factory=list)
    monotone_iterates: bool = True
    doubling_change: float | None = None

    @property
    def max_residual(self) -> float:
        return float(self.residual[1:self.report_limit + 1].max(initial=0.0))

    def u(self, n: int) -> float:
        if n <= 0:
            return 1.0
        if n > self.horizon:
            return 0.0
        return float(self.values[n])

    def window(self) -> np.ndarray:
        return self.values[: self.report_limit + 1]

    def u_residual(self) -> np.ndarray:
        """Equation residual on the probability scale."""
        n = np.arange(self.horizon + 1)
        return self.residual * np.exp(-n * math.log(self.rho))


class _ScaledMap:
    """The scaled fixed-point map and its Jacobian for one model and horizon."""

    def __init__(self, model: ModelSpec, rho: float, horizon: int):
        jump, off = model.jump, model.offspring
        self.N = horizon
        self.offsets = jump.offsets_array
        self.probs = jump.probs_array
        self.right = jump.right_range
        self.left = jump.left_range
        self.survive = 1.0 - off.probs[0]
        self.ratio_coef = off.tail_sums
        self.deriv_coef = off.derivative_coefficients
        self.log_rho = math.log(rho)
        n = np.arange(horizon + 1)
        self.n = n
        self.scale = np.exp(-n * self.log_rho)
        self.weights = self.probs * np.exp(self.offsets * self.log_rho)

    def to_u(self, ell):
        return np.clip(ell * self.scale, 0.0, 1.0)

    def apply(self, ell: np.ndarray) -> np.ndarray:
        N = self.N
        u = self.to_u(ell)
        ratio = np.polynomial.polynomial.polyval(1.0 - u, self.ratio_coef)
        term = ell * ratio
        out = np.zeros(N + 1)
        for y, w, a in zip(self.offsets, self.weights, self.probs):
            lo_n = max(1, y + 1)
            hi_n = min(N, N + y)
            if lo_n <= hi_n:
                out[lo_n:hi_n + 1] += w * term[lo_n - y:hi_n - y + 1]
            # sources at or below the origin, where u = 1
            for n in range(1, min(N, y) + 1):
                out[n] += a * math.exp(n * self.log_rho) * self.survive
        out[0] = 1.0
        return out

    def residual(self, ell: np.ndarray) -> np.ndarray:
        r = ell - self.apply(ell)
        r[0] = 0.0
        return r

    def jacobian_banded(self, ell: np.ndarray) -> np.ndarray:
        """``I - T'(ell)`` on unknowns ``ell[1..N]`` in LAPACK band storage."""
        N = self.N
        u = self.to_u(ell)[1:]
        slope = np.polynomial.polynomial.polyval(1.0 - u, self.deriv_coef)
        L, R = self.left, self.right
        band = np.zeros((L + R + 1, N))
        band[L, :] = 1.0
        rows = np.arange(N)
        for y, w in zip(self.offsets, self.weights):
            cols = rows - y
            ok = (cols >= 0) & (cols < N)
            band[L + rows[ok] - cols[ok], cols[ok]] -= w * slope[cols[ok]]
        return band

    def solve(self, band: np.ndarray, rhs: np.ndarray) -> np.ndarray:
        return solve_banded((self.right, self.left), band, rhs)


def _bracket(model: ModelSpec, rho: float, horizon: int, tol: float, max_iter: int):
    tm = _ScaledMap(model, rho, horizon)
    N = horizon
    upper = np.ones(N + 1)
    lower = np.zeros(N + 1)
    lower[0] = 1.0
    gaps, ratios = [], []
    monotone = True
    prev_change = None
    slack = 64 * np.finfo(float).eps
    for it in range(1, max_iter + 1):
        band = tm.jacobian_banded(upper)
        rhs = np.stack([tm.residual(upper)[1:], tm.residual(lower)[1:]], axis=1)
        step = tm.solve(band, rhs)
        new_upper = upper.copy()
        new_lower = lower.copy()
        new_upper[1:] -= step[:, 0]
        new_lower[1:] -= step[:, 1]
        if np.any(new_upper > upper + slack * (1 + upper)) or np.any(new_lower < lower - slack * (1 + lower)):
            monotone = False
        change = float(np.max(np.abs(new_upper - upper) * tm.scale))
        if prev_change is not None and prev_change > ROUNDING_NOISE:
            ratios.append(change / prev_change)
        prev_change = change
        upper, lower = new_upper, new_lower
        gap = float(np.max(np.abs(upper - lower)))
        gaps.append(gap)
        if gap <= tol and change <= tol:
            return tm, lower, upper, gaps, ratios, monotone, it
        if len(gaps) >= 4 and gap >= 0.9 * gaps[-2]:
            if gap <= tol:
                return tm, lower, upper, gaps, ratios, monotone, it
            raise ConvergenceError(f"tail bracket stagnated at gap {gap:.3g} > tol {tol:.3g}", last_gap=gap)
    raise ConvergenceError(f"tail bracket did not close within {max_iter} iterations", last_gap=gaps[-1])


def report_margin(model: ModelSpec, tol: float) -> int:
    """Levels below the horizon left out of the report window.

    The closure error introduced at the horizon decays into the table like
    ``(rho_lower / rho)^distance`` on the scaled level, where ``rho_lower``
    is the root of ``K = 1/m`` below 1. Twice the distance needed to reach
    ``tol`` plus two jump widths keeps it well clear of the window.
    """
    jump = model.jump
    rho = decay_constant(jump, 1.0 / model.m)
    rho_low = lower_decay_constant(jump, 1.0 / model.m)
    decay = math.log(rho / rho_low)
    return math.ceil(2.0 * math.log(1.0 / tol) / decay) + 2 * (jump.left_range + jump.right_range)


def min_horizon(model: ModelSpec) -> int:
    return 4 * (model.jump.left_range + model.jump.right_range)


def solve_tail(model: ModelSpec, horizon: int, tol: float = 1e-12, *, validate: bool = True,
               max_iter: int = 60) -> TailTable:
    """Solve for ``u(n) = P(M >= n)``, ``0 <= n <= horizon``.

    The returned table is certified on ``[0, report_limit]``: the bracket
    there is narrower than ``tol`` on the scaled level, and (when
    ``validate``) re-solving with twice the horizon moves no value by more
    than ``tol``. If the doubled solve disagrees further out, the report
    window is shortened to the agreeing prefix.
    """
    if model.mode != SUBCRITICAL:
        raise ModeError("the tail solver needs a subcritical model")
    horizon = int(horizon)
    if horizon < min_horizon(model):
        raise ConfigurationError(
            f"horizon {horizon} is below the minimum 4*(L+R) = {min_horizon(model)}")
    if not tol >= MIN_TOL:
        raise ConfigurationError(f"tol must be at least {MIN_TOL:g}, got {tol}")
    margin = report_margin(model, tol)
    report_limit = horizon - margin
    if report_limit < 1:
        raise ConfigurationError(
            f"horizon {horizon} is too small for tol {tol:g}: needs more than {margin} levels")

    rho = decay_constant(model.jump, 1.0 / model.m)
    tm, lower, upper, gaps, ratios, monotone, iters = _bracket(model, rho, horizon, tol, max_iter)
    ell = 0.5 * (lower + upper)
    lo = np.minimum(lower, upper)
    hi = np.maximum(lower, upper)

    doubling_change = None
    if validate:
        _, lo2, hi2, *_ = _bracket(model, rho, 2 * horizon, tol, max_iter)
        ell2 = 0.5 * (lo2 + hi2)[: horizon + 1]
        diff = np.abs(ell2 - ell)
        doubling_change = float(diff[: report_limit + 1].max())
        if doubling_change > tol:
            bad = np.nonzero(diff > tol)[0]
            report_limit = int(bad[0]) - 1
            if report_limit < 1:
                raise ConvergenceError("horizon doubling moved the table at every level",
                                       last_gap=doubling_change)
            doubling_change = float(diff[: report_limit + 1].max())

    log_u = np.full(horizon + 1, -np.inf)
    pos = ell > 0
    log_u[pos] = np.log(ell[pos]) - tm.n[pos] * tm.log_rho
    values = np.exp(log_u)
    values[0] = 1.0
    residual = np.abs(tm.residual(ell))
    return TailTable(
        values=values, log_values=log_u, ell=ell, lower=lo, upper=hi, residual=residual,
        horizon=horizon, report_limit=report_limit, tolerance=tol,
        bracket_gap=float((hi - lo)[: report_limit + 1].max()), iterations=iters, rho=rho,
        m=model.m, gap_history=gaps, contraction_ratios=ratios, monotone_iterates=monotone,
        doubling_change=doubling_change)


@dataclass
class ScaledTail:
    """``rho^n u(n)`` over the report window, with any level exceeding the
    a-priori bound ``1 + 10 tol rho^n`` listed as a solver fault."""

    values: np.ndarray
    faults: list


def scaled_tail(table: TailTable, rho: float) -> ScaledTail:
    if abs(rho - table.rho) > 1e-12 * table.rho:
        raise ConfigurationError(
            f"rho {rho!r} does not belong to this table (solved with {table.rho!r})")
    n = np.arange(table.report_limit + 1)
    ell = table.ell[: table.report_limit + 1].copy()
    with np.errstate(over="ignore"):
        bound = 1.0 + 10.0 * table.tolerance * np.exp(n * math.log(rho))
    faults = [int(k) for k in np.nonzero(ell > bound)[0]]
    return ScaledTail(ell, faults)
