"""Turning tables and estimates into quantitative statements.

Decay-rate fits, limit diagnostics for the scaled tail, phase scans of
``rho^(cn) P(M_n >= cn)``, exact-versus-simulation reconciliation and the
supercritical duality report.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import linregress

from .errors import ConfigurationError, DomainError, ModeError
from .exact.nearest import single_lineage_reach_prob
from .exact.tail import TailTable, solve_tail
from .model import (
    SUBCRITICAL,
    ModelSpec,
    decay_constant,
    dual_offspring,
    extinction_probability,
    offspring_pgf_derivative,
)
from .simulate.engine import SimConfig
from .simulate.estimators import Estimate, estimate_g_grid, level_for, simulate_conditioned_on_extinction

SLOPE_TOL = 0.005
OSCILLATION_FLOOR = 1e-9
PLATEAU_LOW, PLATEAU_HIGH = 0.5, 1.05


@dataclass
class RateFit:
    """Least-squares line through ``(n, log u(n))`` over ``window``."""

    slope: float
    intercept: float
    stderr_slope: float
    window: tuple
    target: float
    gap: float
    max_abs_residual: float
    oscillating: bool


def fit_decay_rate(levels, log_values, window=None, target: float | None = None) -> RateFit:
    """Fit ``log u(n) ~ intercept + slope n``.

    ``target`` is the expected decay rate ``log rho``; ``gap`` is
    ``|-slope - target|``. Residuals beyond a 1e-9 floor mark the tail as
    oscillating (a walk confined to a sublattice produces a staircase).
    """
    levels = np.asarray(levels, dtype=float)
    logs = np.asarray(log_values, dtype=float)
    if window is not None:
        lo, hi = window
        keep = (levels >= lo) & (levels <= hi)
        levels, logs = levels[keep], logs[keep]
    if levels.size < 8:
        raise DomainError(f"need at least 8 points for a rate fit, got {levels.size}")
    if not np.all(np.isfinite(logs)):
        raise DomainError("tail values in the fit window must be positive")
    fit = linregress(levels, logs)
    resid = logs - (fit.intercept + fit.slope * levels)
    worst = float(np.max(np.abs(resid)))
    tgt = math.nan if target is None else float(target)
    gap = abs(-fit.slope - tgt) if target is not None else math.nan
    return RateFit(float(fit.slope), float(fit.intercept), float(fit.stderr),
                   (int(levels[0]), int(levels[-1])), tgt, gap, worst, worst > OSCILLATION_FLOOR)


def fit_table(table: TailTable, window=None) -> RateFit:
    n = np.arange(table.report_limit + 1)
    if window is None:
        window = (max(1, table.report_limit // 2), table.report_limit)
    return fit_decay_rate(n, table.log_values[: table.report_limit + 1], window,
                          math.log(table.rho))


@dataclass
class KappaEstimate:
    """Diagnostic for the limit of ``rho^n u(n)``.

    ``kappa`` is the last certified value; ``half_width`` the range over the
    last ``2R`` points; ``drift`` the change between the means of the last
    two such blocks. A range more than ten times the drift (and above a
    rounding floor) means the sequence oscillates instead of settling.
    """

    kappa: float
    oscillating: bool
    half_width: float
    drift: float


def kappa_estimate(ell_values, right_range: int = 1) -> KappaEstimate:
    ell = np.asarray(ell_values, dtype=float)
    span = 2 * max(1, int(right_range))
    if ell.size < 2 * span:
        raise DomainError(f"need at least {2 * span} values, got {ell.size}")
    last = ell[-span:]
    prev = ell[-2 * span:-span]
    half_width = float(last.max() - last.min())
    drift = float(abs(last.mean() - prev.mean()))
    oscillating = half_width > 10.0 * drift and half_width > OSCILLATION_FLOOR
    return KappaEstimate(float(ell[-1]), oscillating, half_width, drift)


# --------------------------------------------------------------------------
# phase scan


EXACT_SPECIAL = "exact-special"
MONTE_CARLO = "monte-carlo"


@dataclass
class PhaseScan:
    c_grid: list
    n_grid: list
    g_values: np.ndarray
    stderr: np.ndarray
    classification: dict
    slopes: dict
    reference_threshold: float | None
    route: str
    slope_tol: float = SLOPE_TOL

    def bracket(self):
        """``(largest plateau c, smallest decay c)`` bracketing the threshold."""
        plateau = [c for c in self.c_grid if self.classification[c] == "plateau"]
        decay = [c for c in self.c_grid if self.classification[c] == "decay"]
        return (max(plateau) if plateau else None, min(decay) if decay else None)


def is_single_lineage_simple_walk(model: ModelSpec) -> bool:
    jump, off = model.jump, model.offspring
    return (jump.offsets == (-1, 1) and abs(jump.probs[0] - 0.5) < 1e-12
            and off.max_children == 1 and model.mode == SUBCRITICAL)


def classify(g_row, n_grid, slope_tol: float = SLOPE_TOL):
    """Plateau, decay or inconclusive from the trend of ``g`` over ``n``.

    plateau: mean of the last third lies in ``[0.5 * mean of first third,
    1.05]`` and the slope of ``log g`` is within ``+-slope_tol``;
    decay: the slope is below ``-slope_tol``.
    """
    g = np.asarray(g_row, dtype=float)
    n = np.asarray(n_grid, dtype=float)
    k = max(1, len(g) // 3)
    first, last = g[:k].mean(), g[-k:].mean()
    if np.any(g <= 0):
        slope = -math.inf if g[-1] <= 0 else math.nan
    else:
        slope = float(linregress(n, np.log(g)).slope) if len(g) > 1 else math.nan
    if math.isfinite(slope) and abs(slope) <= slope_tol and PLATEAU_LOW * first <= last <= PLATEAU_HIGH:
        return "plateau", slope
    if slope < -slope_tol:
        return "decay", slope
    return "inconclusive", slope


def exact_special_g(m: float, c: float, n: int) -> float:
    level = level_for(c, n)
    rho = (1.0 + math.sqrt(1.0 - m * m)) / m
    return math.exp(c * n * math.log(rho)) * single_lineage_reach_prob(m, n, level)


def phase_scan(model: ModelSpec, c_grid, n_grid, route: str = EXACT_SPECIAL,
               config: SimConfig | None = None) -> PhaseScan:
    c_grid = [float(c) for c in c_grid]
    n_grid = [int(n) for n in n_grid]
    g = np.zeros((len(c_grid), len(n_grid)))
    se = np.zeros_like(g)
    special = is_single_lineage_simple_walk(model)
    if route == EXACT_SPECIAL:
        if not special:
            raise ConfigurationError("the exact route needs the single-lineage simple-walk model")
        for i, c in enumerate(c_grid):
            for j, n in enumerate(n_grid):
                g[i, j] = exact_special_g(model.m, c, n)
    elif route == MONTE_CARLO:
        if config is None:
            raise ConfigurationError("the Monte Carlo route needs a SimConfig")
        est = estimate_g_grid(model, c_grid, n_grid, config)
        for i, c in enumerate(c_grid):
            for j, n in enumerate(n_grid):
                g[i, j] = est[(c, n)].point
                se[i, j] = est[(c, n)].stderr
    else:
        raise ConfigurationError(f"unknown route {route!r}")
    classes, slopes = {}, {}
    for i, c in enumerate(c_grid):
        classes[c], slopes[c] = classify(g[i], n_grid)
    ref = math.sqrt(1.0 - model.m ** 2) if special else None
    return PhaseScan(c_grid, n_grid, g, se, classes, slopes, ref, route)


# --------------------------------------------------------------------------
# reconciliation


@dataclass
class Reconciliation:
    z: dict
    within2: float
    within4: float
    exact_matches: list
    excluded: dict = field(default_factory=dict)

    @property
    def count(self) -> int:
        return len(self.z)


def reconcile(table: TailTable, estimates: dict) -> Reconciliation:
    """z-scores ``(estimate - u(n)) / stderr`` per level.

    Levels outside the certified window are excluded with a note; levels
    whose estimate has zero standard error are checked for exact equality
    instead.
    """
    z, exact, excluded = {}, [], {}
    for n, est in sorted(estimates.items()):
        if n > table.report_limit:
            excluded[n] = f"level {n} outside certified window 0..{table.report_limit}"
            continue
        val = est.z_against(table.u(n))
        if val is None:
            exact.append((n, est.point == table.u(n)))
        else:
            z[n] = val
    arr = np.abs(np.array(list(z.values()))) if z else np.zeros(0)
    w2 = float(np.mean(arr <= 2)) if arr.size else math.nan
    w4 = float(np.mean(arr <= 4)) if arr.size else math.nan
    return Reconciliation(z, w2, w4, exact, excluded)


# --------------------------------------------------------------------------
# duality


@dataclass
class DualityReport:
    q: float
    dual: ModelSpec | None
    dual_mean: float
    rho_dual: float
    tail: TailTable
    levels: list
    unconditional: dict
    predicted: dict
    z_unconditional: dict
    conditional: dict
    z_conditional: dict
    ell_bar: dict
    acceptance: Estimate | None
    bias_bound: float
    flags: list


def duality_report(model: ModelSpec, levels, config: SimConfig, horizon: int = 400,
                   tol: float = 1e-12) -> DualityReport:
    """Compare a supercritical model with its extinction-conditioned dual.

    Exact side: ``q``, the dual offspring law, its mean ``f'(q)``, the dual
    decay constant and the dual tail ``u_dual``. Monte Carlo side: the
    unconditional ``P(M >= n)``, whose excess over ``1 - q`` should equal
    ``q u_dual(n)``, and the tail among runs that died out. ``ell_bar`` is
    ``rho_dual^n (P(M >= n) - (1 - q))`` computed from the exact side.
    A subcritical model reduces to its own tail (``q = 1``).
    """
    levels = [int(n) for n in levels]
    if model.mode == SUBCRITICAL:
        tail = solve_tail(model, horizon, tol)
        rho = tail.rho
        ell = {n: rho ** n * tail.u(n) for n in levels}
        return DualityReport(1.0, None, model.m, rho, tail, levels, {}, {}, {}, {}, {}, ell,
                             None, 0.0, ["subcritical input: no duality, plain tail report"])
    if model.offspring.probs[0] <= 0:
        raise ModeError("duality needs P(0 children) > 0")
    q = extinction_probability(model.offspring)
    dual_off = dual_offspring(model.offspring)
    dual_mean = offspring_pgf_derivative(model.offspring, q)
    dual = ModelSpec(model.jump, dual_off, SUBCRITICAL, f"extinction dual of {model.label}")
    rho_dual = decay_constant(model.jump, 1.0 / dual_off.mean)
    tail = solve_tail(dual, horizon, tol)
    run = simulate_conditioned_on_extinction(model, levels, config)
    unconditional, predicted, z_unc, conditional, z_cond, ell = {}, {}, {}, {}, {}, {}
    for n in levels:
        ud = tail.u(n)
        predicted[n] = (1.0 - q) + q * ud
        est = run.unconditional_tail(n)
        unconditional[n] = est
        z_unc[n] = est.z_against(predicted[n])
        cest = run.conditional_tail(n)
        conditional[n] = cest
        z_cond[n] = cest.z_against(ud)
        ell[n] = rho_dual ** n * q * ud
    return DualityReport(q, dual, dual_mean, rho_dual, tail, levels, unconditional, predicted,
                         z_unc, conditional, z_cond, ell, run.acceptance, run.bias_bound,
                         list(run.flags))
