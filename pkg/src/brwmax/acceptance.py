"""Acceptance criteria A1-A13 as runnable checks.

Each ``check_*`` function returns a :class:`CriterionResult`; nothing here
asserts. The same functions back ``brwmax verify`` and the test suite.
"""

from __future__ import annotations

import contextlib
import math
import time
from dataclasses import dataclass, field
from unittest import mock

import numpy as np

from .analysis import (
    EXACT_SPECIAL,
    duality_report,
    kappa_estimate,
    phase_scan,
    reconcile,
)
from .errors import BrwError
from .exact.bounds import chernoff_tail_bound, default_tilt
from .exact.nearest import (
    local_deviation_rate,
    log_local_deviation_rate,
    log_passage_window_prob,
    single_lineage_reach_prob,
)
from .exact.passage import check_supermultiplicativity as supermultiplicativity_margins
from .exact.passage import overshoot_pgf, passage_log_table
from .exact.tail import scaled_tail, solve_tail
from .model import OffspringDistribution, decay_constant, simple_walk
from .modelfile import SUBCRITICAL_BUILTINS, builtin_model
from .simulate.engine import SimConfig
from .simulate.estimators import estimate_tail, martingale_mean

DEFAULT_SEED = 20261019


@dataclass
class CriterionResult:
    criterion: str
    passed: bool
    detail: str
    seconds: float = 0.0
    values: dict = field(default_factory=dict)

    def line(self) -> str:
        mark = "PASS" if self.passed else "FAIL"
        return f"{self.criterion} {mark} ({self.seconds:.2f}s): {self.detail}"


def _timed(criterion):
    def wrap(fn):
        def run(*args, **kwargs):
            t0 = time.perf_counter()
            try:
                res = fn(*args, **kwargs)
            except BrwError as exc:
                res = CriterionResult(criterion, False, f"raised {type(exc).__name__}: {exc}")
            res.seconds = time.perf_counter() - t0
            return res
        run.__name__ = fn.__name__
        run.__doc__ = fn.__doc__
        run.criterion = criterion
        return run
    return wrap


@_timed("A1")
def check_exact_geometric_law(tol: float = 1e-10) -> CriterionResult:
    """Single-lineage simple-walk models: ``u(n) = rho^-n`` for n <= 40 in under 1 s."""
    worst, slowest = 0.0, 0.0
    details = {}
    for name in ("special_m05", "special_m08", "special_m09"):
        model = builtin_model(name)
        t0 = time.perf_counter()
        table = solve_tail(model, 200, 1e-13)
        elapsed = time.perf_counter() - t0
        m = model.m
        rho = (1.0 + math.sqrt(1.0 - m * m)) / m
        n = np.arange(41)
        err = float(np.max(np.abs(table.values[:41] - rho ** (-n.astype(float)))))
        worst, slowest = max(worst, err), max(slowest, elapsed)
        details[name] = {"max_error": err, "seconds": elapsed}
    ok = worst <= tol and slowest < 1.0
    return CriterionResult("A1", ok, f"max |u(n) - rho^-n| = {worst:.2e} (<= {tol:g}), "
                           f"slowest solve {slowest:.3f}s (< 1s)", values=details)


@_timed("A2")
def check_scaled_tail_converges() -> CriterionResult:
    """Right range 2 model: scaled tail bounded, positive and settling."""
    model = builtin_model("r2_nrc")
    t0 = time.perf_counter()
    table = solve_tail(model, 2000, 1e-12)
    elapsed = time.perf_counter() - t0
    ell = scaled_tail(table, table.rho).values
    N = table.report_limit
    top = float(ell.max())
    low = float(ell[N // 2:].min())
    step = abs(float(ell[N] - ell[N - 1]))
    ok = top <= 1 + 1e-9 and low > 0.01 and step < 1e-6 and elapsed < 10
    return CriterionResult("A2", ok, f"max ell {top:.6f} (<= 1+1e-9), min over last half {low:.4f} "
                           f"(> 0.01), |ell(N)-ell(N-1)| {step:.1e} (< 1e-6), solve {elapsed:.2f}s "
                           f"(< 10s), window 0..{N}",
                           values={"max_ell": top, "min_ell": low, "last_step": step, "kappa": ell[N]})


@_timed("A3")
def check_period_two_oscillation() -> CriterionResult:
    """Steps of +-2: ``ell(2n)/ell(2n-1) = rho`` and the oscillation flag fires."""
    model = builtin_model("period2")
    table = solve_tail(model, 2000, 1e-12)
    ell = scaled_tail(table, table.rho).values
    N = table.report_limit
    evens = np.arange(2, N + 1, 2)
    ratio = ell[evens] / ell[evens - 1]
    dev = float(np.max(np.abs(ratio - table.rho)))
    diag = kappa_estimate(ell, model.jump.right_range)
    ok = dev <= 1e-8 and diag.oscillating
    return CriterionResult("A3", ok, f"max |ratio - rho| = {dev:.1e} (<= 1e-8), oscillation flag "
                           f"{diag.oscillating} (half width {diag.half_width:.3f})",
                           values={"ratio_dev": dev, "flag": diag.oscillating})


@_timed("A4")
def check_passage_rate() -> CriterionResult:
    """``-log E(m^tau_n)/n`` against ``log rho``: exact for the simple walk,
    decreasing gap below 0.02 at n = 200 for the right range 2 walk."""
    n = np.arange(1, 201)
    nn = simple_walk()
    rho = decay_constant(nn, 1 / 0.8)
    logs = passage_log_table(nn, 0.8, 200, 1e-13)
    nn_gap = float(np.max(np.abs(-logs[1:] / n - math.log(rho))))
    model = builtin_model("r2_nrc")
    rho2 = decay_constant(model.jump, 1 / model.m)
    logs2 = passage_log_table(model.jump, model.m, 200, 1e-13)
    gap = np.abs(-logs2[1:] / n - math.log(rho2))
    decreasing = bool(np.all(np.diff(gap) < 0))
    ok = nn_gap <= 1e-9 and decreasing and gap[-1] < 0.02
    return CriterionResult("A4", ok, f"simple walk max gap {nn_gap:.1e} (<= 1e-9); right range 2 "
                           f"gap decreasing={decreasing}, gap(200)={gap[-1]:.5f} (< 0.02)",
                           values={"nn_gap": nn_gap, "gap_200": float(gap[-1])})


@_timed("A5")
def check_weights_sum_to_one() -> CriterionResult:
    worst = 0.0
    sums = {}
    for name in SUBCRITICAL_BUILTINS:
        model = builtin_model(name)
        law = overshoot_pgf(model.jump, model.m, 1e-13, weights_for_m=model.m)
        sums[name] = law.weight_sum
        worst = max(worst, abs(law.weight_sum - 1.0))
    return CriterionResult("A5", worst <= 1e-8, f"max |sum w - 1| = {worst:.1e} (<= 1e-8)",
                           values=sums)


@_timed("A6")
def check_reconciliation(replications: int = 10_000_000, workers: int = 1,
                         seed: int = DEFAULT_SEED) -> CriterionResult:
    """Exact tails against simulation at every level with ``u(n) >= 1e-5``."""
    zs = []
    per_model = {}
    for name in ("special_m08", "period2", "r2_nrc"):
        model = builtin_model(name)
        table = solve_tail(model, 400, 1e-12)
        levels = [k for k in range(1, table.report_limit + 1) if table.u(k) >= 1e-5]
        cfg = SimConfig(replications=replications, master_seed=seed, workers=workers)
        rec = reconcile(table, estimate_tail(model, levels, cfg))
        zs.extend(rec.z.values())
        per_model[name] = rec
    arr = np.abs(np.array(zs))
    w2, w4 = float(np.mean(arr <= 2)), float(np.mean(arr <= 4))
    ok = w2 >= 0.95 and w4 == 1.0
    return CriterionResult("A6", ok, f"{len(arr)} z-scores: {w2:.1%} within 2 (>= 95%), "
                           f"{w4:.1%} within 4 (= 100%), max |z| {arr.max():.2f}",
                           values={"within2": w2, "within4": w4, "z": per_model})


@_timed("A7")
def check_martingale(walks: int = 1_000_000, seed: int = DEFAULT_SEED,
                     workers: int = 1) -> CriterionResult:
    """Reflected-walk martingale mean equals ``u(x)`` at every horizon."""
    horizons = [5, 10, 20, 40]
    worst = 0.0
    for name in ("r2_nrc", "special_m08"):
        model = builtin_model(name)
        table = solve_tail(model, 400, 1e-12)
        for x in (2, 5, 8):
            res = martingale_mean(model, table, x, horizons,
                                  SimConfig(replications=walks, master_seed=seed, workers=workers))
            for h in horizons:
                z = res.estimates[h].z_against(table.u(x))
                worst = max(worst, abs(z) if z is not None else 0.0)
    return CriterionResult("A7", worst <= 4, f"max |mean - u(x)| / stderr = {worst:.2f} (<= 4) "
                           f"over x in 2,5,8 and horizons {horizons}", values={"max_z": worst})


@_timed("A8")
def check_local_deviation() -> CriterionResult:
    errs = {}
    for a in (1.5, 2.0, 3.0):
        for n in (1000, 4000):
            w = 2.0 * math.sqrt(n * math.log(n))
            lp = log_passage_window_prob(n, a * n - w, a * n + w)
            errs[(a, n)] = abs(lp / n + log_local_deviation_rate(a))
    lam3 = abs(local_deviation_rate(3.0) - 32 / 27)
    ok = (all(errs[(a, 4000)] <= 0.05 for a in (1.5, 2.0, 3.0))
          and all(errs[(a, 4000)] < errs[(a, 1000)] for a in (1.5, 2.0, 3.0))
          and lam3 <= 1e-12)
    parts = ", ".join(f"a={a}: {errs[(a, 1000)]:.4f} -> {errs[(a, 4000)]:.4f}" for a in (1.5, 2.0, 3.0))
    return CriterionResult("A8", ok, f"error n=1000 -> 4000: {parts} (<= 0.05, shrinking); "
                           f"|lambda(3) - 32/27| = {lam3:.1e}", values={"errors": errs})


@_timed("A9")
def check_phase_scan() -> CriterionResult:
    model = builtin_model("special_m08")
    c_grid = [0.3, 0.45, 0.6, 0.75, 0.9]
    n_grid = [20, 40, 60]
    scan = phase_scan(model, c_grid, n_grid, EXACT_SPECIAL)
    problems = []
    for i, c in enumerate(c_grid):
        row = scan.g_values[i]
        cls = scan.classification[c]
        if c in (0.3, 0.45):
            if cls != "plateau" or not np.all((row >= 0.8) & (row <= 1.05)):
                problems.append(f"c={c}: {cls}, g={np.round(row, 4).tolist()}")
        if c in (0.75, 0.9):
            if cls != "decay" or not row[-1] < 0.05:
                problems.append(f"c={c}: {cls}, g(n=60)={row[-1]:.4f}")
    summary = "; ".join(f"c={c}: {scan.classification[c]} g(60)={scan.g_values[i][-1]:.4f}"
                        for i, c in enumerate(c_grid))
    detail = summary if not problems else "violations: " + "; ".join(problems) + " | " + summary
    return CriterionResult("A9", not problems, detail, values={"scan": scan})


@_timed("A10")
def check_conditional_ratio() -> CriterionResult:
    ratios = [2.0 ** n * single_lineage_reach_prob(0.8, 4 * n, n) for n in (5, 10, 15)]
    ok = ratios[-1] >= 0.95 and ratios[0] < ratios[1] < ratios[2]
    return CriterionResult("A10", ok, "ratio at n=5,10,15: " + ", ".join(f"{r:.5f}" for r in ratios)
                           + " (>= 0.95 at 15, increasing)", values={"ratios": ratios})


@_timed("A11")
def check_duality(accepted_target: int = 1_000_000, seed: int = DEFAULT_SEED,
                  workers: int = 1) -> CriterionResult:
    model = builtin_model("supercritical")
    q_exact = 1.0 / 3.0
    total = math.ceil(1.05 * accepted_target / q_exact)
    cfg = SimConfig(replications=total, master_seed=seed, workers=workers, population_cap=30,
                    max_generations=5000)
    rep = duality_report(model, range(0, 9), cfg, horizon=200)
    q_err = abs(rep.q - q_exact)
    rho_err = abs(rep.rho_dual - (2.0 + math.sqrt(3.0)))
    zs = [abs(z) for n, z in rep.z_unconditional.items() if z is not None]
    zc = [abs(z) for n, z in rep.z_conditional.items() if z is not None]
    ell_ok = all(0 < v <= rep.q + 1e-6 for n, v in rep.ell_bar.items() if n >= 1)
    ok = (q_err <= 1e-12 and rho_err <= 1e-12 and rep.acceptance.successes >= accepted_target
          and max(zs) <= 4 and max(zc) <= 4 and ell_ok)
    return CriterionResult(
        "A11", ok, f"|q - 1/3| = {q_err:.1e}, |rho_dual - (2+sqrt3)| = {rho_err:.1e}, accepted "
        f"{rep.acceptance.successes}, max |z| unconditional {max(zs):.2f}, conditional "
        f"{max(zc):.2f} (<= 4), ell_bar in (0, q]: {ell_ok}", values={"report": rep})


@_timed("A12")
def check_supermultiplicativity() -> CriterionResult:
    pairs = [(k, l) for k in range(41) for l in range(41 - k)]
    r2 = supermultiplicativity_margins(builtin_model("r2_nrc").jump, 0.7, pairs, 1e-10)
    nn = supermultiplicativity_margins(simple_walk(), 0.7, pairs, 1e-10)
    nn_eq = max(abs(x) for x in nn.margins)
    ok = all(r2.holds) and nn_eq <= 1e-10
    return CriterionResult("A12", ok, f"right range 2: {sum(r2.holds)}/{len(pairs)} pairs hold, "
                           f"min margin {min(r2.margins):.1e}; simple walk max |margin| "
                           f"{nn_eq:.1e} (<= 1e-10)", values={"r2": r2, "nn": nn})


@_timed("A13")
def check_chernoff_domination() -> CriterionResult:
    failures = []
    for name in SUBCRITICAL_BUILTINS:
        model = builtin_model(name)
        table = solve_tail(model, 400, 1e-12)
        theta0 = default_tilt(model)
        for n in range(table.report_limit + 1):
            if chernoff_tail_bound(model, theta0, n) < table.u(n):
                failures.append((name, n))
    return CriterionResult("A13", not failures,
                           "bound dominates u(n) on every certified window" if not failures
                           else f"violations at {failures[:5]}", values={"failures": failures})


CRITERIA = (
    check_exact_geometric_law, check_scaled_tail_converges, check_period_two_oscillation,
    check_passage_rate, check_weights_sum_to_one, check_reconciliation, check_martingale,
    check_local_deviation, check_phase_scan, check_conditional_ratio, check_duality,
    check_supermultiplicativity, check_chernoff_domination,
)

# which claims each criterion supports, for the summary block
CLAIMS = (
    ("tail exponent", ("A1", "A2", "A13")),
    ("scaled tail limit", ("A2", "A3")),
    ("passage rate identity", ("A4", "A5", "A12")),
    ("phase plateau below threshold", ("A9", "A10")),
    ("phase decay above threshold", ("A9",)),
    ("extinction duality", ("A11",)),
)


def run_all(workers: int = 1, seed: int = DEFAULT_SEED, only=None) -> list[CriterionResult]:
    results = []
    for check in CRITERIA:
        if only and check.criterion not in only:
            continue
        if check.criterion in ("A6", "A7", "A11"):
            results.append(check(workers=workers, seed=seed))
        else:
            results.append(check())
    return results


def claim_summary(results: list[CriterionResult]) -> list[tuple[str, str, str]]:
    by_id = {r.criterion: r for r in results}
    out = []
    for claim, ids in CLAIMS:
        present = [by_id[i] for i in ids if i in by_id]
        if not present:
            status = "inconclusive"
        elif all(r.passed for r in present):
            status = "pass"
        else:
            status = "fail"
        out.append((claim, status, ", ".join(ids)))
    return out


FAULTS = ("q-sign",)


@contextlib.contextmanager
def inject_fault(name: str | None):
    """Deliberately corrupt a primitive to prove the checks can fail.

    ``q-sign`` flips the sign of ``Q(s)/s``, so the tail solver iterates the
    wrong map.
    """
    if not name:
        yield
        return
    if name != "q-sign":
        raise ValueError(f"unknown fault {name!r}; choose from {', '.join(FAULTS)}")
    original = OffspringDistribution.__dict__["tail_sums"]

    def flipped(self):
        return -original.func(self)

    with mock.patch.object(OffspringDistribution, "tail_sums", property(flipped)):
        yield
