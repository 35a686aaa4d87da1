import math

import numpy as np
import pytest

from brwmax.analysis import (
    EXACT_SPECIAL,
    MONTE_CARLO,
    classify,
    duality_report,
    fit_decay_rate,
    fit_table,
    kappa_estimate,
    phase_scan,
    reconcile,
)
from brwmax.errors import ConfigurationError, DomainError
from brwmax.exact.tail import scaled_tail, solve_tail
from brwmax.modelfile import builtin_model
from brwmax.simulate.engine import SimConfig
from brwmax.simulate.estimators import Estimate, estimate_tail


def test_fit_special_model_slope():
    table = solve_tail(builtin_model("special_m08"), 200, 1e-13)
    fit = fit_table(table)
    assert fit.slope == pytest.approx(-math.log(2), abs=1e-10)
    assert fit.gap <= 1e-10
    assert not fit.oscillating


def test_fit_period_two_flags_oscillation():
    table = solve_tail(builtin_model("period2"), 400)
    fit = fit_table(table)
    assert fit.oscillating
    assert fit.gap < 5e-3


def test_fit_r2_gap():
    table = solve_tail(builtin_model("r2_nrc"), 600)
    N = table.report_limit
    fit = fit_table(table, (N - 100, N))
    assert fit.gap < 1e-3


def test_fit_errors():
    with pytest.raises(DomainError):
        fit_decay_rate(range(5), np.zeros(5))
    with pytest.raises(DomainError):
        fit_decay_rate(range(10), np.r_[np.zeros(9), -np.inf])


def test_kappa_examples():
    special = solve_tail(builtin_model("special_m08"), 200)
    k = kappa_estimate(scaled_tail(special, special.rho).values)
    assert k.kappa == pytest.approx(1.0, abs=1e-10) and not k.oscillating
    period = solve_tail(builtin_model("period2"), 400)
    assert kappa_estimate(scaled_tail(period, period.rho).values, 2).oscillating
    r2 = solve_tail(builtin_model("r2_nrc"), 600)
    k = kappa_estimate(scaled_tail(r2, r2.rho).values, 2)
    assert not k.oscillating and k.half_width < 1e-6


def test_phase_scan_exact_route():
    scan = phase_scan(builtin_model("special_m08"), [0.05, 0.4, 0.6, 0.8], [20, 40, 60])
    assert scan.classification[0.4] == "plateau"
    assert scan.classification[0.8] == "decay"
    assert scan.classification[0.05] == "plateau"
    assert np.all(scan.g_values[0] > 0.99)
    # at the threshold the declared rule may go either way but never reports decay
    assert scan.classification[0.6] != "decay"
    assert scan.reference_threshold == pytest.approx(0.6)
    assert scan.bracket() == (0.6, 0.8)


def test_phase_scan_route_checks():
    with pytest.raises(ConfigurationError):
        phase_scan(builtin_model("r2_nrc"), [0.4], [20], EXACT_SPECIAL)
    with pytest.raises(ConfigurationError):
        phase_scan(builtin_model("special_m08"), [0.4], [20], MONTE_CARLO)


def test_phase_scan_monte_carlo_agrees_with_exact():
    model = builtin_model("special_m08")
    cfg = SimConfig(replications=200_000, master_seed=20261019)
    mc = phase_scan(model, [0.4, 0.8], [5, 10], MONTE_CARLO, cfg)
    ex = phase_scan(model, [0.4, 0.8], [5, 10], EXACT_SPECIAL)
    assert np.all(mc.stderr > 0)
    z = (mc.g_values - ex.g_values) / mc.stderr
    assert np.all(np.abs(z) <= 4)


def test_classify_rule():
    n = [10, 20, 30]
    assert classify([0.9, 0.9, 0.9], n)[0] == "plateau"
    assert classify([0.5, 0.1, 0.01], n)[0] == "decay"
    assert classify([0.2, 0.5, 0.9], n)[0] == "inconclusive"


def test_reconcile_exact_and_negative_control():
    model = builtin_model("special_m08")
    table = solve_tail(model, 200)
    # a second solve used as an "estimate" with zero error is an exact-match check
    same = {n: Estimate(table.u(n), 0.0, table.u(n), table.u(n), 1) for n in range(1, 6)}
    rec = reconcile(table, same)
    assert rec.count == 0 and all(ok for _, ok in rec.exact_matches)
    est = estimate_tail(model, range(1, 13), SimConfig(replications=1_000_000, master_seed=20261019))
    # levels share one sample, so their z-scores move together; only the
    # 4-sigma band is robust for a single seed
    assert reconcile(table, est).within4 == 1.0
    shifted = {n: Estimate(e.point + 0.01, e.stderr, 0, 1, e.replications_used)
               for n, e in est.items()}
    rec = reconcile(table, shifted)
    assert all(abs(rec.z[n]) > 4 for n in range(1, 4))


def test_reconcile_excludes_outside_window():
    table = solve_tail(builtin_model("special_m08"), 200)
    est = {table.report_limit + 5: Estimate(0.0, 0.1, 0, 1, 10)}
    assert table.report_limit + 5 in reconcile(table, est).excluded


def test_duality_report_small():
    cfg = SimConfig(replications=150_000, master_seed=20261019, population_cap=30)
    rep = duality_report(builtin_model("supercritical"), range(0, 6), cfg, horizon=200)
    assert rep.q == pytest.approx(1 / 3, abs=1e-12)
    assert rep.dual_mean == pytest.approx(0.5, abs=1e-12)
    assert rep.rho_dual == pytest.approx(2 + math.sqrt(3), abs=1e-12)
    for n in range(1, 6):
        assert abs(rep.z_unconditional[n]) <= 4
        assert 0 < rep.ell_bar[n] <= rep.q + 1e-6
    # the excess over 1 - q shrinks by a factor approaching rho_dual per level
    excess = [rep.predicted[n] - (1 - rep.q) for n in range(1, 6)]
    ratios = [a / b for a, b in zip(excess, excess[1:])]
    assert all(r > 1 for r in ratios)
    assert ratios[-1] == pytest.approx(rep.rho_dual, rel=0.05)


def test_duality_report_subcritical_reduces():
    rep = duality_report(builtin_model("r2_nrc"), range(0, 5), SimConfig(replications=10))
    assert rep.q == 1.0 and rep.dual is None
    assert rep.ell_bar[0] == 1.0
