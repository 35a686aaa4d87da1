import math

import numpy as np
import pytest

from brwmax.errors import ConfigurationError, ModeError
from brwmax.exact.passage import first_passage_pgf
from brwmax.exact.tail import solve_tail
from brwmax.model import JumpDistribution, simple_walk
from brwmax.modelfile import builtin_model
from brwmax.simulate.engine import (
    EXTINCT,
    GENERATION_CAP,
    POPULATION_CAP,
    SimConfig,
    run_blocks,
    simulate_block,
    simulate_one,
    simulate_outcomes,
)
from brwmax.simulate.estimators import (
    estimate_conditional,
    estimate_g,
    estimate_progeny,
    estimate_tail,
    estimate_tau_pgf,
    level_for,
    martingale_mean,
    proportion_estimate,
    simulate_conditioned_on_extinction,
)

R2 = JumpDistribution((-2, 0, 1, 2), (0.25, 0.35, 0.3, 0.1))


def small(reps=20_000, **kw):
    return SimConfig(replications=reps, master_seed=20261019, block_size=4096, **kw)


# ---------------------------------------------------------------- engine


def test_config_validation():
    with pytest.raises(ConfigurationError):
        SimConfig(replications=0)
    with pytest.raises(ConfigurationError):
        SimConfig(master_seed=-1)
    assert SimConfig(replications=10, block_size=4).blocks() == [(0, 4), (1, 4), (2, 2)]


def test_outcomes_are_sane():
    model = builtin_model("r2_nrc")
    for out in simulate_outcomes(model, small(2000)):
        assert out.M >= 0
        assert out.trajectory[0] == 0
        assert np.all(np.diff(out.trajectory) >= 0)
        assert out.M == out.trajectory[-1]
        assert out.status == EXTINCT
        assert out.total_progeny >= 1
        assert len(out.trajectory) == out.extinction_generation


def test_single_lineage_progeny_is_geometric():
    est = estimate_progeny(builtin_model("special_m08"), small(50_000))
    # one particle per generation until death: mean lifetime 1 / p0
    assert abs(est.point - 1 / 0.2) <= 4 * est.stderr


def test_same_seed_same_result_and_workers_do_not_matter():
    model = builtin_model("r2_nrc")
    a = estimate_tail(model, range(1, 8), small(30_000, workers=1))
    b = estimate_tail(model, range(1, 8), small(30_000, workers=2))
    assert {k: v.successes for k, v in a.items()} == {k: v.successes for k, v in b.items()}
    c = estimate_tail(model, range(1, 8), SimConfig(replications=30_000, master_seed=7,
                                                    block_size=4096))
    assert {k: v.successes for k, v in a.items()} != {k: v.successes for k, v in c.items()}


def test_blocks_are_independent_of_total():
    model = builtin_model("r2_nrc")
    first = simulate_block(model, small(8192), 1, 4096)
    again = simulate_block(model, small(40_000), 1, 4096)
    assert np.array_equal(first.M, again.M)


def test_reference_simulator_agrees_in_law():
    model = builtin_model("r2_nrc")
    table = solve_tail(model, 200)
    rng = np.random.default_rng(20261019)
    n_runs = 6000
    ms = np.array([simulate_one(model, rng).M for _ in range(n_runs)])
    for level in (1, 2, 3):
        est = proportion_estimate(int(np.count_nonzero(ms >= level)), n_runs)
        assert abs(est.point - table.u(level)) <= 4 * est.stderr


def test_caps_are_flagged():
    model = builtin_model("supercritical")
    rng = np.random.default_rng(1)
    statuses = {simulate_one(model, rng, max_generations=50, population_cap=20).status
                for _ in range(200)}
    assert POPULATION_CAP in statuses and EXTINCT in statuses
    sub = builtin_model("special_m09")
    out = simulate_one(sub, np.random.default_rng(3), max_generations=1, population_cap=10)
    assert out.status in (EXTINCT, GENERATION_CAP)


def test_run_blocks_folds_in_order():
    model = builtin_model("special_m08")
    total = run_blocks(model, small(10_000), lambda block: {"n": np.int64(block.size)})
    assert int(total["n"]) == 10_000


# ---------------------------------------------------------------- estimators


def test_tail_estimates():
    model = builtin_model("special_m08")
    est = estimate_tail(model, range(0, 9), SimConfig(replications=1_000_000, master_seed=20261019))
    assert est[0].point == 1.0 and est[0].stderr == 0.0
    assert abs(est[5].point - 2 ** -5) <= 4 * est[5].stderr
    points = [est[n].point for n in range(9)]
    assert all(b <= a for a, b in zip(points, points[1:]))
    for e in est.values():
        assert e.ci95_low <= e.point <= e.ci95_high


def test_tail_rejects_supercritical():
    with pytest.raises(ModeError):
        estimate_tail(builtin_model("supercritical"), [1], small(100))


def test_level_rounding():
    assert level_for(0.4, 50) == 20
    assert level_for(0.3, 10) == 3
    assert level_for(0.31, 10) == 4


def test_g_at_level_zero():
    est = estimate_g(builtin_model("special_m08"), 0.5, 0, small(100))
    assert est.point == 1.0 and est.stderr == 0.0


def test_conditional_estimates():
    model = builtin_model("special_m08")
    cfg = SimConfig(replications=400_000, master_seed=20261019, max_generations=200)
    est = estimate_conditional(model, [1.0, 4.0, 200.0], [4, 8, 12], cfg)
    for n in (4, 8, 12):
        assert est[(200.0, n)].point == 1.0
        assert est[(1.0, n)].point <= est[(4.0, n)].point
    assert est[(4.0, 12)].point >= 0.9
    assert est[(4.0, 4)].point <= est[(4.0, 12)].point + 2 * est[(4.0, 12)].stderr


def test_conditioned_on_extinction():
    model = builtin_model("supercritical")
    run = simulate_conditioned_on_extinction(model, [1, 2],
                                             small(100_000, population_cap=30, max_generations=5000))
    assert abs(run.acceptance.point - 1 / 3) <= 4 * run.acceptance.stderr
    assert run.bias_bound == pytest.approx((1 / 3) ** 30)
    sub = simulate_conditioned_on_extinction(builtin_model("r2_nrc"), [1], small(5000))
    assert sub.acceptance.point == 1.0


def test_martingale_mean():
    model = builtin_model("special_m08")
    table = solve_tail(model, 200)
    res = martingale_mean(model, table, 3, [0, 50], small(50_000))
    assert res.estimates[0].point == pytest.approx(0.125, abs=1e-15)
    assert res.estimates[0].stderr == 0.0
    est = res.estimates[50]
    assert abs(est.point - 0.125) <= 4 * est.stderr + 1e-15
    r2 = builtin_model("r2_nrc")
    t2 = solve_tail(r2, 300)
    res = martingale_mean(r2, t2, 5, [10, 40], small(100_000))
    for est in res.estimates.values():
        assert abs(est.point - t2.u(5)) <= 4 * est.stderr


def test_martingale_start_outside_window():
    model = builtin_model("special_m08")
    table = solve_tail(model, 200)
    with pytest.raises(ConfigurationError):
        martingale_mean(model, table, table.report_limit + 1, [5], small(100))


def test_tau_pgf_estimates():
    cfg = small(100_000)
    est = estimate_tau_pgf(simple_walk(), 0.8, 1, cfg)
    assert abs(est.point - 0.5) <= 4 * est.stderr
    assert estimate_tau_pgf(simple_walk(), 0.8, 0, cfg).point == 1.0
    est = estimate_tau_pgf(R2, 0.7, 10, cfg)
    exact = first_passage_pgf(R2, 0.7, 10).value
    assert abs(est.point - exact) <= 4 * est.stderr + 1e-12


def test_wilson_interval_at_zero_successes():
    est = proportion_estimate(0, 1000)
    assert est.point == 0.0 and est.ci95_low == 0.0
    assert est.ci95_high == pytest.approx(1.96 ** 2 / (1000 + 1.96 ** 2), rel=1e-3)
    assert math.isnan(proportion_estimate(0, 0).point)
