import math

import numpy as np
import pytest
from hypothesis import HealthCheck, given, settings
from hypothesis import strategies as st

from brwmax.errors import ConfigurationError, ModeError
from brwmax.exact.tail import min_horizon, report_margin, scaled_tail, solve_tail
from brwmax.model import SUBCRITICAL, JumpDistribution, ModelSpec, OffspringDistribution
from brwmax.modelfile import SUBCRITICAL_BUILTINS, builtin_model


def plain_iteration(model, horizon, sweeps):
    """Independent oracle: iterate u <- sum_y a_y Q(u(n - y)) from u = 1,
    with u = 1 at and below 0 and u = 0 above the horizon."""
    probs = model.offspring.probs
    L, R = model.jump.left_range, model.jump.right_range
    u = np.ones(horizon + 1)
    for _ in range(sweeps):
        padded = np.concatenate([np.ones(R), u, np.zeros(L)])
        Q = 1.0 - sum(p * (1.0 - padded) ** k for k, p in enumerate(probs))
        new = np.zeros(horizon + 1)
        for y, a in zip(model.jump.offsets, model.jump.probs):
            new += a * Q[R - y: R - y + horizon + 1]
        new[0] = 1.0
        u = new
    return u


@pytest.mark.parametrize("name, rho", [("special_m05", 2 + math.sqrt(3)), ("special_m08", 2.0),
                                       ("special_m09", (1 + math.sqrt(0.19)) / 0.9)])
def test_single_lineage_is_geometric(name, rho):
    table = solve_tail(builtin_model(name), 200, 1e-13)
    n = np.arange(table.report_limit + 1)
    assert np.allclose(table.window(), rho ** -n.astype(float), rtol=0, atol=1e-10)
    ell = scaled_tail(table, table.rho)
    assert np.allclose(ell.values, 1.0, atol=1e-10)
    assert not ell.faults


def test_u_zero_is_one():
    for name in SUBCRITICAL_BUILTINS:
        assert solve_tail(builtin_model(name), 100).values[0] == 1.0


def test_period_two_staircase():
    table = solve_tail(builtin_model("period2"), 400)
    u = table.window()
    evens = np.arange(2, table.report_limit + 1, 2)
    assert np.allclose(u[evens], u[evens - 1], rtol=1e-10, atol=0)
    ratio = table.ell[evens] / table.ell[evens - 1]
    assert np.allclose(ratio, table.rho, rtol=1e-8)


@pytest.mark.parametrize("name", SUBCRITICAL_BUILTINS)
def test_matches_plain_iteration(name):
    model = builtin_model(name)
    table = solve_tail(model, 120, 1e-12)
    # contraction rate is at most m; 0.9^400 ~ 5e-19
    oracle = plain_iteration(model, 120, 400)
    k = table.report_limit + 1
    assert np.allclose(table.values[:k], oracle[:k], rtol=1e-9, atol=1e-15)


def test_horizon_doubling_is_stable():
    model = builtin_model("r2_nrc")
    a = solve_tail(model, 300)
    b = solve_tail(model, 600)
    k = a.report_limit + 1
    assert np.allclose(a.ell[:k], b.ell[:k], atol=1e-11, rtol=0)
    assert a.doubling_change <= a.tolerance


def test_small_residual_and_bracket():
    table = solve_tail(builtin_model("r2_nrc"), 400)
    assert table.bracket_gap <= table.tolerance
    assert table.max_residual <= 10 * table.tolerance
    assert table.monotone_iterates


def test_errors():
    with pytest.raises(ModeError):
        solve_tail(builtin_model("supercritical"), 100)
    model = builtin_model("r2_nrc")
    with pytest.raises(ConfigurationError):
        solve_tail(model, min_horizon(model) - 1)
    with pytest.raises(ConfigurationError):
        solve_tail(model, 200, 1e-14)
    table = solve_tail(model, 200)
    with pytest.raises(ConfigurationError):
        scaled_tail(table, table.rho * 1.01)


@st.composite
def small_models(draw):
    left = draw(st.integers(1, 3))
    right = draw(st.integers(1, 3))
    stay = draw(st.sampled_from([0.0, 0.2, 0.5]))
    w_left = (1 - stay) * right / (left + right)
    w_right = (1 - stay) * left / (left + right)
    pairs = [(-left, w_left), (right, w_right)] + ([(0, stay)] if stay else [])
    jump = JumpDistribution.from_pairs(pairs)
    p0 = draw(st.floats(0.15, 0.9))
    # mean is 1 - p0 + p2, kept at most 0.95
    p2 = draw(st.floats(0.0, min(0.4, (1 - p0) * 0.99, p0 - 0.05)))
    off = OffspringDistribution((p0, 1 - p0 - p2, p2))
    return ModelSpec(jump, off, SUBCRITICAL, "random")


@settings(max_examples=25, deadline=None, suppress_health_check=[HealthCheck.too_slow])
@given(small_models())
def test_tail_invariants(model):
    table = solve_tail(model, report_margin(model, 1e-12) + 60, 1e-12)
    u = table.window()
    assert u[0] == 1.0
    assert np.all(np.diff(u) <= 1e-15)
    assert np.all(u > 0)
    # scaled tail never exceeds the expected number of crossing lineages
    assert np.all(table.ell[: table.report_limit + 1] <= 1 + 1e-9)
    assert table.u_residual()[: table.report_limit + 1].max() <= 1e-12
