import math

import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from brwmax.errors import DomainError, ModelValidationError, ModeError
from brwmax.model import (
    SUBCRITICAL,
    SUPERCRITICAL,
    JumpDistribution,
    ModelSpec,
    OffspringDistribution,
    branching_deficit,
    complementary_pgf,
    complementary_pgf_derivative,
    decay_constant,
    dual_offspring,
    extinction_probability,
    jump_pgf,
    jump_pgf_derivative,
    lower_decay_constant,
    offspring_pgf,
    offspring_pgf_derivative,
    q_ratio,
    relative_deficit,
    simple_walk,
    single_lineage,
    supercritical_partner,
)

R2 = JumpDistribution((-2, 0, 1, 2), (0.25, 0.35, 0.3, 0.1))


# ---------------------------------------------------------------- strategies


@st.composite
def mean_zero_jumps(draw):
    """Finite jump laws with mean zero: mix a left and a right point mass."""
    left = draw(st.integers(1, 4))
    right = draw(st.integers(1, 4))
    stay = draw(st.floats(0.0, 0.6))
    # weights w_l * left = w_r * right with w_l + w_r = 1 - stay
    w_left = (1 - stay) * right / (left + right)
    w_right = (1 - stay) * left / (left + right)
    pairs = [(-left, w_left), (right, w_right)]
    if stay > 0:
        pairs.append((0, stay))
    return JumpDistribution.from_pairs(pairs)


@st.composite
def offspring_laws(draw, max_k=5):
    weights = draw(st.lists(st.floats(0.01, 1.0), min_size=2, max_size=max_k + 1))
    total = sum(weights)
    probs = tuple(w / total for w in weights)
    mean = sum(k * p for k, p in enumerate(probs))
    assume(abs(mean - 1.0) > 1e-6)
    return OffspringDistribution(probs)


def subcritical_laws():
    return offspring_laws().filter(lambda o: o.mean < 0.98)


# ---------------------------------------------------------------- validation


def test_jump_validation_names_mean_zero():
    with pytest.raises(ModelValidationError) as info:
        JumpDistribution((-1, 1), (0.45, 0.55))
    assert any("mean-zero" in v for v in info.value.violations)


def test_jump_validation_sum():
    with pytest.raises(ModelValidationError):
        JumpDistribution((-1, 1), (0.5, 0.49))


def test_offspring_sum_validation():
    with pytest.raises(ModelValidationError):
        OffspringDistribution((0.49, 0.5))


def test_critical_law_rejected():
    with pytest.raises(ModelValidationError):
        OffspringDistribution((0.3, 0.4, 0.3))


def test_offsets_sorted_and_ranges():
    j = JumpDistribution((2, -2, 1, 0), (0.1, 0.25, 0.3, 0.35))
    assert j.offsets == (-2, 0, 1, 2)
    assert j.right_range == 2 and j.left_range == 2
    assert j.nearly_right_continuous
    assert not JumpDistribution((-2, 2), (0.5, 0.5)).nearly_right_continuous


def test_mode_must_match_law():
    with pytest.raises(ModelValidationError):
        ModelSpec(simple_walk(), single_lineage(0.8), SUPERCRITICAL, "x")


# ---------------------------------------------------------------- jump pgf


def test_jump_pgf_simple_walk_at_two():
    assert jump_pgf(simple_walk(), 2.0) == pytest.approx(1.25, abs=1e-15)


def test_jump_pgf_r2_value():
    expected = 0.25 / 1.5 ** 2 + 0.35 + 0.3 * 1.5 + 0.1 * 1.5 ** 2
    assert jump_pgf(R2, 1.5) == pytest.approx(expected, rel=1e-14)
    assert expected == pytest.approx(1.13611, abs=1e-5)


def test_jump_pgf_derivative_simple_walk():
    assert jump_pgf_derivative(simple_walk(), 2.0) == pytest.approx(0.375, abs=1e-15)


def test_jump_pgf_derivative_matches_finite_difference():
    h = 1e-6
    fd = (jump_pgf(R2, 1.5 + h) - jump_pgf(R2, 1.5 - h)) / (2 * h)
    assert jump_pgf_derivative(R2, 1.5) == pytest.approx(fd, rel=1e-8)


def test_jump_pgf_domain():
    with pytest.raises(DomainError):
        jump_pgf(simple_walk(), 0.5)
    with pytest.raises(DomainError):
        jump_pgf_derivative(simple_walk(), 1.0)


@given(mean_zero_jumps())
def test_jump_pgf_is_one_at_one(jump):
    assert jump_pgf(jump, 1.0) == pytest.approx(1.0, abs=1e-12)
    # derivative tends to the mean, which is zero
    assert abs(jump_pgf_derivative(jump, 1.0 + 1e-9)) < 1e-6


# ---------------------------------------------------------------- decay constant


@pytest.mark.parametrize("m", [0.5, 0.8, 0.9])
def test_decay_constant_closed_form(m):
    rho = decay_constant(simple_walk(), 1 / m)
    assert rho == pytest.approx((1 + math.sqrt(1 - m * m)) / m, rel=1e-14)


def test_decay_constant_values():
    assert decay_constant(simple_walk(), 1 / 0.8) == pytest.approx(2.0, abs=1e-14)
    assert decay_constant(simple_walk(), 2.0) == pytest.approx(2 + math.sqrt(3), abs=1e-14)


def test_decay_constant_near_one():
    gamma = 1 + 1e-9
    theta = decay_constant(simple_walk(), gamma)
    assert 1 < theta < 1 + 1e-3
    assert jump_pgf(simple_walk(), theta) == pytest.approx(gamma, abs=1e-12)


def test_decay_constant_domain():
    with pytest.raises(DomainError):
        decay_constant(simple_walk(), 1.0)


@settings(max_examples=60)
@given(mean_zero_jumps(), st.floats(1.01, 5.0))
def test_decay_constant_solves_equation(jump, gamma):
    theta = decay_constant(jump, gamma)
    assert theta > 1
    assert jump_pgf(jump, theta) == pytest.approx(gamma, rel=1e-11)
    low = lower_decay_constant(jump, gamma)
    assert 0 < low < 1
    assert float(sum(p * low ** y for y, p in zip(jump.offsets, jump.probs))) == pytest.approx(
        gamma, rel=1e-9)


# ---------------------------------------------------------------- offspring transforms


def test_offspring_pgf_values():
    sc = OffspringDistribution((0.25, 0.0, 0.75))
    assert offspring_pgf(sc, 1 / 3) == pytest.approx(1 / 3, abs=1e-15)
    assert offspring_pgf(single_lineage(0.8), 0.5) == pytest.approx(0.6, abs=1e-15)
    assert offspring_pgf(sc, 1.0) == pytest.approx(1.0, abs=1e-15)
    with pytest.raises(DomainError):
        offspring_pgf(sc, 1.5)


def test_complementary_pgf_values():
    off = OffspringDistribution((0.3, 0.45, 0.25))
    expected = 1 - (0.3 + 0.45 * 0.5 + 0.25 * 0.25)
    assert complementary_pgf(off, 0.5) == pytest.approx(expected, abs=1e-15)
    assert complementary_pgf(off, 0.0) == 0.0
    # the example law (0.3, 0.4, 0.3) is critical, so check the arithmetic on the formula itself
    assert 1 - (0.3 + 0.4 * 0.5 + 0.3 * 0.25) == pytest.approx(0.425)


def test_complementary_pgf_two_point_law_is_linear():
    off = single_lineage(0.8)
    s = np.linspace(0, 1, 11)
    assert np.allclose(complementary_pgf(off, s), 0.8 * s, atol=1e-15)
    assert np.allclose(branching_deficit(off, s), 0.0, atol=1e-15)
    assert np.allclose(relative_deficit(off, s), 0.0, atol=1e-15)


def test_relative_deficit_endpoints():
    off = OffspringDistribution((0.5, 0.2, 0.3))
    assert relative_deficit(off, 0.0) == 0.0
    assert relative_deficit(off, 1.0) == pytest.approx((off.mean - 1 + 0.5) / off.mean, abs=1e-15)


@settings(max_examples=60)
@given(subcritical_laws(), st.floats(0.0, 1.0), st.floats(0.0, 1.0))
def test_complementary_pgf_properties(off, a, b):
    lo, hi = min(a, b), max(a, b)
    Qlo, Qhi = complementary_pgf(off, lo), complementary_pgf(off, hi)
    assert Qlo <= Qhi + 1e-15
    assert complementary_pgf(off, 1.0) == pytest.approx(1 - off.probs[0], abs=1e-14)
    assert complementary_pgf_derivative(off, lo) <= off.mean + 1e-12
    mid = 0.5 * (lo + hi)
    assert complementary_pgf(off, mid) >= 0.5 * (Qlo + Qhi) - 1e-14
    # Q(s)/s equals the mean at 0 and Q/s evaluated directly elsewhere
    assert q_ratio(off, 0.0) == pytest.approx(off.mean, rel=1e-14)
    if hi > 1e-3:
        assert q_ratio(off, hi) * hi == pytest.approx(Qhi, rel=1e-12)
    h = branching_deficit(off, hi)
    assert h >= -1e-15
    assert h == pytest.approx(off.mean * hi - Qhi, abs=1e-14)
    assert relative_deficit(off, lo) <= relative_deficit(off, hi) + 1e-14


# ---------------------------------------------------------------- extinction and duality


def test_extinction_probability_values():
    assert extinction_probability(OffspringDistribution((0.25, 0, 0.75))) == pytest.approx(
        1 / 3, abs=1e-13)
    assert extinction_probability(OffspringDistribution((0.2, 0, 0.8))) == pytest.approx(
        0.25, abs=1e-13)
    assert extinction_probability(single_lineage(0.8)) == 1.0


@pytest.mark.parametrize("p0, q, mean", [(0.25, 1 / 3, 0.5), (0.2, 0.25, 0.4)])
def test_dual_offspring(p0, q, mean):
    off = OffspringDistribution((p0, 0.0, 1 - p0))
    dual = dual_offspring(off)
    assert dual.probs[0] == pytest.approx(1 - p0, abs=1e-12)
    assert dual.probs[2] == pytest.approx(p0, abs=1e-12)
    assert dual.mean == pytest.approx(mean, abs=1e-12)
    assert offspring_pgf_derivative(off, q) == pytest.approx(mean, abs=1e-12)


def test_dual_offspring_rejects_subcritical():
    with pytest.raises(ModeError):
        dual_offspring(single_lineage(0.8))


@settings(max_examples=40)
@given(offspring_laws(max_k=4).filter(lambda o: 0.05 < o.mean < 0.95 and o.max_children >= 2))
def test_dual_inverts_partner(off):
    partner = supercritical_partner(off)
    assert partner.mode == SUPERCRITICAL
    back = dual_offspring(partner)
    assert np.allclose(back.probs_array, off.probs_array, atol=1e-9)
    assert back.mode == SUBCRITICAL
