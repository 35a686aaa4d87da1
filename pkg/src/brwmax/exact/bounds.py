"""Chernoff-type bounds and exponential tilts for general finite-range walks."""

from __future__ import annotations

import math

from .._roots import bisect
from ..errors import DomainError
from ..model import JumpDistribution, ModelSpec, _jump_pgf, _jump_pgf_prime, decay_constant


def _check_tilt(model: ModelSpec, theta0: float) -> float:
    if not theta0 > 1.0:
        raise DomainError(f"theta0 must exceed 1, got {theta0}")
    growth = model.m * _jump_pgf(model.jump, theta0)
    if growth >= 1.0:
        raise DomainError(f"m K(theta0) = {growth:.6g} >= 1; theta0 must lie below rho(1/m)")
    return growth


def chernoff_summand_bound(model: ModelSpec, theta0: float, level: int) -> float:
    """``sum_(k=1..level) (m K(theta0))^k / theta0^level``, bounding ``P(M_level >= level)``."""
    growth = _check_tilt(model, theta0)
    level = int(level)
    total = growth * (1.0 - growth ** level) / (1.0 - growth) if level > 0 else 0.0
    return total * theta0 ** (-level)


def chernoff_tail_bound(model: ModelSpec, theta0: float, level: int) -> float:
    """Upper bound ``m^n + 1 / ((1 - m K(theta0)) theta0^n)`` on ``P(M >= n)``.

    Valid for any ``1 < theta0 < rho(1/m)``: the lineage count at generation
    ``n`` covers survival past ``n`` and a union bound with a Chernoff
    estimate per generation covers reaching ``n`` earlier.
    """
    growth = _check_tilt(model, theta0)
    level = int(level)
    return model.m ** level + 1.0 / ((1.0 - growth) * theta0 ** level)


def default_tilt(model: ModelSpec) -> float:
    """Midpoint of the admissible range ``(1, rho(1/m))``."""
    return 0.5 * (1.0 + decay_constant(model.jump, 1.0 / model.m))


def tilt_speed(jump: JumpDistribution, theta: float) -> float:
    """``theta K'(theta) / K(theta)``: mean step under the tilt ``theta``.

    Increases from 0 at ``theta = 1`` towards the right range ``R``.
    """
    return theta * _jump_pgf_prime(jump, theta) / _jump_pgf(jump, theta)


def optimal_tilt(jump: JumpDistribution, x: float) -> float:
    """The ``theta > 1`` whose tilted mean step is ``1/x``; needs ``x > 1/R``."""
    R = jump.right_range
    if not x * R > 1.0:
        raise DomainError(f"x must exceed 1/R = {1.0 / R:g}, got {x}")
    target = 1.0 / x
    hi = 2.0
    while tilt_speed(jump, hi) <= target:
        hi *= 2.0
        if not math.isfinite(hi):
            raise DomainError("tilt bracket overflowed")
    return bisect(lambda t: tilt_speed(jump, t) - target, 1.0, hi, xtol=1e-12 * hi)


def tilted_exponent(jump: JumpDistribution, m: float, x: float) -> float:
    """``log rho - log theta* + x log(m K(theta*))`` at the optimal tilt.

    The exponential rate in ``n`` of ``rho^n sum_(k <= xn) m^k P(W_k ~ n)``;
    negative values mean reaching ``n`` within ``xn`` generations is
    exponentially rarer than reaching it at all.
    """
    if not 0.0 < m < 1.0:
        raise DomainError(f"m must lie in (0, 1), got {m}")
    theta = optimal_tilt(jump, x)
    rho = decay_constant(jump, 1.0 / m)
    return math.log(rho) - math.log(theta) + x * math.log(m * _jump_pgf(jump, theta))


def tilted_exponent_limit(jump: JumpDistribution, m: float) -> float:
    """Limit of :func:`tilted_exponent` as ``x -> 1/R`` from above:
    ``log(rho^R m a_R) / R``."""
    R = jump.right_range
    rho = decay_constant(jump, 1.0 / m)
    return math.log(rho ** R * m * jump.prob(R)) / R


def edge_rate(jump: JumpDistribution, x: float) -> float:
    """``log K'(theta*) + (x - 1) log K(theta*)``; tends to
    ``log R + log(a_R)/R`` as ``x -> 1/R``."""
    theta = optimal_tilt(jump, x)
    return math.log(_jump_pgf_prime(jump, theta)) + (x - 1.0) * math.log(_jump_pgf(jump, theta))
