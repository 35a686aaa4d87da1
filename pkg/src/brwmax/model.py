"""Branching random walk model: jump and offspring laws and their transforms.

All laws have finite support. A jump law lives on integer offsets and is
required to have mean zero; an offspring law is either subcritical
(mean < 1) or supercritical with a positive chance of no children.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Sequence

import numpy as np

from ._roots import bisect, newton_bracketed
from .errors import ConvergenceError, DomainError, ModeError, ModelValidationError

PROB_TOL = 1e-12
MEAN_TOL = 1e-12

SUBCRITICAL = "subcritical"
SUPERCRITICAL = "supercritical"


def _jump_violations(offsets: Sequence[int], probs: Sequence[float], strict: bool) -> list[str]:
    problems = []
    if len(offsets) == 0:
        return ["jump: no entries"]
    if len(set(offsets)) != len(offsets):
        problems.append("jump: offsets must be distinct")
    for y, p in zip(offsets, probs):
        if not (0.0 < p <= 1.0):
            problems.append(f"jump: probability of offset {y} must lie in (0, 1], got {p}")
    total = math.fsum(probs)
    if abs(total - 1.0) > PROB_TOL:
        problems.append(f"jump: probabilities sum to {total!r}, not 1")
    if strict:
        mean = math.fsum(y * p for y, p in zip(offsets, probs))
        if abs(mean) > MEAN_TOL:
            problems.append(f"jump: mean-zero invariant violated (mean = {mean:.6g})")
        if not any(y > 0 and p > 0 for y, p in zip(offsets, probs)):
            problems.append("jump: needs at least one positive offset")
    return problems


def _offspring_violations(probs: Sequence[float]) -> list[str]:
    problems = []
    if len(probs) == 0:
        return ["offspring: no entries"]
    for k, p in enumerate(probs):
        if p < 0 or p > 1:
            problems.append(f"offspring: probability of {k} children must lie in [0, 1], got {p}")
    total = math.fsum(probs)
    if abs(total - 1.0) > PROB_TOL:
        problems.append(f"offspring: probabilities sum to {total!r}, not 1")
    mean = math.fsum(k * p for k, p in enumerate(probs))
    if abs(mean - 1.0) <= MEAN_TOL:
        problems.append("offspring: critical mean 1 is not supported")
    elif mean > 1.0 and probs[0] <= 0.0:
        problems.append("offspring: supercritical law needs P(0 children) > 0")
    elif mean <= 0.0:
        problems.append("offspring: mean must be positive")
    return problems


@dataclass(frozen=True)
class JumpDistribution:
    """Finite-support integer step law ``{offset: probability}``.

    ``strict=False`` skips the mean-zero and positive-offset checks; it is
    used for the reflected walk and for deliberately biased test walks.
    """

    offsets: tuple[int, ...]
    probs: tuple[float, ...]
    strict: bool = True

    def __post_init__(self):
        pairs = sorted(zip((int(y) for y in self.offsets), (float(p) for p in self.probs)))
        object.__setattr__(self, "offsets", tuple(y for y, _ in pairs))
        object.__setattr__(self, "probs", tuple(p for _, p in pairs))
        if len(self.offsets) != len(tuple(self.probs)):
            raise ModelValidationError(["jump: offsets and probabilities differ in length"])
        problems = _jump_violations(self.offsets, self.probs, self.strict)
        if problems:
            raise ModelValidationError(problems)

    @classmethod
    def from_pairs(cls, pairs: Iterable[tuple[int, float]], strict: bool = True) -> "JumpDistribution":
        pairs = list(pairs)
        return cls(tuple(y for y, _ in pairs), tuple(p for _, p in pairs), strict)

    @cached_property
    def offsets_array(self) -> np.ndarray:
        return np.asarray(self.offsets, dtype=np.int64)

    @cached_property
    def probs_array(self) -> np.ndarray:
        return np.asarray(self.probs, dtype=float)

    @property
    def right_range(self) -> int:
        """Largest offset with positive probability (0 if none is positive)."""
        return max(0, max(self.offsets))

    @property
    def left_range(self) -> int:
        return max(0, -min(self.offsets))

    @property
    def mean(self) -> float:
        return math.fsum(y * p for y, p in zip(self.offsets, self.probs))

    @property
    def variance(self) -> float:
        mu = self.mean
        return math.fsum((y - mu) ** 2 * p for y, p in zip(self.offsets, self.probs))

    @property
    def nearly_right_continuous(self) -> bool:
        """True when every offset 1..R carries positive mass."""
        support = set(self.offsets)
        return self.right_range >= 1 and all(k in support for k in range(1, self.right_range + 1))

    @property
    def span(self) -> int:
        """gcd of the support; values above 1 mean the walk lives on a sublattice."""
        g = 0
        for y in self.offsets:
            g = math.gcd(g, y)
        return g

    def prob(self, y: int) -> float:
        try:
            return self.probs[self.offsets.index(y)]
        except ValueError:
            return 0.0

    def reflected(self) -> "JumpDistribution":
        """Step law ``a_{-y}`` of the reflected walk."""
        return JumpDistribution(tuple(-y for y in self.offsets), self.probs, strict=False)


@dataclass(frozen=True)
class OffspringDistribution:
    """Offspring law ``p_0, ..., p_K`` with finite support."""

    probs: tuple[float, ...]

    def __post_init__(self):
        probs = [float(p) for p in self.probs]
        while len(probs) > 1 and probs[-1] == 0.0:
            probs.pop()
        object.__setattr__(self, "probs", tuple(probs))
        problems = _offspring_violations(self.probs)
        if problems:
            raise ModelValidationError(problems)

    @classmethod
    def from_pairs(cls, pairs: Iterable[tuple[int, float]]) -> "OffspringDistribution":
        pairs = list(pairs)
        if any(k < 0 for k, _ in pairs):
            raise ModelValidationError(["offspring: counts must be nonnegative"])
        if len({k for k, _ in pairs}) != len(pairs):
            raise ModelValidationError(["offspring: counts must be distinct"])
        top = max(k for k, _ in pairs)
        probs = [0.0] * (top + 1)
        for k, p in pairs:
            probs[k] = float(p)
        return cls(tuple(probs))

    @cached_property
    def probs_array(self) -> np.ndarray:
        return np.asarray(self.probs, dtype=float)

    @property
    def max_children(self) -> int:
        return len(self.probs) - 1

    @property
    def mean(self) -> float:
        return math.fsum(k * p for k, p in enumerate(self.probs))

    @property
    def variance(self) -> float:
        m = self.mean
        return math.fsum((k - m) ** 2 * p for k, p in enumerate(self.probs))

    @property
    def third_moment(self) -> float:
        return math.fsum(k ** 3 * p for k, p in enumerate(self.probs))

    @property
    def mode(self) -> str:
        return SUBCRITICAL if self.mean < 1.0 else SUPERCRITICAL

    @cached_property
    def tail_sums(self) -> np.ndarray:
        """``P(children > i)`` for ``i = 0..K-1``.

        These are the coefficients of ``Q(s)/s`` as a polynomial in ``1 - s``,
        which evaluates the complementary pgf without cancellation at small s.
        """
        p = self.probs_array
        if len(p) == 1:
            return np.zeros(1)
        return np.cumsum(p[::-1])[::-1][1:].copy()

    @cached_property
    def derivative_coefficients(self) -> np.ndarray:
        """Coefficients of ``f'(t) = sum k p_k t^(k-1)`` in powers of t."""
        p = self.probs_array
        if len(p) == 1:
            return np.zeros(1)
        return np.arange(1, len(p)) * p[1:]


@dataclass(frozen=True)
class ModelSpec:
    """A complete branching random walk: jump law, offspring law, mode and label."""

    jump: JumpDistribution
    offspring: OffspringDistribution
    mode: str = SUBCRITICAL
    label: str = ""
    meta: dict = field(default_factory=dict, compare=False, hash=False)

    def __post_init__(self):
        problems = []
        if self.mode not in (SUBCRITICAL, SUPERCRITICAL):
            problems.append(f"mode: must be '{SUBCRITICAL}' or '{SUPERCRITICAL}', got {self.mode!r}")
        elif self.offspring.mode != self.mode:
            problems.append(
                f"mode: declared {self.mode} but offspring mean is {self.offspring.mean:.6g}")
        if not self.jump.strict:
            problems.append("jump: model jumps must satisfy the mean-zero invariant")
        if problems:
            raise ModelValidationError(problems)

    @property
    def m(self) -> float:
        return self.offspring.mean


# ---------------------------------------------------------------------------
# jump law transforms


def _check_theta(theta, lower: float, strict: bool):
    t = np.asarray(theta, dtype=float)
    bad = t <= lower if strict else t < lower
    if np.any(bad) or np.any(np.isnan(t)):
        op = ">" if strict else ">="
        raise DomainError(f"theta must be {op} {lower}, got {theta}")
    return t


def jump_pgf(jump: JumpDistribution, theta):
    """``E(theta^{W_1})`` for ``theta >= 1``; vectorised over theta."""
    t = _check_theta(theta, 1.0, strict=False)
    return _jump_pgf(jump, t)


def _jump_pgf(jump: JumpDistribution, t):
    out = sum(p * np.power(t, float(y)) for y, p in zip(jump.offsets, jump.probs))
    return out if np.ndim(out) else float(out)


def _jump_pgf_prime(jump: JumpDistribution, t):
    out = sum(y * p * np.power(t, float(y - 1)) for y, p in zip(jump.offsets, jump.probs) if y != 0)
    return out if np.ndim(out) else float(out)


def jump_pgf_derivative(jump: JumpDistribution, theta):
    """Derivative of :func:`jump_pgf` for ``theta > 1``."""
    t = _check_theta(theta, 1.0, strict=True)
    return _jump_pgf_prime(jump, t)


def decay_constant(jump: JumpDistribution, gamma: float) -> float:
    """Unique ``theta > 1`` with ``E(theta^{W_1}) = gamma``.

    With ``gamma = 1/m`` this is the base of the exponential tail of the
    maximal displacement. Bracketing by doubling, then safeguarded Newton.
    """
    gamma = float(gamma)
    if not gamma > 1.0:
        raise DomainError(f"gamma must exceed 1, got {gamma}")
    if jump.right_range < 1:
        raise DomainError("jump law has no positive offset; no root above 1")
    lo, hi = 1.0 + 1e-12, 2.0
    doublings = 0
    while _jump_pgf(jump, hi) <= gamma:
        hi *= 2.0
        doublings += 1
        if doublings > 1024 or not math.isfinite(hi):
            raise ConvergenceError("bracket expansion for the decay constant overflowed")
    if _jump_pgf(jump, lo) >= gamma:
        # gamma within rounding of 1: the root is at the bottom of the bracket
        return lo
    theta = newton_bracketed(lambda t: _jump_pgf(jump, t) - gamma,
                             lambda t: _jump_pgf_prime(jump, t), lo, hi)
    if abs(_jump_pgf(jump, theta) - gamma) > 1e-12 * max(1.0, gamma):
        raise ConvergenceError(f"decay constant residual too large at theta={theta}")
    return theta


def lower_decay_constant(jump: JumpDistribution, gamma: float) -> float:
    """The root of ``E(theta^{W_1}) = gamma`` inside ``(0, 1)``.

    It controls how fast the influence of a boundary condition placed far
    above decays in the tail equations (see :mod:`brwmax.exact.tail`).
    """
    if not gamma > 1.0:
        raise DomainError(f"gamma must exceed 1, got {gamma}")
    if jump.left_range < 1:
        raise DomainError("jump law has no negative offset; no root below 1")
    lo = 0.5
    while _jump_pgf(jump, lo) <= gamma:
        lo *= 0.5
    return bisect(lambda t: gamma - _jump_pgf(jump, t), lo, 1.0 - 1e-15, xtol=1e-15)


# ---------------------------------------------------------------------------
# offspring law transforms


def _check_unit(s):
    x = np.asarray(s, dtype=float)
    if np.any(x < 0.0) or np.any(x > 1.0) or np.any(np.isnan(x)):
        raise DomainError(f"argument must lie in [0, 1], got {s}")
    return x


def _scalar(x):
    return float(x) if np.ndim(x) == 0 else x


def offspring_pgf(off: OffspringDistribution, s):
    """``f(s) = sum_k p_k s^k`` on ``[0, 1]``."""
    x = _check_unit(s)
    return _scalar(np.polynomial.polynomial.polyval(x, off.probs_array))


def _offspring_pgf_any(off: OffspringDistribution, s):
    # no domain check; extinction and duality evaluate beyond [0, 1]
    return np.polynomial.polynomial.polyval(s, off.probs_array)


def q_ratio(off: OffspringDistribution, s):
    """``Q(s)/s``, continuous at 0 where it equals the mean.

    Evaluated as ``sum_i P(children > i) (1-s)^i``, which has no cancellation.
    """
    x = _check_unit(s)
    return _scalar(np.polynomial.polynomial.polyval(1.0 - x, off.tail_sums))


def complementary_pgf(off: OffspringDistribution, s):
    """``Q(s) = 1 - f(1 - s)``: chance that at least one child succeeds when
    each succeeds independently with probability ``s``."""
    x = _check_unit(s)
    return _scalar(x * np.polynomial.polynomial.polyval(1.0 - x, off.tail_sums))


def complementary_pgf_derivative(off: OffspringDistribution, s):
    """``Q'(s) = f'(1 - s)``; bounded above by the mean."""
    x = _check_unit(s)
    return _scalar(np.polynomial.polynomial.polyval(1.0 - x, off.derivative_coefficients))


def _one_minus_power(s: np.ndarray, i: int) -> np.ndarray:
    # 1 - (1 - s)^i, accurate both for tiny s and for s near 1
    small = s < 0.5
    out = np.empty_like(s)
    with np.errstate(divide="ignore"):
        out[small] = -np.expm1(i * np.log1p(-s[small]))
    out[~small] = 1.0 - np.power(1.0 - s[~small], i)
    return out


def branching_deficit(off: OffspringDistribution, s):
    """``h(s) = m s - Q(s) >= 0``, the loss relative to linear growth."""
    x = np.atleast_1d(_check_unit(s)).astype(float)
    acc = np.zeros_like(x)
    for i, t in enumerate(off.tail_sums):
        if i and t:
            acc += t * _one_minus_power(x, i)
    out = x * acc
    return float(out[0]) if np.ndim(s) == 0 else out


def relative_deficit(off: OffspringDistribution, s):
    """``H(s) = h(s) / (m s)``, extended by its limit ``H(0) = 0``.

    Nondecreasing on [0, 1] with ``H(1) = (m - 1 + p_0) / m``.
    """
    x = np.atleast_1d(_check_unit(s)).astype(float)
    acc = np.zeros_like(x)
    for i, t in enumerate(off.tail_sums):
        if i and t:
            acc += t * _one_minus_power(x, i)
    out = acc / off.mean
    return float(out[0]) if np.ndim(s) == 0 else out


def extinction_probability(off: OffspringDistribution) -> float:
    """Smallest fixed point of the offspring pgf in [0, 1]."""
    if off.mean <= 1.0:
        return 1.0
    if off.probs[0] <= 0.0:
        return 0.0
    eps = 1e-3
    while _offspring_pgf_any(off, 1.0 - eps) - (1.0 - eps) >= 0.0:
        eps *= 0.5
        if eps < 1e-15:
            raise ConvergenceError("could not separate the extinction root from 1")
    return bisect(lambda s: _offspring_pgf_any(off, s) - s, 0.0, 1.0 - eps, xtol=1e-14)


def dual_offspring(off: OffspringDistribution) -> OffspringDistribution:
    """Offspring law of a supercritical process conditioned on extinction.

    ``p~_k = p_k q^(k-1)``, i.e. pgf ``f(theta q) / q``; the result is
    subcritical with mean ``f'(q)``.
    """
    if off.mode != SUPERCRITICAL:
        raise ModeError("dual_offspring needs a supercritical law")
    if off.probs[0] <= 0.0:
        raise ModeError("dual_offspring needs P(0 children) > 0")
    q = extinction_probability(off)
    return OffspringDistribution(tuple(p * q ** (k - 1) for k, p in enumerate(off.probs)))


def supercritical_partner(off: OffspringDistribution) -> OffspringDistribution:
    """Inverse of :func:`dual_offspring` for a subcritical law.

    Finds ``t > 1`` with ``f(t) = t`` and returns ``p_k t^(k-1)``, whose
    extinction probability is ``1/t``.
    """
    if off.mode != SUBCRITICAL:
        raise ModeError("supercritical_partner needs a subcritical law")
    if off.max_children < 2:
        raise ModeError("a law with at most one child has no supercritical partner")
    if off.probs[0] <= 0.0:
        raise ModeError("supercritical_partner needs P(0 children) > 0")
    hi = 2.0
    while _offspring_pgf_any(off, hi) <= hi:
        hi *= 2.0
    lo = 1.0 + 1e-9
    while _offspring_pgf_any(off, lo) - lo >= 0.0:
        lo = 1.0 + (lo - 1.0) * 0.5
    t = bisect(lambda x: _offspring_pgf_any(off, x) - x, lo, hi, xtol=1e-15)
    return OffspringDistribution(tuple(p * t ** (k - 1) for k, p in enumerate(off.probs)))


def offspring_pgf_derivative(off: OffspringDistribution, s: float) -> float:
    """``f'(s)``; at ``s = q`` this is the mean of the dual law."""
    return float(np.polynomial.polynomial.polyval(s, off.derivative_coefficients))


# ---------------------------------------------------------------------------
# named constructors for the closed-form single-lineage models


def simple_walk() -> JumpDistribution:
    return JumpDistribution((-1, 1), (0.5, 0.5))


def single_lineage(m: float) -> OffspringDistribution:
    """Each particle leaves one child with probability m, else none."""
    return OffspringDistribution((1.0 - m, m))


def single_lineage_model(m: float) -> ModelSpec:
    return ModelSpec(simple_walk(), single_lineage(m), SUBCRITICAL,
                     f"single lineage, simple walk, m={m:g}")
