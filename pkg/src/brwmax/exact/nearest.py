"""Closed forms for the simple walk (steps of +-1 with probability 1/2).

Hitting times of the simple walk have an exact law,
``P(tau_n = j) = (n / j) P(W_j = n)``. The binomial mass is evaluated with
Loader's saddle-point expansion, which keeps about 1e-14 relative
accuracy for any number of steps, where a difference of log-gamma values
would lose digits to cancellation once ``j`` is large.
"""

from __future__ import annotations

import math
from functools import lru_cache

import numpy as np

from ..errors import DomainError

_HALF_LOG_2PI = 0.5 * math.log(2.0 * math.pi)
_S0, _S1, _S2, _S3, _S4 = 1 / 12, 1 / 360, 1 / 1260, 1 / 1680, 1 / 1188


@lru_cache(maxsize=None)
def _stirlerr_small(n: int) -> float:
    return math.lgamma(n + 1.0) - (n + 0.5) * math.log(n) + n - _HALF_LOG_2PI


def stirlerr(n: int) -> float:
    """``log(n!) - log(sqrt(2 pi n) (n/e)^n)`` for integer ``n >= 1``."""
    if n <= 15:
        return _stirlerr_small(n)
    nn = float(n) * n
    if n > 500:
        return (_S0 - _S1 / nn) / n
    if n > 80:
        return (_S0 - (_S1 - _S2 / nn) / nn) / n
    if n > 35:
        return (_S0 - (_S1 - (_S2 - _S3 / nn) / nn) / nn) / n
    return (_S0 - (_S1 - (_S2 - (_S3 - _S4 / nn) / nn) / nn) / nn) / n


def bd0(x: float, mean: float) -> float:
    """Deviance term ``x log(x/mean) + mean - x`` without cancellation."""
    if abs(x - mean) < 0.1 * (x + mean):
        v = (x - mean) / (x + mean)
        s = (x - mean) * v
        ej = 2.0 * x * v
        v2 = v * v
        j = 1
        while True:
            ej *= v2
            s1 = s + ej / (2 * j + 1)
            if s1 == s:
                return s1
            s = s1
            j += 1
    d = (x - mean) / mean
    return mean * ((1.0 + d) * math.log1p(d) - d)


def log_binomial_half(steps: int, ups: int) -> float:
    """``log P(Bin(steps, 1/2) = ups)``."""
    if ups < 0 or ups > steps:
        return -math.inf
    if ups == 0 or ups == steps:
        return -steps * math.log(2.0)
    mean = 0.5 * steps
    down = steps - ups
    lc = (stirlerr(steps) - stirlerr(ups) - stirlerr(down)
          - bd0(ups, mean) - bd0(down, mean))
    return lc + 0.5 * math.log(steps / (2.0 * math.pi * ups * down))


def log_simple_walk_passage_pmf(level: int, steps: int) -> float:
    """``log P(tau_level = steps)`` for the simple walk; ``-inf`` if impossible."""
    if level < 1:
        raise DomainError(f"level must be at least 1, got {level}")
    if steps < level or (steps - level) % 2:
        return -math.inf
    ups = (steps + level) // 2
    return math.log(level / steps) + log_binomial_half(steps, ups)


def simple_walk_passage_pmf(level: int, steps: int) -> float:
    """``P(tau_level = steps)`` for the simple walk started at 0."""
    return math.exp(log_simple_walk_passage_pmf(level, steps))


def _logsumexp(logs) -> float:
    logs = np.asarray(list(logs), dtype=float)
    if logs.size == 0:
        return -math.inf
    top = logs.max()
    if top == -math.inf:
        return -math.inf
    return float(top + math.log(math.fsum(np.exp(logs - top))))


def log_passage_window_prob(level: int, lo: float, hi: float) -> float:
    """``log P(lo <= tau_level <= hi)`` by exact summation of the pmf."""
    first = max(level, math.ceil(lo))
    if (first - level) % 2:
        first += 1
    last = math.floor(hi)
    return _logsumexp(log_simple_walk_passage_pmf(level, j) for j in range(first, last + 1, 2))


def local_deviation_rate(a: float) -> float:
    """``lambda(a) = (a+1)^((a+1)/2) (a-1)^((a-1)/2) a^-a`` for ``a > 1``.

    ``P(tau_n ~ a n)`` decays like ``lambda(a)^-n``; lambda tends to 2 as
    ``a -> 1`` and to 1 as ``a -> infinity``.
    """
    if not a > 1.0:
        raise DomainError(f"a must exceed 1, got {a}")
    return math.exp(log_local_deviation_rate(a))


def log_local_deviation_rate(a: float) -> float:
    if not a > 1.0:
        raise DomainError(f"a must exceed 1, got {a}")
    return (0.5 * (a + 1) * math.log(a + 1) + 0.5 * (a - 1) * math.log(a - 1)
            - a * math.log(a))


def simple_walk_optimal_tilt(x: float) -> float:
    """Tilt ``sqrt((x+1)/(x-1))`` solving ``theta K'(theta) / K(theta) = 1/x``."""
    if not x > 1.0:
        raise DomainError(f"x must exceed 1, got {x}")
    return math.sqrt((x + 1.0) / (x - 1.0))


def simple_walk_exponent(m: float, x: float) -> float:
    """Growth exponent of ``rho^n P(M_(xn) >= n)`` for the single-lineage
    simple-walk model; zero at ``x = 1/sqrt(1 - m^2)``, negative below."""
    if not 0.0 < m < 1.0:
        raise DomainError(f"m must lie in (0, 1), got {m}")
    if not x > 1.0:
        raise DomainError(f"x must exceed 1, got {x}")
    rho = (1.0 + math.sqrt(1.0 - m * m)) / m
    return (math.log(rho) + x * math.log(m * x)
            - 0.5 * (x - 1) * math.log(x - 1) - 0.5 * (x + 1) * math.log(x + 1))


def single_lineage_reach_prob(m: float, generations: int, level: int) -> float:
    """``P(M_generations >= level)`` for the single-lineage simple-walk model.

    The lone lineage survives ``j`` steps with probability ``m^j``, so this
    is ``sum_(level <= j <= generations) m^j P(tau_level = j)``.
    """
    if not 0.0 < m < 1.0:
        raise DomainError(f"m must lie in (0, 1), got {m}")
    if level <= 0:
        return 1.0
    if generations < level:
        return 0.0
    log_m = math.log(m)
    logs = [j * log_m + log_simple_walk_passage_pmf(level, j)
            for j in range(level, generations + 1, 2)]
    return math.exp(_logsumexp(logs))


def single_lineage_tail(m: float, level: int) -> float:
    """``P(M >= level) = rho^-level`` with ``rho = (1 + sqrt(1 - m^2)) / m``."""
    rho = (1.0 + math.sqrt(1.0 - m * m)) / m
    return rho ** (-level)
