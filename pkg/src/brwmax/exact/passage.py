"""Discounted first passage of the single-particle walk.

``phi(x) = E^x(s^tau)`` where ``tau`` is the first time the walk is at or
above the target level. It solves ``phi(x) = s * sum_y a_y phi(x + y)``
below the target with ``phi = 1`` at or above it. The chain is cut off at
depth ``-D`` (``phi = 0`` below); a walk that has to climb back from there
pays at least ``s^(D/R)``.

Values decay like ``rho_s^-(n - x)`` with ``K(rho_s) = 1/s``, so the linear
system is solved for ``psi(x) = rho_s^(n - x) phi(x)``, whose one-step
weights ``s a_y rho_s^y`` sum to one. The system is banded and solved
directly.

Shifting start and target together leaves ``phi`` unchanged, so a single
solve at target ``N`` yields ``E(s^tau_k) = phi(N - k)`` for every
``k <= N``, each with at least the depth of the deepest one.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_banded

from ..errors import ConfigurationError, ConvergenceError, DomainError
from ..model import JumpDistribution, decay_constant

MAX_DOUBLINGS = 12


@dataclass
class FirstPassageSolution:
    """``phi(x) = E^x(s^tau_n)`` for ``x`` in ``[-depth, level - 1]``.

    ``scaled`` holds ``rho_s^(level - x) phi(x)``; ``log_values`` the
    logarithm of ``phi`` (finite even where ``phi`` underflows).
    """

    level: int
    discount: float
    depth: int
    values: np.ndarray
    scaled: np.ndarray
    log_values: np.ndarray
    truncation_bound: float
    decay: float
    tolerance: float
    residual: float

    @property
    def positions(self) -> np.ndarray:
        return np.arange(-self.depth, self.level)

    def phi(self, x: int) -> float:
        if x >= self.level:
            return 1.0
        if x < -self.depth:
            return 0.0
        return float(self.values[x + self.depth])

    @property
    def value(self) -> float:
        """``E(s^tau_n)`` started from the origin."""
        return self.phi(0)

    @property
    def log_value(self) -> float:
        if self.level == 0:
            return 0.0
        return float(self.log_values[self.depth])

    def pgf_of_level(self, k: int) -> float:
        """``E(s^tau_k)`` from the origin for ``0 <= k <= level``."""
        return self.phi(self.level - k)

    def scaled_of_level(self, k: int) -> float:
        """``rho_s^k E(s^tau_k)``."""
        if k == 0:
            return 1.0
        return float(self.scaled[self.level - k + self.depth])


def default_depth(jump: JumpDistribution, s: float, tol: float) -> int:
    return jump.right_range * math.ceil(math.log(10.0 / tol) / math.log(1.0 / s))


def _check(jump: JumpDistribution, s: float, tol: float):
    if not (0.0 < s < 1.0):
        raise DomainError(f"discount must lie in (0, 1), got {s}")
    if not tol > 0:
        raise ConfigurationError(f"tol must be positive, got {tol}")
    if jump.right_range < 1:
        raise DomainError("the walk has no positive step; levels above 0 are unreachable")


def _band_system(jump: JumpDistribution, weights: np.ndarray, size: int) -> np.ndarray:
    """``I - W`` for one-step weights ``weights[y]`` on ``size`` consecutive sites."""
    L, R = jump.left_range, jump.right_range
    band = np.zeros((L + R + 1, size))
    band[R, :] = 1.0
    rows = np.arange(size)
    for y, w in zip(jump.offsets, weights):
        cols = rows + y
        ok = (cols >= 0) & (cols < size)
        # storage for (l, u) = (L, R): band[u + i - j, j]
        band[R + rows[ok] - cols[ok], cols[ok]] -= w
    return band


def _solve_scaled(jump: JumpDistribution, s: float, level: int, depth: int, rho_s: float):
    size = level + depth
    x = np.arange(-depth, level)
    w = s * jump.probs_array * np.exp(jump.offsets_array * math.log(rho_s))
    band = _band_system(jump, w, size)
    rhs = np.zeros(size)
    log_rho = math.log(rho_s)
    for y, wy in zip(jump.offsets, w):
        if y <= 0:
            continue
        hit = x + y >= level
        rhs[hit] += wy * np.exp((level - x[hit] - y) * log_rho)
    psi = solve_banded((jump.left_range, jump.right_range), band, rhs)
    # residual of the scaled equation
    full = np.concatenate([np.zeros(jump.left_range), psi,
                           np.exp(-np.arange(jump.right_range) * log_rho)])
    acc = np.zeros(size)
    for y, wy in zip(jump.offsets, w):
        acc += wy * full[jump.left_range + y: jump.left_range + y + size]
    res = float(np.max(np.abs(psi - acc))) if size else 0.0
    return psi, res


def first_passage_pgf(jump: JumpDistribution, s: float, level: int, tol: float = 1e-12,
                      depth: int | None = None) -> FirstPassageSolution:
    """Solve for ``E^x(s^tau_level)`` on ``[-D, level - 1]``.

    The depth starts at ``R * ceil(log(10/tol) / log(1/s))`` and doubles
    until the scaled values at starts ``0..level-1`` stop moving by more
    than ``tol``. Values below the origin are those of the truncated chain.
    """
    _check(jump, s, tol)
    level = int(level)
    if level < 0:
        raise DomainError(f"level must be nonnegative, got {level}")
    rho_s = decay_constant(jump, 1.0 / s)
    log_rho = math.log(rho_s)
    if level == 0:
        empty = np.zeros(0)
        return FirstPassageSolution(0, s, 0, empty, empty, empty, 0.0, rho_s, tol, 0.0)
    D = default_depth(jump, s, tol) if depth is None else int(depth)
    psi, res = _solve_scaled(jump, s, level, D, rho_s)
    for _ in range(MAX_DOUBLINGS):
        psi2, res2 = _solve_scaled(jump, s, level, 2 * D, rho_s)
        # compare where it is reported: starts at or above the origin
        change = float(np.max(np.abs(psi2[2 * D:] - psi[D:])))
        D, psi, res = 2 * D, psi2, res2
        if change < tol:
            break
    else:
        raise ConvergenceError("first-passage depth doubling did not stabilise", last_gap=change)
    x = np.arange(-D, level)
    with np.errstate(divide="ignore"):
        log_phi = np.log(np.maximum(psi, 0.0)) - (level - x) * log_rho
    phi = np.exp(log_phi)
    bound = s ** (D / jump.right_range)
    return FirstPassageSolution(level, s, D, phi, psi, log_phi, bound, rho_s, tol, res)


def scaled_passage_table(jump: JumpDistribution, s: float, max_level: int,
                         tol: float = 1e-12) -> np.ndarray:
    """``rho_s^k E(s^tau_k)`` for ``k = 0..max_level`` from one solve."""
    sol = first_passage_pgf(jump, s, max_level, tol)
    return np.array([sol.scaled_of_level(k) for k in range(max_level + 1)])


def passage_log_table(jump: JumpDistribution, s: float, max_level: int,
                      tol: float = 1e-12) -> np.ndarray:
    """``log E(s^tau_k)`` for ``k = 0..max_level``."""
    sol = first_passage_pgf(jump, s, max_level, tol)
    out = np.zeros(max_level + 1)
    for k in range(1, max_level + 1):
        out[k] = sol.log_values[max_level - k + sol.depth]
    return out


def ell_bar_table(jump: JumpDistribution, m: float, max_level: int, tol: float = 1e-12) -> np.ndarray:
    """``rho^k E(m^tau_k)`` with ``rho = rho(1/m)``, ``k = 0..max_level``."""
    return scaled_passage_table(jump, m, max_level, tol)


@dataclass
class OvershootLaw:
    """``masses[k] = E(s^tau_1; W_tau_1 = 1 + k)`` for ``k = 0..R-1``.

    When built at ``s = m`` the weights ``rho^(k+1) masses[k]`` form a
    probability vector; ``weights`` is None otherwise.
    """

    discount: float
    masses: np.ndarray
    weights: np.ndarray | None
    weight_sum: float | None
    depth: int
    tolerance: float

    @property
    def total(self) -> float:
        return float(self.masses.sum())


def _overshoot_solve(jump: JumpDistribution, s: float, depth: int) -> np.ndarray:
    # unknowns on [-depth, 0]; one right-hand side per landing site 1 + k
    size = depth + 1
    x = np.arange(-depth, 1)
    w = s * jump.probs_array
    band = _band_system(jump, w, size)
    R = jump.right_range
    rhs = np.zeros((size, R))
    for k in range(R):
        need = 1 + k - x
        a = np.array([jump.prob(int(y)) for y in need])
        rhs[:, k] = s * a
    sol = solve_banded((jump.left_range, jump.right_range), band, rhs)
    return sol[-1]


def overshoot_pgf(jump: JumpDistribution, s: float, tol: float = 1e-12,
                  weights_for_m: float | None = None) -> OvershootLaw:
    """Discounted law of the landing site when level 1 is first reached.

    Pass ``weights_for_m = m`` (with ``s = m``) to populate the weights
    ``rho(1/m)^(k+1) p_k(m)``.
    """
    _check(jump, s, tol)
    D = default_depth(jump, s, tol)
    masses = _overshoot_solve(jump, s, D)
    for _ in range(MAX_DOUBLINGS):
        m2 = _overshoot_solve(jump, s, 2 * D)
        change = float(np.max(np.abs(m2 - masses)))
        D, masses = 2 * D, m2
        if change < tol:
            break
    else:
        raise ConvergenceError("overshoot depth doubling did not stabilise", last_gap=change)
    masses = np.maximum(masses, 0.0)
    weights = weight_sum = None
    if weights_for_m is not None:
        if abs(weights_for_m - s) > 1e-15:
            raise ConfigurationError("weights are defined only at discount s = m")
        rho = decay_constant(jump, 1.0 / s)
        weights = masses * rho ** np.arange(1, jump.right_range + 1)
        weight_sum = float(math.fsum(weights))
    return OvershootLaw(s, masses, weights, weight_sum, D, tol)


def renewal_prediction(weights: np.ndarray, ell_bar: np.ndarray, rho: float) -> np.ndarray:
    """Right side of ``ell_bar(n+1) = sum_k w_k ell_bar(n-k)`` for each n.

    ``ell_bar(j) = rho^j`` for negative j (level already reached).
    Entry ``n`` of the result predicts ``ell_bar[n + 1]``.
    """
    N = len(ell_bar) - 1
    out = np.zeros(N)
    for n in range(N):
        acc = 0.0
        for k, w in enumerate(weights):
            j = n - k
            acc += w * (ell_bar[j] if j >= 0 else rho ** j)
        out[n] = acc
    return out


@dataclass
class SupermultiplicativityResult:
    pairs: list
    holds: list
    margins: list
    strict: list
    monotone_along_doubling: bool


def check_supermultiplicativity(jump: JumpDistribution, gamma: float, pairs, tol: float = 1e-10,
                                solve_tol: float = 1e-13) -> SupermultiplicativityResult:
    """Test ``E(g^tau_(k+l)) >= E(g^tau_k) E(g^tau_l) - tol`` for each pair.

    ``margins`` are left minus right side; ``strict`` marks margins above
    ``tol``. Also checks that ``log E(g^tau_n) / n`` does not decrease
    along ``n = 1, 2, 4, ...`` (the direction a supermultiplicative
    sequence must take along doublings).
    """
    pairs = [(int(k), int(l)) for k, l in pairs]
    top = max(k + l for k, l in pairs)
    sol = first_passage_pgf(jump, gamma, max(top, 1), solve_tol)
    E = [sol.pgf_of_level(k) for k in range(top + 1)]
    holds, margins, strict = [], [], []
    for k, l in pairs:
        margin = E[k + l] - E[k] * E[l]
        margins.append(margin)
        holds.append(margin >= -tol)
        strict.append(margin > tol)
    logs = passage_log_table(jump, gamma, max(top, 1), solve_tol)
    seq, n = [], 1
    while n <= top:
        seq.append(logs[n] / n)
        n *= 2
    monotone = all(b >= a - 1e-12 for a, b in zip(seq, seq[1:]))
    return SupermultiplicativityResult(pairs, holds, margins, strict, monotone)
