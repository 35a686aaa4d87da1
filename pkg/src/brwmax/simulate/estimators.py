"""Monte Carlo estimators built on the block engine."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import binomtest, norm

from ..errors import ConfigurationError, DomainError, ModeError
from ..exact.tail import TailTable
from ..model import (
    SUBCRITICAL,
    SUPERCRITICAL,
    JumpDistribution,
    ModelSpec,
    decay_constant,
    extinction_probability,
    q_ratio,
)
from .engine import (
    EXTINCT,
    STREAM_PASSAGE_WALK,
    STREAM_REFLECTED_WALK,
    BlockOutcome,
    SimConfig,
    block_generator,
    run_block_tasks,
    run_blocks,
)

Z95 = float(norm.ppf(0.975))
EXCLUSION_WARN = 1e-3
LOW_POWER = 100


@dataclass
class Estimate:
    """A Monte Carlo estimate with its sampling error.

    For proportions ``stderr = sqrt(p (1 - p) / n)`` and the interval is
    Wilson's; for means the interval is normal. ``excluded`` counts
    replications dropped from the denominator (censored before the event
    was decided).
    """

    point: float
    stderr: float
    ci95_low: float
    ci95_high: float
    replications_used: int
    successes: int | None = None
    excluded: int = 0
    method: str = "wilson"
    flags: list = field(default_factory=list)

    def z_against(self, exact: float) -> float | None:
        """Standardised deviation from an exact value; None when the
        standard error is zero (the check then is exact equality)."""
        if self.stderr == 0:
            return None
        return (self.point - exact) / self.stderr


def proportion_estimate(successes: int, trials: int, excluded: int = 0) -> Estimate:
    successes, trials = int(successes), int(trials)
    if trials == 0:
        return Estimate(math.nan, math.nan, 0.0, 1.0, 0, 0, excluded, "wilson", ["no trials"])
    p = successes / trials
    ci = binomtest(successes, trials).proportion_ci(confidence_level=0.95, method="wilson")
    est = Estimate(p, math.sqrt(p * (1.0 - p) / trials), float(ci.low), float(ci.high),
                   trials, successes, excluded, "wilson")
    if trials + excluded and excluded / (trials + excluded) > EXCLUSION_WARN:
        est.flags.append(f"excluded fraction {excluded / (trials + excluded):.2e} above "
                         f"{EXCLUSION_WARN:g}: raise the caps")
    return est


def mean_estimate(total: float, total_sq: float, count: int, bias_bound: float = 0.0) -> Estimate:
    """Normal-theory interval for a sample mean, widened by ``bias_bound``."""
    count = int(count)
    mean = total / count
    var = max(total_sq / count - mean * mean, 0.0) * count / max(count - 1, 1)
    se = math.sqrt(var / count)
    half = Z95 * se + bias_bound
    return Estimate(mean, se, mean - half, mean + half, count, None, 0, "normal")


def _require_subcritical(model: ModelSpec):
    if model.mode != SUBCRITICAL:
        raise ModeError("this estimator needs a subcritical model; use the extinction-conditioned runner")


# --------------------------------------------------------------------------
# reducers: picklable callables turning a BlockOutcome into summable counts


class _TailCounts:
    def __init__(self, levels):
        self.levels = list(levels)

    def __call__(self, block: BlockOutcome):
        done = block.status == EXTINCT
        succ = np.array([int(np.count_nonzero(block.M >= k)) for k in self.levels], dtype=np.int64)
        undecided = np.array([int(np.count_nonzero(~done & (block.M < k))) for k in self.levels],
                             dtype=np.int64)
        return {"succ": succ, "excl": undecided, "n": np.int64(block.size),
                "progeny": np.int64(block.progeny.sum()),
                "progeny_sq": float(np.sum(block.progeny.astype(float) ** 2))}


def estimate_tail(model: ModelSpec, levels, config: SimConfig) -> dict[int, Estimate]:
    """``P(M >= n)`` for each level from one shared set of replications.

    A replication stopped by a cap counts as a success once it has reached
    the level and is excluded from that level's denominator otherwise.
    """
    _require_subcritical(model)
    levels = [int(k) for k in levels]
    tally = run_blocks(model, config, _TailCounts(levels))
    out = {}
    for i, k in enumerate(levels):
        excl = int(tally["excl"][i])
        out[k] = proportion_estimate(tally["succ"][i], int(tally["n"]) - excl, excl)
    return out


def estimate_progeny(model: ModelSpec, config: SimConfig) -> Estimate:
    """Mean total number of individuals ever alive (root included)."""
    _require_subcritical(model)
    tally = run_blocks(model, config, _TailCounts([0]))
    return mean_estimate(float(tally["progeny"]), tally["progeny_sq"], int(tally["n"]))


def level_for(c: float, n: int) -> int:
    """``ceil(c n)``, immune to rounding such as ``0.4 * 50 = 20.000000000000004``."""
    x = c * n
    r = round(x)
    return int(r) if abs(x - r) <= 1e-9 * max(1.0, abs(x)) else math.ceil(x)


class _ReachCounts:
    def __init__(self, pairs):
        self.pairs = list(pairs)  # (level, generation)

    def __call__(self, block: BlockOutcome):
        succ, excl = [], []
        for level, gen in self.pairs:
            hit = block.reached_by(level, gen)
            known = block.known_by(gen)
            succ.append(int(np.count_nonzero(hit)))
            excl.append(int(np.count_nonzero(~hit & ~known)))
        return {"succ": np.array(succ, dtype=np.int64), "excl": np.array(excl, dtype=np.int64),
                "n": np.int64(block.size)}


def estimate_reach(model: ModelSpec, pairs, config: SimConfig) -> dict:
    """``P(M_g >= level)`` for each ``(level, g)`` pair, shared replications."""
    _require_subcritical(model)
    pairs = [(int(k), int(g)) for k, g in pairs]
    tally = run_blocks(model, config, _ReachCounts(pairs))
    out = {}
    for i, pair in enumerate(pairs):
        excl = int(tally["excl"][i])
        out[pair] = proportion_estimate(tally["succ"][i], int(tally["n"]) - excl, excl)
    return out


def scale_estimate(est: Estimate, factor: float) -> Estimate:
    scaled = Estimate(est.point * factor, est.stderr * factor, est.ci95_low * factor,
                      est.ci95_high * factor, est.replications_used, est.successes,
                      est.excluded, est.method, list(est.flags))
    return scaled


def estimate_g(model: ModelSpec, c: float, n: int, config: SimConfig) -> Estimate:
    """``rho^(c n) P(M_n >= ceil(c n))`` with ``rho = rho(1/m)``."""
    if not c > 0:
        raise DomainError(f"c must be positive, got {c}")
    return estimate_g_grid(model, [c], [n], config)[(c, n)]


def estimate_g_grid(model: ModelSpec, c_grid, n_grid, config: SimConfig) -> dict:
    """:func:`estimate_g` for every ``(c, n)`` on a grid, shared replications."""
    _require_subcritical(model)
    rho = decay_constant(model.jump, 1.0 / model.m)
    cells = [(c, n) for c in c_grid for n in n_grid]
    pairs = sorted({(level_for(c, n), n) for c, n in cells})
    raw = estimate_reach(model, pairs, config)
    out = {}
    for c, n in cells:
        level = level_for(c, n)
        factor = math.exp(c * n * math.log(rho))
        est = scale_estimate(raw[(level, n)], factor)
        if level <= 0:
            est = Estimate(factor, 0.0, factor, factor, raw[(level, n)].replications_used, None,
                           0, "exact")
        elif est.stderr > est.point:
            est.flags.append("noise-dominated: standard error exceeds the estimate")
        out[(c, n)] = est
    return out


class _ConditionalCounts:
    def __init__(self, levels, a_values):
        self.levels, self.a_values = list(levels), list(a_values)

    def __call__(self, block: BlockOutcome):
        num = np.zeros((len(self.a_values), len(self.levels)), dtype=np.int64)
        den = np.zeros(len(self.levels), dtype=np.int64)
        excl = np.zeros(len(self.levels), dtype=np.int64)
        done = block.status == EXTINCT
        for j, n in enumerate(self.levels):
            hit = block.first_hit_generation(n)
            reached = hit >= 0
            # a capped run that has not reached n may still do so: drop it
            excl[j] = np.count_nonzero(~done & ~reached)
            den[j] = np.count_nonzero(reached)
            for i, a in enumerate(self.a_values):
                num[i, j] = np.count_nonzero(reached & (hit <= math.floor(a * n + 1e-9)))
        return {"num": num, "den": den, "excl": excl}


def estimate_conditional(model: ModelSpec, a_values, levels, config: SimConfig) -> dict:
    """``P(M_(floor(a n)) >= n | M >= n)`` for every ``a`` and level.

    Keys are ``(a, n)``. The denominator is the number of replications with
    ``M >= n``; runs below 100 are flagged as low power.
    """
    _require_subcritical(model)
    a_values = [float(a) for a in a_values]
    if any(a <= 0 for a in a_values):
        raise DomainError("a must be positive")
    levels = [int(n) for n in levels]
    tally = run_blocks(model, config, _ConditionalCounts(levels, a_values))
    out = {}
    for i, a in enumerate(a_values):
        for j, n in enumerate(levels):
            est = proportion_estimate(tally["num"][i, j], tally["den"][j], int(tally["excl"][j]))
            if tally["den"][j] < LOW_POWER:
                est.flags.append(f"low power: only {int(tally['den'][j])} runs reached level {n}")
            out[(a, n)] = est
    return out


# --------------------------------------------------------------------------
# supercritical runs conditioned on extinction


@dataclass
class ConditionedRun:
    """Rejection sampling of extinct runs of a supercritical model.

    A run is accepted when it dies out within the caps; runs exceeding the
    population cap are rejected (their chance of later extinction is at
    most ``q^cap``).
    """

    total: int
    accepted: int
    extinction_probability: float
    acceptance: Estimate
    bias_bound: float
    tail_accepted: dict
    reach_any: dict
    flags: list

    def conditional_tail(self, level: int) -> Estimate:
        """``P(M >= level | extinction)`` from the accepted runs."""
        return proportion_estimate(self.tail_accepted[level], self.accepted)

    def unconditional_tail(self, level: int) -> Estimate:
        """``P(M >= level)`` counting every rejected run as reaching the level.

        Survival of a supercritical walk with mean-zero steps carries the
        maximum to infinity, so a surviving run reaches every level.
        """
        return proportion_estimate(self.reach_any[level], self.total)


class _ConditionedCounts:
    def __init__(self, levels):
        self.levels = list(levels)

    def __call__(self, block: BlockOutcome):
        ok = block.status == EXTINCT
        acc_tail = np.array([int(np.count_nonzero(ok & (block.M >= k))) for k in self.levels],
                            dtype=np.int64)
        any_tail = acc_tail + int(np.count_nonzero(~ok))
        return {"n": np.int64(block.size), "acc": np.int64(np.count_nonzero(ok)),
                "acc_tail": acc_tail, "any_tail": any_tail}


def simulate_conditioned_on_extinction(model: ModelSpec, levels, config: SimConfig) -> ConditionedRun:
    """Run ``config.replications`` supercritical replications and keep the
    ones that die out. Subcritical input accepts everything."""
    levels = [int(k) for k in levels]
    q = extinction_probability(model.offspring)
    tally = run_blocks(model, config, _ConditionedCounts(levels))
    total, accepted = int(tally["n"]), int(tally["acc"])
    acceptance = proportion_estimate(accepted, total)
    flags = []
    bias = q ** config.population_cap if model.mode == SUPERCRITICAL else 0.0
    if acceptance.stderr > 0 and abs(acceptance.point - q) > 5 * acceptance.stderr:
        flags.append(f"acceptance {acceptance.point:.6f} deviates from q={q:.6f} by more than "
                     "5 standard errors: caps too small")
    tail_acc = {k: int(tally["acc_tail"][i]) for i, k in enumerate(levels)}
    any_tail = {k: int(tally["any_tail"][i]) for i, k in enumerate(levels)}
    return ConditionedRun(total, accepted, q, acceptance, bias, tail_acc, any_tail, flags)


# --------------------------------------------------------------------------
# reflected-walk martingale


@dataclass
class MartingaleResult:
    start: int
    horizons: list
    estimates: dict
    clamped: int
    walks: int
    flags: list


def martingale_mean(model: ModelSpec, table: TailTable, start: int, horizons, config: SimConfig,
                    ) -> MartingaleResult:
    """Empirical mean of the reflected-walk martingale at each horizon.

    The walk steps by ``-y`` with probability ``a_y``. Until it first sits
    at or below 0 its weight is multiplied by ``Q(u(x)) / u(x)`` at each
    site visited; the value at horizon ``h`` is ``weight * u(W_h)`` if
    still above 0, and ``(1 - p_0)`` times the weight before the absorbing
    step otherwise. Its mean is ``u(start)`` at every horizon.

    ``config.replications`` walks are shared across horizons. Walks that
    climb past the table's certified window read the uncertified tail of
    the table (zero beyond the horizon) and are counted in ``clamped``.
    """
    _require_subcritical(model)
    start = int(start)
    if not 1 <= start <= table.report_limit:
        raise ConfigurationError(f"start {start} outside the certified window 1..{table.report_limit}")
    horizons = sorted(int(h) for h in horizons)
    if horizons[0] < 0:
        raise ConfigurationError("horizons must be nonnegative")
    task = _MartingaleTask(model, table, start, horizons, config)
    total = run_block_tasks(task, config)
    estimates = {}
    for i, h in enumerate(horizons):
        estimates[h] = mean_estimate(total["sum"][i], total["sumsq"][i], config.replications)
    flags = []
    clamped = int(total["clamped"])
    if clamped / config.replications > EXCLUSION_WARN:
        flags.append(f"{clamped} walks left the certified window; widen the table")
    return MartingaleResult(start, horizons, estimates, clamped, config.replications, flags)


class _MartingaleTask:
    """Block reducer that ignores the branching outcome and simulates
    reflected walks from the block's own stream instead."""

    def __init__(self, model, table, start, horizons, config):
        self.start, self.horizons, self.seed = start, horizons, config.master_seed
        jump = model.jump
        self.steps = -jump.offsets_array
        self.cdf = np.cumsum(jump.probs_array)
        self.cdf[-1] = np.inf
        self.survive = 1.0 - model.offspring.probs[0]
        N = table.horizon
        u = np.asarray(table.values, dtype=float).copy()
        u[0] = 1.0
        # Q(u)/u on 0..N, and m beyond the table where u = 0
        self.u = np.concatenate([u, [0.0]])
        self.factor = np.concatenate([q_ratio(model.offspring, np.clip(u, 0, 1)), [model.m]])
        self.N = N
        self.window = table.report_limit

    def run(self, block_index, size):
        rng = block_generator(self.seed, block_index, STREAM_REFLECTED_WALK)
        pos = np.full(size, self.start, dtype=np.int64)
        weight = np.ones(size)
        absorbed = np.zeros(size)
        alive = np.ones(size, dtype=bool)
        outside = np.zeros(size, dtype=bool)
        sums = np.zeros(len(self.horizons))
        sumsq = np.zeros(len(self.horizons))
        step = 0
        for i, h in enumerate(self.horizons):
            while step < h:
                step += 1
                idx = np.flatnonzero(alive)
                if idx.size == 0:
                    break
                new = pos[idx] + self.steps[np.searchsorted(self.cdf, rng.random(idx.size), side="right")]
                pos[idx] = new
                down = new <= 0
                absorbed[idx[down]] = weight[idx[down]] * self.survive
                alive[idx[down]] = False
                up = idx[~down]
                outside[up[pos[up] > self.window]] = True
                weight[up] *= self.factor[np.minimum(pos[up], self.N + 1)]
            step = max(step, h)
            value = np.where(alive, weight * self.u[np.minimum(pos, self.N + 1)], absorbed)
            sums[i] = math.fsum(value)
            sumsq[i] = math.fsum(value * value)
        return {"sum": sums, "sumsq": sumsq, "clamped": np.int64(np.count_nonzero(outside))}


# --------------------------------------------------------------------------
# first passage of the single walk


class _PassageTask:
    def __init__(self, jump: JumpDistribution, s: float, level: int, step_cap: int, seed: int):
        self.offsets = jump.offsets_array
        self.cdf = np.cumsum(jump.probs_array)
        self.cdf[-1] = np.inf
        self.s, self.level, self.cap, self.seed = s, level, step_cap, seed

    def run(self, block_index, size):
        rng = block_generator(self.seed, block_index, STREAM_PASSAGE_WALK)
        pos = np.zeros(size, dtype=np.int64)
        active = np.arange(size)
        value = np.zeros(size)
        log_s = math.log(self.s)
        for t in range(1, self.cap + 1):
            if active.size == 0:
                break
            pos[active] += self.offsets[np.searchsorted(self.cdf, rng.random(active.size), side="right")]
            hit = pos[active] >= self.level
            value[active[hit]] = math.exp(t * log_s)
            active = active[~hit]
        return {"sum": math.fsum(value), "sumsq": math.fsum(value * value),
                "unfinished": np.int64(active.size)}


def estimate_tau_pgf(jump: JumpDistribution, s: float, level: int, config: SimConfig,
                     step_cap: int | None = None) -> Estimate:
    """Monte Carlo ``E(s^tau_level)`` for the single walk.

    Walks still short of the level after ``step_cap`` steps contribute 0;
    the resulting bias, at most ``s^step_cap``, widens the interval.
    """
    if not 0 < s < 1:
        raise DomainError(f"discount must lie in (0, 1), got {s}")
    level = int(level)
    if level <= 0:
        return Estimate(1.0, 0.0, 1.0, 1.0, config.replications, None, 0, "exact")
    if step_cap is None:
        step_cap = max(level, math.ceil(math.log(1e-15) / math.log(s)))
    task = _PassageTask(jump, s, level, step_cap, config.master_seed)
    total = run_block_tasks(task, config)
    bias = s ** step_cap
    est = mean_estimate(total["sum"], total["sumsq"], config.replications, bias_bound=bias)
    est.method = "normal+truncation"
    est.flags.append(f"truncation bias at most {bias:.2e}")
    return est
