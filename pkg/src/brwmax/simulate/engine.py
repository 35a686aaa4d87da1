"""Vectorised branching random walk simulator.

Replications are processed in fixed-size blocks. Block ``b`` draws all of
its randomness from a Philox stream keyed by ``(master_seed, b)``, so the
outcome of every replication depends only on the seed and the block size,
never on how blocks are spread over worker processes.

Inside a block the living particles of all replications are held in two
flat arrays (position, replication id) kept sorted by replication id. One
generation costs O(number of particles): draw a step and a child count per
particle, place children with ``np.repeat`` and take per-replication maxima
with ``np.maximum.reduceat``.

Order of events: every particle first steps, then is replaced by its
children at the new site. The children are the next generation, so a
particle's step is only visible through its descendants.
"""

from __future__ import annotations

import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from ..errors import ConfigurationError
from ..model import ModelSpec

DEFAULT_BLOCK = 65536
WORKERS_ENV = "BRWMAX_WORKERS"

# stream purposes; each gets a disjoint counter range of the same key
STREAM_BRANCHING = 0
STREAM_REFLECTED_WALK = 1
STREAM_PASSAGE_WALK = 2

# outcome status codes
EXTINCT = 0
GENERATION_CAP = 1
POPULATION_CAP = 2


def default_workers() -> int:
    raw = os.environ.get(WORKERS_ENV, "").strip()
    if not raw:
        return 1
    try:
        value = int(raw)
    except ValueError:
        raise ConfigurationError(f"{WORKERS_ENV} must be an integer, got {raw!r}") from None
    if value < 1:
        raise ConfigurationError(f"{WORKERS_ENV} must be at least 1, got {value}")
    return value


@dataclass(frozen=True)
class SimConfig:
    """Monte Carlo settings. Results depend on everything here except ``workers``."""

    replications: int = 100_000
    max_generations: int = 10_000
    population_cap: int = 1_000_000
    master_seed: int = 12345
    workers: int = 1
    block_size: int = DEFAULT_BLOCK

    def __post_init__(self):
        problems = []
        for name in ("replications", "max_generations", "population_cap", "workers", "block_size"):
            if int(getattr(self, name)) < 1:
                problems.append(f"{name} must be at least 1")
        if not 0 <= int(self.master_seed) < 2 ** 64:
            problems.append("master_seed must be a 64-bit unsigned integer")
        if problems:
            raise ConfigurationError("; ".join(problems))

    def blocks(self):
        """``(block_index, size)`` pairs covering all replications."""
        full, rest = divmod(self.replications, self.block_size)
        out = [(b, self.block_size) for b in range(full)]
        if rest:
            out.append((full, rest))
        return out

    def echo(self) -> dict:
        return {"replications": self.replications, "max_generations": self.max_generations,
                "population_cap": self.population_cap, "master_seed": self.master_seed,
                "block_size": self.block_size}


def block_generator(master_seed: int, block_index: int, purpose: int = STREAM_BRANCHING):
    """Counter-based generator for one block and purpose."""
    key = np.array([master_seed, block_index], dtype=np.uint64)
    counter = np.array([0, 0, purpose, 0], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key, counter=counter))


@dataclass
class BrwOutcome:
    """One replication.

    ``trajectory[g]`` is the maximum position over generations ``0..g``.
    ``extinction_generation`` is the first generation with no particles,
    or None when the run stopped at a cap (see ``status``).
    """

    M: int
    extinction_generation: int | None
    trajectory: np.ndarray
    total_progeny: int
    status: int = EXTINCT
    population: np.ndarray | None = None

    @property
    def censored(self) -> bool:
        return self.status != EXTINCT

    def max_by(self, generation: int) -> int:
        """``M_generation``; for a finished run later generations add nothing."""
        if generation < len(self.trajectory):
            return int(self.trajectory[generation])
        return int(self.trajectory[-1])


@dataclass
class BlockOutcome:
    """All replications of one block, in columnar form.

    ``events`` record each increase of a replication's running maximum as
    ``(replication, generation, new maximum)`` in generation order; any
    ``M_g`` can be recovered from them. ``stop_generation`` is the
    extinction generation, or the generation at which a cap stopped the
    run.
    """

    block_index: int
    size: int
    M: np.ndarray
    status: np.ndarray
    stop_generation: np.ndarray
    progeny: np.ndarray
    event_rep: np.ndarray
    event_gen: np.ndarray
    event_max: np.ndarray
    generations_run: int = 0
    particle_steps: int = 0

    def first_hit_generation(self, level: int) -> np.ndarray:
        """Generation at which the running maximum first reaches ``level``;
        ``-1`` where it never does."""
        out = np.full(self.size, -1, dtype=np.int64)
        if level <= 0:
            out[:] = 0
            return out
        mask = self.event_max >= level
        reps, first = np.unique(self.event_rep[mask], return_index=True)
        out[reps] = self.event_gen[mask][first]
        return out

    def reached_by(self, level: int, generation: int) -> np.ndarray:
        """``M_generation >= level`` per replication (False where unknown)."""
        hit = self.first_hit_generation(level)
        return (hit >= 0) & (hit <= generation)

    def known_by(self, generation: int) -> np.ndarray:
        """Replications whose ``M_generation`` is fully observed."""
        return ((self.status == EXTINCT)
                | ((self.status == GENERATION_CAP) & (self.stop_generation >= generation))
                | ((self.status == POPULATION_CAP) & (self.stop_generation > generation)))

    def outcome(self, i: int) -> BrwOutcome:
        mask = self.event_rep == i
        gens, maxima = self.event_gen[mask], self.event_max[mask]
        last = int(self.stop_generation[i])
        # generations 0..last-1 were observed; a generation cap also observes ``last``
        traj = np.zeros(last + 1 if self.status[i] == GENERATION_CAP else last, dtype=np.int64)
        for g, mx in zip(gens, maxima):
            traj[g:] = mx
        ext = last if self.status[i] == EXTINCT else None
        return BrwOutcome(int(self.M[i]), ext, traj, int(self.progeny[i]), int(self.status[i]))


class _Sampler:
    """Inverse-cdf tables for a model's step and offspring laws."""

    def __init__(self, model: ModelSpec):
        jump, off = model.jump, model.offspring
        self.offsets = jump.offsets_array
        self.jump_cdf = np.cumsum(jump.probs_array)
        self.jump_cdf[-1] = np.inf
        self.child_cdf = np.cumsum(off.probs_array)
        self.child_cdf[-1] = np.inf

    def steps(self, rng, n):
        return self.offsets[np.searchsorted(self.jump_cdf, rng.random(n), side="right")]

    def children(self, rng, n):
        return np.searchsorted(self.child_cdf, rng.random(n), side="right")


def _segment_starts(sorted_ids: np.ndarray) -> np.ndarray:
    if sorted_ids.size == 0:
        return np.zeros(0, dtype=np.int64)
    return np.concatenate(([0], np.flatnonzero(np.diff(sorted_ids)) + 1))


def simulate_block(model: ModelSpec, config: SimConfig, block_index: int, size: int) -> BlockOutcome:
    rng = block_generator(config.master_seed, block_index, STREAM_BRANCHING)
    sampler = _Sampler(model)
    cap = config.population_cap

    M = np.zeros(size, dtype=np.int64)
    status = np.full(size, GENERATION_CAP, dtype=np.int8)
    stop = np.full(size, config.max_generations, dtype=np.int64)
    progeny = np.ones(size, dtype=np.int64)
    ev_rep, ev_gen, ev_max = [], [], []

    pos = np.zeros(size, dtype=np.int64)
    rep = np.arange(size, dtype=np.int64)
    particle_steps = 0
    gen = 0
    while rep.size and gen < config.max_generations:
        gen += 1
        n = rep.size
        particle_steps += n
        landed = pos + sampler.steps(rng, n)
        kids = sampler.children(rng, n)

        starts = _segment_starts(rep)
        owners = rep[starts]
        brood = np.add.reduceat(kids, starts)
        progeny[owners] += brood
        died = owners[brood == 0]
        status[died] = EXTINCT
        stop[died] = gen

        over = owners[brood > cap]
        if over.size:
            status[over] = POPULATION_CAP
            stop[over] = gen
            keep = np.ones(n, dtype=bool)
            flagged = np.zeros(size, dtype=bool)
            flagged[over] = True
            keep &= ~flagged[rep]
            kids = np.where(keep, kids, 0)

        pos = np.repeat(landed, kids)
        rep = np.repeat(rep, kids)
        if rep.size == 0:
            break
        starts = _segment_starts(rep)
        owners = rep[starts]
        top = np.maximum.reduceat(pos, starts)
        up = top > M[owners]
        if np.any(up):
            winners = owners[up]
            M[winners] = top[up]
            ev_rep.append(winners)
            ev_gen.append(np.full(winners.size, gen, dtype=np.int64))
            ev_max.append(top[up])

    def cat(parts, dtype):
        return np.concatenate(parts).astype(dtype) if parts else np.zeros(0, dtype=dtype)

    return BlockOutcome(block_index, size, M, status, stop, progeny,
                        cat(ev_rep, np.int64), cat(ev_gen, np.int64), cat(ev_max, np.int64),
                        generations_run=gen, particle_steps=particle_steps)


class _BlockTask:
    """Picklable unit of work: simulate one block and reduce it."""

    def __init__(self, model, config, reducer):
        self.model, self.config, self.reducer = model, config, reducer

    def __call__(self, block):
        index, size = block
        return self.reducer(simulate_block(self.model, self.config, index, size))


def run_blocks(model: ModelSpec, config: SimConfig, reducer, combine=None):
    """Simulate every block, map each through ``reducer`` and fold the
    results in block order with ``combine`` (default: elementwise sum).

    The fold order is fixed, so the result is bitwise identical for any
    worker count.
    """
    task = _BlockTask(model, config, reducer)
    blocks = config.blocks()
    if config.workers > 1 and len(blocks) > 1:
        with ProcessPoolExecutor(max_workers=config.workers) as pool:
            parts = list(pool.map(task, blocks))
    else:
        parts = [task(b) for b in blocks]
    if combine is None:
        combine = _add
    total = parts[0]
    for part in parts[1:]:
        total = combine(total, part)
    return total


def run_block_tasks(task, config: SimConfig, combine=None):
    """Like :func:`run_blocks` for tasks that draw their own randomness:
    ``task.run(block_index, size)`` is called once per block."""
    blocks = config.blocks()
    runner = _TaskRunner(task)
    if config.workers > 1 and len(blocks) > 1:
        with ProcessPoolExecutor(max_workers=config.workers) as pool:
            parts = list(pool.map(runner, blocks))
    else:
        parts = [runner(b) for b in blocks]
    combine = combine or _add
    total = parts[0]
    for part in parts[1:]:
        total = combine(total, part)
    return total


class _TaskRunner:
    def __init__(self, task):
        self.task = task

    def __call__(self, block):
        return self.task.run(*block)


def _add(a, b):
    if isinstance(a, dict):
        return {k: _add(a[k], b[k]) for k in a}
    if isinstance(a, (list, tuple)):
        return type(a)(_add(x, y) for x, y in zip(a, b))
    return a + b


def simulate_outcomes(model: ModelSpec, config: SimConfig) -> list[BrwOutcome]:
    """Full per-replication outcomes; meant for small runs and inspection."""
    out = []
    for index, size in config.blocks():
        block = simulate_block(model, config, index, size)
        out.extend(block.outcome(i) for i in range(size))
    return out


def simulate_one(model: ModelSpec, rng: np.random.Generator, max_generations: int = 10_000,
                 population_cap: int = 1_000_000) -> BrwOutcome:
    """Particle-by-particle reference simulation of a single replication.

    Deliberately written without vectorisation; it serves as an
    independent check on :func:`simulate_block`.
    """
    offsets = list(model.jump.offsets)
    jump_p = list(model.jump.probs)
    child_p = list(model.offspring.probs)
    particles = [0]
    best = 0
    trajectory = [0]
    population = [1]
    progeny = 1
    for gen in range(1, max_generations + 1):
        nxt = []
        for x in particles:
            y = offsets[int(rng.choice(len(offsets), p=jump_p))]
            k = int(rng.choice(len(child_p), p=child_p))
            nxt.extend([x + y] * k)
        progeny += len(nxt)
        population.append(len(nxt))
        if not nxt:
            return BrwOutcome(best, gen, np.array(trajectory, dtype=np.int64), progeny,
                              EXTINCT, np.array(population))
        if len(nxt) > population_cap:
            return BrwOutcome(best, None, np.array(trajectory, dtype=np.int64), progeny,
                              POPULATION_CAP, np.array(population))
        best = max(best, max(nxt))
        trajectory.append(best)
        particles = nxt
    return BrwOutcome(best, None, np.array(trajectory, dtype=np.int64), progeny,
                      GENERATION_CAP, np.array(population))
