"""NSGA-II genetic-programming loop.

Minimizes a fixed-length vector of objectives over expression trees:
ramped half-and-half initialization, tournament parent selection keyed on
(front rank, crowding distance), varOr breeding (one-point crossover,
uniform mutation, reproduction), (mu + lambda) survivor selection by
non-dominated sorting, and a Pareto archive deduplicated by canonical
prefix string.

Determinism contract: all stochastic draws come from one ``random.Random``
passed explicitly, in documented order (see ``var_or``); rank/crowding
annotations are recomputed from the surviving population each generation so
a resumed run continues bit-identically.
"""

from __future__ import annotations

import math
import random
import statistics
from dataclasses import dataclass, field
from typing import Callable, Iterable, Iterator, Sequence

import numpy as np

from .expressions import (
    Expression,
    PrimitiveSet,
    generate_grow,
    generate_half_and_half,
    height,
    length,
    node_at,
    print_prefix,
    replace_node,
    resolve_constants,
)


@dataclass(frozen=True)
class FitnessVector:
    """Objective values, lower is better; non-finite entries become +inf."""

    values: tuple[float, ...]
    evaluated: bool = True

    def __post_init__(self) -> None:
        cleaned = tuple(
            float(v) if math.isfinite(v) else math.inf for v in self.values
        )
        object.__setattr__(self, "values", cleaned)

    @classmethod
    def unevaluated(cls) -> "FitnessVector":
        return cls((), evaluated=False)


def dominates(a: FitnessVector, b: FitnessVector) -> bool:
    """Pareto dominance: a is no worse everywhere and better somewhere."""
    if not (a.evaluated and b.evaluated):
        raise ValueError("cannot compare unevaluated fitness")
    if len(a.values) != len(b.values):
        raise ValueError(
            f"fitness length mismatch: {len(a.values)} vs {len(b.values)}"
        )
    return all(x <= y for x, y in zip(a.values, b.values)) and any(
        x < y for x, y in zip(a.values, b.values)
    )


@dataclass
class Individual:
    """A candidate: expression, fitted constants, fitness, sort annotations."""

    expr: Expression
    constants: dict[str, float] = field(default_factory=dict)
    fitness: FitnessVector = field(default_factory=FitnessVector.unevaluated)
    rank: int | None = None
    crowding: float | None = None

    def copy(self) -> "Individual":
        return Individual(self.expr, dict(self.constants), self.fitness)

    def resolved_expr(self) -> Expression:
        return resolve_constants(self.expr, self.constants)

    def key(self) -> str:
        """Canonical identity: prefix string with constants substituted."""
        return print_prefix(self.resolved_expr())


@dataclass(frozen=True)
class GPConfig:
    """Evolution parameters; defaults match the benchmark configuration."""

    population_size: int = 500
    max_generations: int = 20
    p_crossover: float = 0.5
    p_mutation: float = 0.2
    tournament_size: int = 2
    init_min_height: int = 1
    init_max_height: int = 4
    variation_max_height: int = 20
    seed: int = 0

    def __post_init__(self) -> None:
        if self.population_size < 1 or self.tournament_size < 1:
            raise ValueError("population_size and tournament_size must be >= 1")
        if self.max_generations < 0:
            raise ValueError("max_generations must be >= 0")
        if not (0.0 <= self.p_crossover <= 1.0 and 0.0 <= self.p_mutation <= 1.0):
            raise ValueError("operator probabilities must be in [0, 1]")
        if self.p_crossover + self.p_mutation > 1.0:
            raise ValueError("p_crossover + p_mutation must be <= 1")
        if not (1 <= self.init_min_height <= self.init_max_height):
            raise ValueError("need 1 <= init_min_height <= init_max_height")
        if self.variation_max_height < self.init_max_height:
            raise ValueError("variation_max_height must cover init_max_height")
        if self.seed < 0:
            raise ValueError("seed must be a non-negative integer")


class ParetoArchive:
    """Mutually non-dominated individuals, deduplicated by canonical key.

    The first individual seen for a key wins; later structural duplicates
    are ignored regardless of fitness.
    """

    def __init__(self) -> None:
        self._members: dict[str, Individual] = {}

    def __len__(self) -> int:
        return len(self._members)

    def __iter__(self) -> Iterator[Individual]:
        return iter(self._members.values())

    def __contains__(self, key: str) -> bool:
        return key in self._members

    @property
    def members(self) -> tuple[Individual, ...]:
        return tuple(self._members.values())

    def insert(self, ind: Individual) -> bool:
        """Insert one candidate; returns True if it entered the archive."""
        if not ind.fitness.evaluated:
            raise ValueError("cannot archive an unevaluated individual")
        key = ind.key()
        if key in self._members:
            return False
        for member in self._members.values():
            if dominates(member.fitness, ind.fitness):
                return False
        doomed = [
            k
            for k, member in self._members.items()
            if dominates(ind.fitness, member.fitness)
        ]
        for k in doomed:
            del self._members[k]
        self._members[key] = ind
        return True

    def update(self, individuals: Iterable[Individual]) -> int:
        return sum(1 for ind in individuals if self.insert(ind))


def non_dominated_sort(pop: Sequence[Individual]) -> list[list[int]]:
    """Partition indices into Pareto fronts (front 0 = non-dominated set).

    Indices within each front stay in ascending order.
    """
    for ind in pop:
        if not ind.fitness.evaluated:
            raise ValueError("non_dominated_sort requires evaluated fitness")
    n = len(pop)
    if n == 0:
        return []
    values = np.array([ind.fitness.values for ind in pop], dtype=float)
    if values.ndim != 2:
        raise ValueError("fitness vectors must share one length")
    # Pairwise dominance matrix: dominated[i, j] iff pop[i] dominates pop[j].
    leq = (values[:, None, :] <= values[None, :, :]).all(axis=2)
    lt = (values[:, None, :] < values[None, :, :]).any(axis=2)
    dom = leq & lt
    counts = dom.sum(axis=0).astype(int)

    fronts: list[list[int]] = []
    assigned = 0
    current = np.flatnonzero(counts == 0)
    while assigned < n:
        fronts.append([int(i) for i in current])
        assigned += len(current)
        counts[current] = -1
        counts -= dom[current, :].sum(axis=0)
        current = np.flatnonzero(counts == 0)
    return fronts


def crowding_distance(front: Sequence[FitnessVector]) -> list[float]:
    """Standard NSGA-II crowding: boundaries get +inf, interior points the
    sum over objectives of normalized neighbor gaps; an objective whose
    range is zero or non-finite contributes nothing to interior points."""
    n = len(front)
    if n == 0:
        raise ValueError("crowding_distance needs a non-empty front")
    m = len(front[0].values)
    dist = [0.0] * n
    for obj in range(m):
        order = sorted(range(n), key=lambda i: front[i].values[obj])
        lo = front[order[0]].values[obj]
        hi = front[order[-1]].values[obj]
        dist[order[0]] = dist[order[-1]] = math.inf
        span = hi - lo
        if span == 0.0 or not math.isfinite(span):
            continue
        for pos in range(1, n - 1):
            gap = (
                front[order[pos + 1]].values[obj]
                - front[order[pos - 1]].values[obj]
            )
            dist[order[pos]] += gap / span
    return dist


def assign_ranks_and_crowding(pop: Sequence[Individual]) -> list[list[int]]:
    """Annotate every individual's rank and crowding; returns the fronts."""
    fronts = non_dominated_sort(pop)
    for rank, front in enumerate(fronts):
        crowd = crowding_distance([pop[i].fitness for i in front])
        for i, c in zip(front, crowd):
            pop[i].rank = rank
            pop[i].crowding = c
    return fronts


def nsga2_select(pop: Sequence[Individual], k: int) -> list[Individual]:
    """Survivor selection: whole fronts by rank, the split front by
    descending crowding distance with ties broken by lower index."""
    if k > len(pop):
        raise ValueError(f"cannot select {k} from population of {len(pop)}")
    fronts = assign_ranks_and_crowding(pop)
    selected: list[Individual] = []
    for front in fronts:
        if len(selected) + len(front) <= k:
            selected.extend(pop[i] for i in front)
            if len(selected) == k:
                break
            continue
        remaining = k - len(selected)
        split = sorted(front, key=lambda i: (-pop[i].crowding, i))
        selected.extend(pop[i] for i in split[:remaining])
        break
    return selected


def tournament_select(
    pop: Sequence[Individual], count: int, tournament_size: int, rng
) -> list[Individual]:
    """Pick ``count`` parents; each pick draws ``tournament_size`` uniform
    candidates with replacement and keeps the best by (rank ascending,
    crowding descending, index ascending)."""
    if not pop:
        raise ValueError("tournament_select needs a non-empty population")
    for ind in pop:
        if ind.rank is None or ind.crowding is None:
            raise ValueError("tournament_select requires rank/crowding annotations")
    picks: list[Individual] = []
    n = len(pop)
    for _ in range(count):
        best_key: tuple[int, float, int] | None = None
        best: Individual | None = None
        for _ in range(tournament_size):
            i = rng.randrange(n)
            key = (pop[i].rank, -pop[i].crowding, i)
            if best_key is None or key < best_key:
                best_key, best = key, pop[i]
        picks.append(best)
    return picks


def cx_one_point(
    a: Expression, b: Expression, rng, max_height: int = 20
) -> tuple[Expression, Expression]:
    """Swap uniformly chosen subtrees; a child exceeding ``max_height`` is
    replaced by its own parent (static-limit rule)."""
    idx_a = rng.randrange(length(a))
    idx_b = rng.randrange(length(b))
    sub_a = node_at(a.root, idx_a)
    sub_b = node_at(b.root, idx_b)
    child_a = Expression(replace_node(a.root, idx_a, sub_b), a.pset)
    child_b = Expression(replace_node(b.root, idx_b, sub_a), b.pset)
    if height(child_a) > max_height:
        child_a = a
    if height(child_b) > max_height:
        child_b = b
    return child_a, child_b


def mut_uniform(
    a: Expression,
    pset: PrimitiveSet,
    rng,
    grow_max_height: int = 4,
    max_height: int = 20,
) -> Expression:
    """Replace a uniformly chosen node with a fresh grow-generated subtree;
    the parent survives unchanged if the mutant would exceed ``max_height``."""
    idx = rng.randrange(length(a))
    sub = generate_grow(pset, 0, grow_max_height, rng)
    child = Expression(replace_node(a.root, idx, sub.root), a.pset)
    if height(child) > max_height:
        return a
    return child


def var_or(
    parents: Sequence[Individual],
    lambda_: int,
    pset: PrimitiveSet,
    config: GPConfig,
    rng,
    op_counts: dict[str, int] | None = None,
) -> list[Individual]:
    """Breed ``lambda_`` offspring.

    Per slot, one uniform draw u decides the operator: u < p_crossover is
    crossover of two tournament picks keeping the first child; next
    p_mutation of the mass is uniform mutation of one pick; the remainder
    is reproduction, which copies the pick with fitness retained.  Crossover
    and mutation offspring start unevaluated.
    """
    offspring: list[Individual] = []
    ts = config.tournament_size
    for _ in range(lambda_):
        u = rng.random()
        if u < config.p_crossover:
            p1, = tournament_select(parents, 1, ts, rng)
            p2, = tournament_select(parents, 1, ts, rng)
            child, _ = cx_one_point(
                p1.expr, p2.expr, rng, max_height=config.variation_max_height
            )
            offspring.append(Individual(child))
            op = "crossover"
        elif u < config.p_crossover + config.p_mutation:
            p, = tournament_select(parents, 1, ts, rng)
            child = mut_uniform(
                p.expr,
                pset,
                rng,
                grow_max_height=config.init_max_height,
                max_height=config.variation_max_height,
            )
            offspring.append(Individual(child))
            op = "mutation"
        else:
            p, = tournament_select(parents, 1, ts, rng)
            offspring.append(p.copy())
            op = "reproduction"
        if op_counts is not None:
            op_counts[op] = op_counts.get(op, 0) + 1
    return offspring


@dataclass
class GenerationStats:
    """One row of run telemetry; ``evaluations`` counts individuals
    submitted to the assessment runner so far (cache hits included)."""

    generation: int
    evaluations: int
    objective_min: tuple[float, ...]
    objective_median: tuple[float, ...]
    archive_size: int


@dataclass
class EvolutionState:
    """Resumable loop state at a generation boundary."""

    generation: int
    population: list[Individual]
    archive: ParetoArchive
    stats: list[GenerationStats]
    evaluations: int
    rng: object  # random.Random with its state advanced to the boundary


@dataclass
class EvolutionResult:
    archive: ParetoArchive
    stats: list[GenerationStats]
    completed_generations: int
    error: Exception | None = None


AssessFn = Callable[[list[Individual]], None]


def _population_stats(
    generation: int,
    population: Sequence[Individual],
    evaluations: int,
    archive: ParetoArchive,
) -> GenerationStats:
    columns = list(zip(*(ind.fitness.values for ind in population)))
    return GenerationStats(
        generation=generation,
        evaluations=evaluations,
        objective_min=tuple(min(col) for col in columns),
        objective_median=tuple(float(statistics.median(col)) for col in columns),
        archive_size=len(archive),
    )


def evolve(
    config: GPConfig,
    pset: PrimitiveSet,
    assess: AssessFn,
    callbacks: Sequence[Callable[[GenerationStats], None]] = (),
    checkpoint_hook: Callable[[EvolutionState], None] | None = None,
    resume_state: EvolutionState | None = None,
) -> EvolutionResult:
    """Run the generational loop.

    ``assess`` fills in fitness (and constants) for every individual it is
    given; it is called once per generation with the unevaluated offspring.
    An exception from it aborts the run, returning the archive built so far
    together with the error.  ``checkpoint_hook`` fires at each generation
    boundary with the resumable state; passing that state back as
    ``resume_state`` continues the identical run.
    """
    if resume_state is None:
        rng = random.Random(config.seed)
        population = [
            Individual(
                generate_half_and_half(
                    pset, config.init_min_height, config.init_max_height, rng
                )
            )
            for _ in range(config.population_size)
        ]
        archive = ParetoArchive()
        stats: list[GenerationStats] = []
        evaluations = 0
        try:
            assess(population)
        except Exception as exc:  # noqa: BLE001 - reported, not swallowed
            return EvolutionResult(archive, stats, -1, exc)
        evaluations += len(population)
        archive.update(population)
        assign_ranks_and_crowding(population)
        stats.append(_population_stats(0, population, evaluations, archive))
        for callback in callbacks:
            callback(stats[-1])
        state = EvolutionState(0, population, archive, stats, evaluations, rng)
        if checkpoint_hook is not None:
            checkpoint_hook(state)
    else:
        state = resume_state
        rng = state.rng
        population = state.population
        archive = state.archive
        stats = state.stats
        evaluations = state.evaluations
        assign_ranks_and_crowding(population)

    for generation in range(state.generation + 1, config.max_generations + 1):
        offspring = var_or(
            population, config.population_size, pset, config, rng
        )
        pending = [ind for ind in offspring if not ind.fitness.evaluated]
        try:
            assess(pending)
        except Exception as exc:  # noqa: BLE001
            return EvolutionResult(archive, stats, generation - 1, exc)
        evaluations += len(pending)
        archive.update(offspring)
        population = nsga2_select(list(population) + offspring, config.population_size)
        assign_ranks_and_crowding(population)
        stats.append(
            _population_stats(generation, population, evaluations, archive)
        )
        for callback in callbacks:
            callback(stats[-1])
        state = EvolutionState(
            generation, population, archive, stats, evaluations, rng
        )
        if checkpoint_hook is not None:
            checkpoint_hook(state)

    return EvolutionResult(archive, stats, state.generation, None)
