"""Batch fitness assessment with caching and pluggable parallelism.

A batch of individuals is scored by a tuple of measures (each maps an
individual to one real).  Results are cached in memory and optionally on
disk, keyed by the canonical prefix string of the constant-resolved
expression; individuals that still carry unresolved symbolic constants are
evaluated but never cached, since their fitness depends on values the key
cannot express.  Measure evaluation goes through an order-preserving
``pmap`` handle so callers can swap in a thread pool.
"""

from __future__ import annotations

import logging
import os
import tempfile
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

from .errors import CacheError
from .evolution import FitnessVector, Individual
from .expressions import constant_names, iter_nodes, print_prefix

logger = logging.getLogger(__name__)

PmapFn = Callable[[Callable, Sequence], list]


def serial_map(fn: Callable, items: Sequence) -> list:
    return [fn(item) for item in items]


def make_thread_map(workers: int = 4) -> PmapFn:
    """Order-preserving map running items on a thread pool."""

    def thread_map(fn: Callable, items: Sequence) -> list:
        if not items:
            return []
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(fn, items))

    return thread_map


@dataclass(frozen=True)
class Measure:
    """One objective: a named, deterministic function of an individual.

    For caching and deduplication to be sound the function must depend only
    on the individual's constant-resolved expression.
    """

    name: str
    fn: Callable[[Individual], float]


class FitnessCache:
    """Canonical-prefix -> fitness map with optional TSV persistence.

    File format, one record per line:
    ``<prefix-string> TAB <m> TAB <values space-separated>`` where floats
    are shortest round-trip decimals.  Loading a missing file yields an
    empty cache; a malformed file raises :class:`CacheError` (never a
    silent partial load).
    """

    def __init__(self, path: str | os.PathLike | None = None) -> None:
        self.path = Path(path) if path is not None else None
        self._entries: dict[str, FitnessVector] = {}

    def __len__(self) -> int:
        return len(self._entries)

    def __contains__(self, key: str) -> bool:
        return key in self._entries

    def get(self, key: str) -> FitnessVector | None:
        return self._entries.get(key)

    def put(self, key: str, fitness: FitnessVector) -> None:
        if not fitness.evaluated:
            raise CacheError("cannot cache an unevaluated fitness")
        self._entries[key] = fitness

    def items(self):
        return self._entries.items()

    def flush(self) -> None:
        """Write all entries to the backing file (atomic replace)."""
        if self.path is None:
            raise CacheError("cache has no backing path")
        self.path.parent.mkdir(parents=True, exist_ok=True)
        fd, tmp_name = tempfile.mkstemp(
            dir=self.path.parent, prefix=self.path.name, suffix=".tmp"
        )
        try:
            with os.fdopen(fd, "w", encoding="utf-8") as handle:
                for key, fitness in self._entries.items():
                    values = " ".join(repr(v) for v in fitness.values)
                    handle.write(f"{key}\t{len(fitness.values)}\t{values}\n")
            os.replace(tmp_name, self.path)
        except BaseException:
            if os.path.exists(tmp_name):
                os.unlink(tmp_name)
            raise

    @classmethod
    def load(cls, path: str | os.PathLike) -> "FitnessCache":
        cache = cls(path)
        target = Path(path)
        if not target.exists():
            return cache
        text = target.read_text(encoding="utf-8")
        for lineno, line in enumerate(text.splitlines(), start=1):
            parts = line.split("\t")
            if len(parts) != 3:
                raise CacheError(f"{target}:{lineno}: expected 3 tab-separated fields")
            key, m_text, values_text = parts
            try:
                m = int(m_text)
                values = tuple(float(v) for v in values_text.split(" "))
            except ValueError as exc:
                raise CacheError(f"{target}:{lineno}: {exc}") from None
            if not key or m < 1 or len(values) != m:
                raise CacheError(
                    f"{target}:{lineno}: record claims {m_text} values, "
                    f"got {len(values)}"
                )
            cache._entries[key] = FitnessVector(values)
        return cache


def cache_flush(cache: FitnessCache) -> None:
    cache.flush()


def cache_load(path: str | os.PathLike) -> FitnessCache:
    return FitnessCache.load(path)


def _has_symbolic_constants(resolved_root, constant_set: frozenset[str]) -> bool:
    return any(
        not node.children and not node.is_literal and node.symbol in constant_set
        for node in iter_nodes(resolved_root)
    )


def assess(
    batch: Sequence[Individual],
    measures: Sequence[Measure],
    cache: FitnessCache | None = None,
    pmap: PmapFn | None = None,
) -> list[FitnessVector]:
    """Score a batch, one fitness vector per individual, in input order.

    Cache hits and within-batch duplicates (same canonical key) are served
    without re-running measures.  A measure raising for an individual is
    contained: that individual gets +inf on every objective and the failure
    is logged.  Non-finite measure outputs likewise become +inf.
    """
    if not measures:
        raise ValueError("assess needs at least one measure")
    if pmap is None:
        pmap = serial_map
    m = len(measures)

    results: list[FitnessVector | None] = [None] * len(batch)
    claims: dict[str, list[int]] = {}
    pending: list[tuple[str, Individual, bool]] = []
    for i, ind in enumerate(batch):
        resolved = ind.resolved_expr()
        key = print_prefix(resolved)
        cacheable = not _has_symbolic_constants(
            resolved.root, frozenset(ind.expr.pset.constants)
        )
        if cacheable and cache is not None:
            hit = cache.get(key)
            if hit is not None:
                if len(hit.values) != m:
                    raise CacheError(
                        f"cached entry for {key!r} has {len(hit.values)} "
                        f"objectives, run uses {m}"
                    )
                results[i] = hit
                continue
        if key in claims:
            claims[key].append(i)
            continue
        claims[key] = [i]
        pending.append((key, ind, cacheable))

    def evaluate_one(item: tuple[str, Individual, bool]) -> FitnessVector:
        key, ind, _ = item
        try:
            return FitnessVector(tuple(measure.fn(ind) for measure in measures))
        except Exception:  # noqa: BLE001 - containment is the contract
            logger.warning("measures failed for %r, assigning worst fitness",
                           key, exc_info=True)
            return FitnessVector((float("inf"),) * m)

    for (key, _, cacheable), fitness in zip(pending, pmap(evaluate_one, pending)):
        if cacheable and cache is not None:
            cache.put(key, fitness)
        for i in claims[key]:
            results[i] = fitness
    return results  # type: ignore[return-value]


@dataclass
class AssessmentRunner:
    """Assessment handle for the evolution loop.

    Optionally fits symbolic constants first (memoized on the symbolic
    prefix string, since refitting a re-discovered expression yields the
    same values), then assesses the batch and writes fitness back onto the
    individuals.  Counters make the work observable: ``submitted`` is every
    individual received, ``measured`` those that actually ran measures,
    and the difference was served by the cache or batch deduplication.
    """

    measures: Sequence[Measure]
    cache: FitnessCache | None = None
    pmap: PmapFn | None = None
    fit_constants: Callable[[Individual], None] | None = None
    submitted: int = 0
    measured: int = 0
    _fit_memo: dict[str, dict[str, float]] = field(default_factory=dict)

    def __call__(self, batch: Sequence[Individual]) -> None:
        if self.fit_constants is not None:
            for ind in batch:
                names = constant_names(ind.expr)
                if not names or ind.constants:
                    continue
                sym_key = print_prefix(ind.expr)
                memo = self._fit_memo.get(sym_key)
                if memo is not None:
                    ind.constants = dict(memo)
                else:
                    self.fit_constants(ind)
                    self._fit_memo[sym_key] = dict(ind.constants)

        def counting_pmap(fn, items):
            self.measured += len(items)
            return (self.pmap or serial_map)(fn, items)

        fitnesses = assess(batch, self.measures, self.cache, counting_pmap)
        for ind, fitness in zip(batch, fitnesses):
            ind.fitness = fitness
        self.submitted += len(batch)
