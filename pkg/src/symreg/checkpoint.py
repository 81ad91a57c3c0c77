"""Durable snapshots of the evolution loop at generation boundaries.

A checkpoint file is one JSON document holding the loop state needed to
continue a run exactly: generation index, population and archive (prefix
strings, constant values, fitness), cumulative evaluation count, emitted
stats rows, and the RNG state words.  Rank and crowding annotations are
recomputed on resume, so they are not stored.

Each file also records a digest of the run configuration.  Resuming checks
the digest first: continuing under a different configuration would silently
produce a run that neither matches the original nor a fresh one, so a
mismatch refuses loudly instead.
"""

from __future__ import annotations

import hashlib
import json
import math
import os
import random
import tempfile
from collections.abc import Mapping

from .errors import CheckpointError
from .evolution import (
    EvolutionState,
    FitnessVector,
    GenerationStats,
    Individual,
    ParetoArchive,
)
from .expressions import ParseError, PrimitiveSet, parse_prefix

SCHEMA_VERSION = 1


def manifest_digest(fields: Mapping[str, object]) -> str:
    """Digest of the run-defining configuration fields.

    Canonical JSON (sorted keys, no whitespace) keeps the digest stable
    across field ordering; only values change it.
    """
    try:
        canonical = json.dumps(
            fields, sort_keys=True, separators=(",", ":"), allow_nan=False
        )
    except (TypeError, ValueError) as exc:
        raise CheckpointError(f"manifest not digestable: {exc}") from exc
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def _dump_value(value: float) -> float | None:
    # JSON has no infinities; fitness uses null like the wire protocol
    return value if math.isfinite(value) else None


def _load_value(raw: object, where: str) -> float:
    if raw is None:
        return math.inf
    if isinstance(raw, bool) or not isinstance(raw, (int, float)):
        raise CheckpointError(f"{where}: expected number or null, got {raw!r}")
    return float(raw)


def _dump_individual(ind: Individual) -> dict:
    if not ind.fitness.evaluated:
        raise CheckpointError(
            f"cannot checkpoint unevaluated individual {ind.key()!r}"
        )
    return {
        "prefix": str(ind.expr),
        "constants": dict(ind.constants),
        "fitness": [_dump_value(v) for v in ind.fitness.values],
    }


def _load_individual(raw: object, pset: PrimitiveSet, where: str) -> Individual:
    if not isinstance(raw, dict):
        raise CheckpointError(f"{where}: expected object, got {type(raw).__name__}")
    try:
        prefix = raw["prefix"]
        constants = raw["constants"]
        fitness = raw["fitness"]
    except KeyError as exc:
        raise CheckpointError(f"{where}: missing field {exc}") from exc
    if not isinstance(prefix, str):
        raise CheckpointError(f"{where}: prefix must be a string")
    try:
        expr = parse_prefix(prefix, pset)
    except ParseError as exc:
        raise CheckpointError(f"{where}: {exc}") from exc
    if not isinstance(constants, dict) or not all(
        isinstance(k, str) for k in constants
    ):
        raise CheckpointError(f"{where}: constants must map names to numbers")
    if not isinstance(fitness, list) or not fitness:
        raise CheckpointError(f"{where}: fitness must be a non-empty list")
    values = tuple(
        _load_value(v, f"{where}: fitness[{i}]") for i, v in enumerate(fitness)
    )
    return Individual(
        expr,
        constants={k: float(v) for k, v in constants.items()},
        fitness=FitnessVector(values),
    )


def _dump_stats(row: GenerationStats) -> dict:
    return {
        "generation": row.generation,
        "evaluations": row.evaluations,
        "objective_min": [_dump_value(v) for v in row.objective_min],
        "objective_median": [_dump_value(v) for v in row.objective_median],
        "archive_size": row.archive_size,
    }


def _load_stats(raw: object, where: str) -> GenerationStats:
    if not isinstance(raw, dict):
        raise CheckpointError(f"{where}: expected object")
    try:
        return GenerationStats(
            generation=int(raw["generation"]),
            evaluations=int(raw["evaluations"]),
            objective_min=tuple(
                _load_value(v, f"{where}.objective_min") for v in raw["objective_min"]
            ),
            objective_median=tuple(
                _load_value(v, f"{where}.objective_median")
                for v in raw["objective_median"]
            ),
            archive_size=int(raw["archive_size"]),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise CheckpointError(f"{where}: {exc}") from exc


def save_checkpoint(path: str | os.PathLike, state: EvolutionState, digest: str) -> None:
    """Write ``state`` to ``path`` atomically (rename over the old file)."""
    rng_state = state.rng.getstate()
    document = {
        "schema": SCHEMA_VERSION,
        "digest": digest,
        "generation": state.generation,
        "evaluations": state.evaluations,
        "population": [_dump_individual(ind) for ind in state.population],
        "archive": [_dump_individual(ind) for ind in state.archive.members],
        "stats": [_dump_stats(row) for row in state.stats],
        "rng": [rng_state[0], list(rng_state[1]), rng_state[2]],
    }
    try:
        text = json.dumps(document, allow_nan=False)
    except (TypeError, ValueError) as exc:
        raise CheckpointError(f"state not serializable: {exc}") from exc
    directory = os.path.dirname(os.path.abspath(path)) or "."
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".checkpoint-")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as handle:
            handle.write(text)
        os.replace(tmp, path)
    except BaseException:
        try:
            os.unlink(tmp)
        except OSError:
            pass
        raise


def load_checkpoint(
    path: str | os.PathLike, pset: PrimitiveSet, digest: str
) -> EvolutionState:
    """Read a checkpoint back into a resumable state.

    Refuses (with the reason) when the file is corrupt, was written by a
    different schema version, or records a different configuration digest.
    """
    try:
        with open(path, "r", encoding="utf-8") as handle:
            document = json.load(handle)
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"corrupt checkpoint {path}: {exc}") from exc
    if not isinstance(document, dict):
        raise CheckpointError(f"corrupt checkpoint {path}: not a JSON object")

    version = document.get("schema")
    if version != SCHEMA_VERSION:
        raise CheckpointError(
            f"checkpoint {path} has schema version {version!r}, "
            f"this build reads version {SCHEMA_VERSION}; refusing to resume"
        )
    recorded = document.get("digest")
    if recorded != digest:
        raise CheckpointError(
            f"checkpoint {path} was written for a different run configuration "
            f"(digest {recorded!r}, current {digest!r}); refusing to resume"
        )

    try:
        generation = int(document["generation"])
        evaluations = int(document["evaluations"])
        raw_population = document["population"]
        raw_archive = document["archive"]
        raw_stats = document["stats"]
        raw_rng = document["rng"]
    except (KeyError, TypeError, ValueError) as exc:
        raise CheckpointError(f"corrupt checkpoint {path}: {exc}") from exc
    if not isinstance(raw_population, list) or not raw_population:
        raise CheckpointError(f"corrupt checkpoint {path}: empty population")
    if not isinstance(raw_archive, list) or not isinstance(raw_stats, list):
        raise CheckpointError(f"corrupt checkpoint {path}: bad archive or stats")

    population = [
        _load_individual(raw, pset, f"population[{i}]")
        for i, raw in enumerate(raw_population)
    ]
    archive = ParetoArchive()
    archive.update(
        _load_individual(raw, pset, f"archive[{i}]")
        for i, raw in enumerate(raw_archive)
    )
    stats = [_load_stats(raw, f"stats[{i}]") for i, raw in enumerate(raw_stats)]

    rng = random.Random()
    try:
        version_word, words, gauss_next = raw_rng
        rng.setstate((version_word, tuple(words), gauss_next))
    except (TypeError, ValueError) as exc:
        raise CheckpointError(f"corrupt checkpoint {path}: bad RNG state: {exc}") from exc

    return EvolutionState(
        generation=generation,
        population=population,
        archive=archive,
        stats=stats,
        evaluations=evaluations,
        rng=rng,
    )
