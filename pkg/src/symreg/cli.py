"""Command-line application assembly.

Three subcommands share one configuration surface:

  run-local      evolve control laws against the in-process simulation
  run-remote     evolve against an experiment server over the wire protocol
  lorenz-server  serve the simulation to remote clients

Values resolve in precedence order: command-line flags beat manifest-file
entries, which beat the SYMREG_ENDPOINT / SYMREG_CACHE environment
variables, which beat built-in defaults.  The manifest is a flat
``key=value`` file; unknown keys are rejected rather than ignored.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import logging
import os
import signal
import sys
import threading
from dataclasses import dataclass, field

from .assessment import AssessmentRunner, cache_load
from .checkpoint import load_checkpoint, manifest_digest, save_checkpoint
from .errors import CheckpointError, ProtocolError
from .evolution import GenerationStats, GPConfig, evolve
from .expressions import compile_callable, length
from .lorenz import (
    LorenzHandler,
    SimSetup,
    integrate,
    lorenz_pset,
    make_fit_constants,
    make_measures,
    write_trajectory_csv,
)
from .protocol import ProtocolServer, client_run, parse_endpoint

logger = logging.getLogger(__name__)

CONFIG_KEYS = tuple(f.name for f in dataclasses.fields(GPConfig))
_FLOAT_KEYS = frozenset({"p_crossover", "p_mutation"})
_PATH_KEYS = ("cache", "output", "checkpoint", "resume")
MANIFEST_KEYS = frozenset(CONFIG_KEYS) | set(_PATH_KEYS) | {
    "channel",
    "endpoint",
    "checkpoint_every",
    "trajectories",
}

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_USAGE = 2
EXIT_INTERRUPTED = 130

# set by SIGINT/SIGTERM; the run stops at the next generation boundary
_STOP_REQUESTED = threading.Event()


class UsageError(Exception):
    """Bad invocation, reported before any side effects."""


class _Interrupted(Exception):
    """Raised at a generation boundary after a stop request."""


@dataclass
class RunManifest:
    """Fully resolved settings for one invocation."""

    mode: str  # "local" | "remote" | "server"
    config: GPConfig
    channel: str = "y"
    endpoint: str | None = None
    cache: str | None = None
    output: str = "."
    checkpoint: str | None = None
    checkpoint_every: int = 1
    resume: str | None = None
    trajectories: int = 0
    # config keys the user set explicitly; remote mode sends only these so
    # server-provided options keep their say on everything else
    overrides: dict = field(default_factory=dict)

    def digest_fields(self) -> dict:
        # semantic identity of a run: search settings and the plant channel;
        # paths and endpoints can move without changing the run itself
        return {"config": dataclasses.asdict(self.config), "channel": self.channel}


def read_manifest_file(path: str) -> dict[str, str]:
    try:
        with open(path, "r", encoding="utf-8") as handle:
            lines = handle.readlines()
    except OSError as exc:
        raise UsageError(f"cannot read manifest {path}: {exc}") from exc
    values: dict[str, str] = {}
    for lineno, line in enumerate(lines, start=1):
        text = line.strip()
        if not text or text.startswith("#"):
            continue
        key, sep, value = text.partition("=")
        key = key.strip()
        if not sep or not key:
            raise UsageError(f"{path}:{lineno}: expected key=value, got {text!r}")
        if key not in MANIFEST_KEYS:
            raise UsageError(f"{path}:{lineno}: unknown manifest key {key!r}")
        if key in values:
            raise UsageError(f"{path}:{lineno}: duplicate manifest key {key!r}")
        values[key] = value.strip()
    return values


def _coerce(key: str, raw: str):
    try:
        return float(raw) if key in _FLOAT_KEYS else int(raw)
    except ValueError as exc:
        raise UsageError(f"manifest value {key}={raw!r} is not a number") from exc


def build_manifest(args: argparse.Namespace) -> RunManifest:
    file_values = read_manifest_file(args.manifest) if args.manifest else {}

    overrides: dict = {}
    config_kwargs: dict = {}
    for key in CONFIG_KEYS:
        flag_value = getattr(args, key, None)
        if flag_value is not None:
            config_kwargs[key] = flag_value
            overrides[key] = flag_value
        elif key in file_values:
            config_kwargs[key] = _coerce(key, file_values[key])
            overrides[key] = config_kwargs[key]
    try:
        config = GPConfig(**config_kwargs)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc

    def setting(name: str, env: str | None = None, default=None):
        flag_value = getattr(args, name, None)
        if flag_value is not None:
            return flag_value
        if name in file_values:
            return file_values[name]
        if env is not None and os.environ.get(env):
            return os.environ[env]
        return default

    channel = setting("channel", default="y")
    if channel not in ("y", "z"):
        raise UsageError(f"channel must be y or z, got {channel!r}")
    endpoint = setting("endpoint", env="SYMREG_ENDPOINT")
    if args.mode in ("remote", "server") and endpoint is None:
        raise UsageError(
            f"{args.mode_name} needs an endpoint "
            "(--endpoint, manifest, or SYMREG_ENDPOINT)"
        )
    if endpoint is not None:
        try:
            parse_endpoint(endpoint)
        except ValueError as exc:
            raise UsageError(str(exc)) from exc

    raw_every = setting("checkpoint_every", default=1)
    raw_trajectories = setting("trajectories", default=0)
    try:
        checkpoint_every = int(raw_every)
        trajectories = int(raw_trajectories)
    except ValueError as exc:
        raise UsageError(f"not a number: {exc}") from exc
    if checkpoint_every < 1:
        raise UsageError("checkpoint period must be >= 1")
    if trajectories < 0:
        raise UsageError("trajectory count must be >= 0")

    return RunManifest(
        mode=args.mode,
        config=config,
        channel=channel,
        endpoint=endpoint,
        cache=setting("cache", env="SYMREG_CACHE"),
        output=setting("output", default="."),
        checkpoint=setting("checkpoint"),
        checkpoint_every=checkpoint_every,
        resume=setting("resume"),
        trajectories=trajectories,
        overrides=overrides,
    )


# ---------------------------------------------------------------------------
# artifacts


def _fmt(value: float) -> str:
    return repr(float(value))


def write_stats_csv(path: str | os.PathLike, rows: list[GenerationStats]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as handle:
        writer = csv.writer(handle)
        m = len(rows[0].objective_min) if rows else 0
        writer.writerow(
            ["generation", "evaluations"]
            + [f"min_{i + 1}" for i in range(m)]
            + [f"median_{i + 1}" for i in range(m)]
            + ["archive_size"]
        )
        for row in rows:
            writer.writerow(
                [row.generation, row.evaluations]
                + [_fmt(v) for v in row.objective_min]
                + [_fmt(v) for v in row.objective_median]
                + [row.archive_size]
            )


def sorted_archive(archive) -> list:
    return sorted(
        archive.members, key=lambda ind: (ind.fitness.values, str(ind.expr))
    )


def write_archive_csv(path: str | os.PathLike, archive) -> int:
    members = sorted_archive(archive)
    with open(path, "w", encoding="utf-8", newline="") as handle:
        writer = csv.writer(handle)
        m = len(members[0].fitness.values) if members else 0
        writer.writerow(
            [f"objective_{i + 1}" for i in range(m)]
            + ["length", "constants", "prefix"]
        )
        for ind in members:
            constants = " ".join(
                f"{name}={_fmt(value)}" for name, value in sorted(ind.constants.items())
            )
            writer.writerow(
                [_fmt(v) for v in ind.fitness.values]
                + [length(ind.expr), constants, str(ind.expr)]
            )
    return len(members)


def write_trajectories(output: str, archive, setup: SimSetup, count: int) -> None:
    for index, ind in enumerate(sorted_archive(archive)[:count], start=1):
        control = compile_callable(ind.expr, ("x", "y", "z"), ind.constants)
        trajectory = integrate(setup, control)
        write_trajectory_csv(
            os.path.join(output, f"trajectory_{index:03d}.csv"), trajectory
        )


def _log_generation(row: GenerationStats) -> None:
    logger.info(
        "generation %d: evaluations=%d min=%s archive=%d",
        row.generation,
        row.evaluations,
        tuple(round(v, 6) for v in row.objective_min),
        row.archive_size,
    )


# ---------------------------------------------------------------------------
# modes


def _install_stop_handlers():
    """Route SIGINT/SIGTERM into a boundary-stop request; returns undo."""
    previous = []
    try:
        for signum in (signal.SIGINT, signal.SIGTERM):
            previous.append((signum, signal.signal(signum, _on_stop_signal)))
    except ValueError:  # not the main thread (tests drive this directly)
        pass

    def restore():
        for signum, old in previous:
            signal.signal(signum, old)

    return restore


def _on_stop_signal(signum, frame):
    logger.warning("stop requested, finishing the current generation")
    _STOP_REQUESTED.set()


def run_local(manifest: RunManifest) -> int:
    setup = SimSetup(channel=manifest.channel)
    pset = lorenz_pset()
    digest = manifest_digest(manifest.digest_fields())

    resume_state = None
    if manifest.resume:
        try:
            resume_state = load_checkpoint(manifest.resume, pset, digest)
        except CheckpointError as exc:
            print(f"error: {exc}", file=sys.stderr)
            return EXIT_USAGE

    os.makedirs(manifest.output, exist_ok=True)
    cache = cache_load(manifest.cache) if manifest.cache else None
    runner = AssessmentRunner(
        measures=make_measures(setup),
        cache=cache,
        fit_constants=make_fit_constants(setup),
    )

    last_state = None

    def boundary(state):
        nonlocal last_state
        last_state = state
        stopping = _STOP_REQUESTED.is_set()
        if manifest.checkpoint and (
            stopping or state.generation % manifest.checkpoint_every == 0
        ):
            save_checkpoint(manifest.checkpoint, state, digest)
        if stopping:
            raise _Interrupted

    _STOP_REQUESTED.clear()
    restore = _install_stop_handlers()
    interrupted = False
    error = None
    try:
        result = evolve(
            manifest.config,
            pset,
            runner,
            callbacks=[_log_generation],
            checkpoint_hook=boundary,
            resume_state=resume_state,
        )
        archive, stats, error = result.archive, result.stats, result.error
    except _Interrupted:
        interrupted = True
        archive, stats = last_state.archive, last_state.stats
    finally:
        restore()
        _STOP_REQUESTED.clear()
        if cache is not None:
            cache.flush()

    write_stats_csv(os.path.join(manifest.output, "stats.csv"), stats)
    rows = write_archive_csv(os.path.join(manifest.output, "archive.csv"), archive)
    if manifest.trajectories:
        write_trajectories(manifest.output, archive, setup, manifest.trajectories)
    print(f"archive: {os.path.join(manifest.output, 'archive.csv')} ({rows} rows)")
    if interrupted:
        return EXIT_INTERRUPTED
    if error is not None:
        print(f"error: run aborted: {error}", file=sys.stderr)
        return EXIT_FAILURE
    return EXIT_OK


def run_remote(manifest: RunManifest) -> int:
    os.makedirs(manifest.output, exist_ok=True)
    cache = cache_load(manifest.cache) if manifest.cache else None
    try:
        outcome = client_run(
            manifest.endpoint,
            overrides=manifest.overrides,
            cache=cache,
            callbacks=[_log_generation],
        )
    except ProtocolError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAILURE
    finally:
        if cache is not None:
            cache.flush()

    write_stats_csv(os.path.join(manifest.output, "stats.csv"), outcome.stats)
    rows = write_archive_csv(
        os.path.join(manifest.output, "archive.csv"), outcome.archive
    )
    print(f"archive: {os.path.join(manifest.output, 'archive.csv')} ({rows} rows)")
    if outcome.error is not None:
        print(f"error: run aborted: {outcome.error}", file=sys.stderr)
        return EXIT_FAILURE
    return EXIT_OK


def serve_lorenz(manifest: RunManifest) -> int:
    handler = LorenzHandler(SimSetup(channel=manifest.channel))
    try:
        with ProtocolServer(manifest.endpoint, handler) as server:
            print(f"serving on {server.endpoint}", flush=True)
            server.serve_forever()
    except OSError as exc:
        print(f"error: cannot serve on {manifest.endpoint}: {exc}", file=sys.stderr)
        return EXIT_FAILURE
    return EXIT_OK


# ---------------------------------------------------------------------------
# argument surface


def _add_config_flags(parser: argparse.ArgumentParser) -> None:
    group = parser.add_argument_group("search settings")
    group.add_argument("--population-size", type=int, metavar="N")
    group.add_argument("--max-generations", type=int, metavar="N")
    group.add_argument("--p-crossover", type=float, metavar="P")
    group.add_argument("--p-mutation", type=float, metavar="P")
    group.add_argument("--tournament-size", type=int, metavar="N")
    group.add_argument("--init-min-height", type=int, metavar="H")
    group.add_argument("--init-max-height", type=int, metavar="H")
    group.add_argument("--variation-max-height", type=int, metavar="H")
    group.add_argument("--seed", type=int, metavar="N")


def _add_common_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--manifest", metavar="FILE", help="key=value settings file")
    parser.add_argument("--cache", metavar="PATH", help="fitness cache file")
    parser.add_argument("--output", metavar="DIR", help="artifact directory")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="symreg",
        description="Multi-objective symbolic regression for control laws.",
    )
    parser.add_argument(
        "-v", "--verbose", action="store_true", help="log per-generation progress"
    )
    commands = parser.add_subparsers(dest="command", required=True)

    local = commands.add_parser(
        "run-local", help="evolve against the in-process simulation"
    )
    _add_config_flags(local)
    _add_common_flags(local)
    local.add_argument("--channel", choices=("y", "z"))
    local.add_argument("--checkpoint", metavar="PATH")
    local.add_argument("--checkpoint-every", type=int, metavar="N")
    local.add_argument("--resume", metavar="PATH")
    local.add_argument(
        "--trajectories",
        type=int,
        metavar="N",
        help="emit trajectory CSVs for the N best archive rows",
    )
    local.set_defaults(mode="local", mode_name="run-local")

    remote = commands.add_parser(
        "run-remote", help="evolve against a remote experiment server"
    )
    _add_config_flags(remote)
    _add_common_flags(remote)
    remote.add_argument("--endpoint", metavar="HOST:PORT")
    remote.set_defaults(mode="remote", mode_name="run-remote")

    server = commands.add_parser("lorenz-server", help="serve the simulation")
    server.add_argument("--endpoint", metavar="HOST:PORT")
    server.add_argument("--channel", choices=("y", "z"))
    server.add_argument("--manifest", metavar="FILE")
    server.set_defaults(mode="server", mode_name="lorenz-server")

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        manifest = build_manifest(args)
    except UsageError as exc:
        parser.error(str(exc))  # exits with status 2
    try:
        if manifest.mode == "local":
            return run_local(manifest)
        if manifest.mode == "remote":
            return run_remote(manifest)
        return serve_lorenz(manifest)
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAILURE


if __name__ == "__main__":
    raise SystemExit(main())
