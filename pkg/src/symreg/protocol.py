"""Client-server experiment evaluation over newline-delimited JSON.

One frame is one UTF-8 JSON object terminated by a single ``\\n`` byte, with
exactly two members: ``action`` and ``payload``.  The GP side (client) sends
CONFIG, then batched EXPERIMENT requests, then SHUTDOWN; the experiment side
(server) answers each request with a frame of the same action, or ERROR (a
documented extension, the base protocol has no error channel).  Strict JSON
is used on the wire: non-finite fitness values travel as ``null`` and are
decoded back to +inf.

The request-reply alternation is strict: one outstanding request per
connection, replies in request order.
"""

from __future__ import annotations

import dataclasses
import json
import logging
import math
import socket
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

from .errors import ProtocolError, TransportError
from .evolution import (
    EvolutionResult,
    FitnessVector,
    GenerationStats,
    GPConfig,
    Individual,
    evolve,
)
from .expressions import PrimitiveSet, build_pset, print_prefix

logger = logging.getLogger(__name__)

ACTION_CONFIG = "CONFIG"
ACTION_EXPERIMENT = "EXPERIMENT"
ACTION_SHUTDOWN = "SHUTDOWN"
ACTION_ERROR = "ERROR"
ACTIONS = frozenset({ACTION_CONFIG, ACTION_EXPERIMENT, ACTION_SHUTDOWN, ACTION_ERROR})

# CONFIG and SHUTDOWN answer immediately; EXPERIMENT may drive slow hardware
# and is unbounded unless the caller overrides it.
CONFIG_TIMEOUT = 10.0
SHUTDOWN_TIMEOUT = 10.0
EXPERIMENT_TIMEOUT: float | None = None

_RECV_CHUNK = 1 << 16


@dataclass(frozen=True)
class Message:
    action: str
    payload: object


def encode_message(message: Message) -> bytes:
    """Serialize to one wire frame (strict JSON, trailing newline)."""
    if message.action not in ACTIONS:
        raise ProtocolError(f"unknown action {message.action!r}")
    try:
        text = json.dumps(
            {"action": message.action, "payload": message.payload},
            allow_nan=False,
            separators=(",", ":"),
        )
    except (TypeError, ValueError) as exc:
        raise ProtocolError(f"payload not representable as strict JSON: {exc}") from None
    return text.encode("utf-8") + b"\n"


def decode_message(frame: bytes) -> Message:
    """Parse one complete frame back into a message.

    The frame must carry exactly one trailing newline and exactly the two
    members ``action`` and ``payload``; anything else raises
    :class:`ProtocolError` with a diagnostic.
    """
    if not frame.endswith(b"\n"):
        raise ProtocolError("incomplete frame: missing trailing newline")
    body = frame[:-1]
    if b"\n" in body:
        raise ProtocolError("frame contains an unescaped newline")

    def reject_constant(name: str):
        raise ValueError(f"non-finite literal {name} is not allowed on the wire")

    try:
        obj = json.loads(body.decode("utf-8"), parse_constant=reject_constant)
    except (ValueError, UnicodeDecodeError) as exc:
        raise ProtocolError(f"malformed JSON frame: {exc}") from None
    if not isinstance(obj, dict) or set(obj) != {"action", "payload"}:
        raise ProtocolError(
            "frame must be an object with exactly the members "
            f"'action' and 'payload', got {sorted(obj) if isinstance(obj, dict) else type(obj).__name__}"
        )
    action = obj["action"]
    if action not in ACTIONS:
        raise ProtocolError(f"unknown action {action!r}")
    return Message(action, obj["payload"])


def parse_endpoint(endpoint: str) -> tuple[str, int]:
    """Split a ``host:port`` string; raises ValueError on bad shape."""
    host, sep, port_text = endpoint.rpartition(":")
    if not sep or not host:
        raise ValueError(f"endpoint must look like host:port, got {endpoint!r}")
    try:
        port = int(port_text)
    except ValueError:
        raise ValueError(f"invalid port in endpoint {endpoint!r}") from None
    if not (0 <= port <= 65535):
        raise ValueError(f"port out of range in endpoint {endpoint!r}")
    return host, port


class Connection:
    """Framed messages over a stream socket, with per-call timeouts."""

    def __init__(self, sock: socket.socket) -> None:
        self._sock = sock
        self._buffer = bytearray()

    def send(self, message: Message) -> None:
        frame = encode_message(message)  # encoding errors are not transport errors
        try:
            self._sock.sendall(frame)
        except OSError as exc:
            raise TransportError(f"connection lost while sending: {exc}") from None

    def receive(self, timeout: float | None = None) -> Message | None:
        """Next message, or None on clean end-of-stream between frames.

        Transport failures (timeout, reset, close inside a frame) raise
        :class:`TransportError`; a syntactically bad frame raises plain
        :class:`ProtocolError` after consuming the offending line, so the
        stream stays usable.
        """
        self._sock.settimeout(timeout)
        while b"\n" not in self._buffer:
            try:
                chunk = self._sock.recv(_RECV_CHUNK)
            except TimeoutError:
                raise TransportError(
                    f"timed out after {timeout}s waiting for a frame"
                ) from None
            except OSError as exc:
                raise TransportError(f"connection lost while receiving: {exc}") from None
            if not chunk:
                if self._buffer:
                    raise TransportError("connection closed mid-frame")
                return None
            self._buffer.extend(chunk)
        line, _, rest = bytes(self._buffer).partition(b"\n")
        self._buffer = bytearray(rest)
        return decode_message(line + b"\n")

    def close(self) -> None:
        try:
            self._sock.close()
        except OSError:
            pass


class ExperimentHandler:
    """Server-side request handlers.

    Subclasses provide the configuration payload and per-expression scoring;
    the default ``on_experiment`` contains failures per expression so one
    bad candidate never poisons a batch.
    """

    #: number of objectives in every fitness tuple
    objective_count: int = 1

    def on_config(self) -> dict:
        raise NotImplementedError

    def evaluate_expression(self, text: str) -> tuple[float, ...]:
        raise NotImplementedError

    def on_experiment(self, expressions: Sequence[str]) -> list[tuple[float, ...]]:
        results = []
        for text in expressions:
            try:
                fitness = tuple(float(v) for v in self.evaluate_expression(text))
                if len(fitness) != self.objective_count:
                    raise ProtocolError(
                        f"handler produced {len(fitness)} objectives, "
                        f"expected {self.objective_count}"
                    )
            except Exception:  # noqa: BLE001 - containment is the contract
                logger.warning("evaluation failed for %r", text, exc_info=True)
                fitness = (math.inf,) * self.objective_count
            results.append(fitness)
        return results

    def on_shutdown(self) -> None:
        pass


def _encode_fitness(batch: Sequence[tuple[float, ...]]) -> list[list[float | None]]:
    # Strict JSON cannot carry inf/nan; those travel as null.
    return [
        [v if math.isfinite(v) else None for v in fitness] for fitness in batch
    ]


def _decode_fitness_entry(entry: object) -> FitnessVector:
    if not isinstance(entry, (list, tuple)) or not entry:
        raise ProtocolError(f"fitness entry must be a non-empty list, got {entry!r}")
    values = []
    for v in entry:
        if v is None:
            values.append(math.inf)
        elif isinstance(v, (int, float)) and not isinstance(v, bool):
            values.append(float(v))
        else:
            raise ProtocolError(f"fitness value must be a number or null, got {v!r}")
    return FitnessVector(tuple(values))


class ProtocolServer:
    """Serves one client connection at a time until a SHUTDOWN arrives."""

    def __init__(self, endpoint: str, handler: ExperimentHandler) -> None:
        host, port = parse_endpoint(endpoint)
        self.handler = handler
        self._listener = socket.create_server((host, port))
        self._closed = False

    @property
    def address(self) -> tuple[str, int]:
        """Actual bound (host, port); useful with a requested port of 0."""
        addr = self._listener.getsockname()
        return addr[0], addr[1]

    @property
    def endpoint(self) -> str:
        host, port = self.address
        return f"{host}:{port}"

    def serve_forever(self) -> None:
        """Accept clients sequentially; returns after serving a SHUTDOWN."""
        try:
            while not self._closed:
                try:
                    sock, peer = self._listener.accept()
                except OSError:
                    break  # listener closed from another thread
                logger.info("client connected from %s", peer)
                conn = Connection(sock)
                try:
                    finished = self._serve_connection(conn)
                finally:
                    conn.close()
                if finished:
                    break
        finally:
            self.close()

    def _serve_connection(self, conn: Connection) -> bool:
        """Handle requests until SHUTDOWN (True) or disconnect (False)."""
        while True:
            try:
                request = conn.receive(timeout=None)
            except TransportError:
                logger.info("client connection lost")
                return False
            except ProtocolError as exc:
                # Bad frame but intact stream: report it and keep serving.
                try:
                    conn.send(Message(ACTION_ERROR, str(exc)))
                except TransportError:
                    return False
                continue
            if request is None:
                logger.info("client disconnected without SHUTDOWN")
                return False
            reply = self._dispatch(request)
            try:
                conn.send(reply)
            except TransportError:
                return False
            if request.action == ACTION_SHUTDOWN and reply.action == ACTION_SHUTDOWN:
                self.handler.on_shutdown()
                return True

    def _dispatch(self, request: Message) -> Message:
        try:
            if request.action == ACTION_CONFIG:
                return Message(ACTION_CONFIG, self.handler.on_config())
            if request.action == ACTION_EXPERIMENT:
                payload = request.payload
                if not isinstance(payload, list) or not all(
                    isinstance(e, str) for e in payload
                ):
                    return Message(
                        ACTION_ERROR,
                        "EXPERIMENT payload must be a list of expression strings",
                    )
                fitness = self.handler.on_experiment(payload)
                return Message(ACTION_EXPERIMENT, {"fitness": _encode_fitness(fitness)})
            if request.action == ACTION_SHUTDOWN:
                return Message(ACTION_SHUTDOWN, {})
            return Message(ACTION_ERROR, f"unexpected action {request.action!r}")
        except Exception as exc:  # noqa: BLE001 - server must stay up
            logger.warning("handler failed on %s", request.action, exc_info=True)
            return Message(ACTION_ERROR, f"handler failure: {exc}")

    def close(self) -> None:
        self._closed = True
        try:
            self._listener.close()
        except OSError:
            pass

    def __enter__(self) -> "ProtocolServer":
        return self

    def __exit__(self, *exc_info) -> None:
        self.close()


def serve(endpoint: str, handler: ExperimentHandler) -> None:
    """Bind and serve until a client sends SHUTDOWN."""
    with ProtocolServer(endpoint, handler) as server:
        logger.info("serving experiments on %s", server.endpoint)
        server.serve_forever()


class RemoteAssessment:
    """Assessment handle that evaluates a generation in one EXPERIMENT.

    Individuals are keyed by their constant-resolved prefix string; cache
    hits and within-batch duplicates are not re-sent.  Constant-free keys
    are cached like local assessment; expressions still carrying symbolic
    constants are re-evaluated by the server (which applies its documented
    defaults) and never cached.
    """

    def __init__(
        self,
        conn: Connection,
        cache=None,
        experiment_timeout: float | None = EXPERIMENT_TIMEOUT,
    ) -> None:
        self.conn = conn
        self.cache = cache
        self.experiment_timeout = experiment_timeout
        self.experiment_requests = 0
        self.expressions_sent = 0
        self._objective_count: int | None = None

    def __call__(self, batch: Sequence[Individual]) -> None:
        results: list[FitnessVector | None] = [None] * len(batch)
        claims: dict[str, list[int]] = {}
        pending: list[tuple[str, bool]] = []
        for i, ind in enumerate(batch):
            resolved = ind.resolved_expr()
            key = print_prefix(resolved)
            constant_set = set(ind.expr.pset.constants)
            cacheable = not any(
                token in constant_set for token in key.split(" ")
            )
            if cacheable and self.cache is not None:
                hit = self.cache.get(key)
                if hit is not None:
                    results[i] = hit
                    continue
            if key in claims:
                claims[key].append(i)
                continue
            claims[key] = [i]
            pending.append((key, cacheable))

        if pending:
            expressions = [key for key, _ in pending]
            self.experiment_requests += 1
            self.expressions_sent += len(expressions)
            self.conn.send(Message(ACTION_EXPERIMENT, expressions))
            reply = self.conn.receive(timeout=self.experiment_timeout)
            fitness_list = self._validate_reply(reply, len(expressions))
            for (key, cacheable), entry in zip(pending, fitness_list):
                fitness = _decode_fitness_entry(entry)
                if self._objective_count is None:
                    self._objective_count = len(fitness.values)
                elif len(fitness.values) != self._objective_count:
                    raise ProtocolError(
                        "server changed objective count mid-run: "
                        f"{len(fitness.values)} vs {self._objective_count}"
                    )
                if cacheable and self.cache is not None:
                    self.cache.put(key, fitness)
                for i in claims[key]:
                    results[i] = fitness

        for ind, fitness in zip(batch, results):
            if fitness is not None:
                ind.fitness = fitness

    def _validate_reply(self, reply: Message | None, expected: int) -> list:
        if reply is None:
            raise ProtocolError("server closed the connection mid-run")
        if reply.action == ACTION_ERROR:
            raise ProtocolError(f"server error: {reply.payload!r}")
        if reply.action != ACTION_EXPERIMENT:
            raise ProtocolError(
                f"expected EXPERIMENT reply, got {reply.action!r}"
            )
        payload = reply.payload
        if not isinstance(payload, dict) or "fitness" not in payload:
            raise ProtocolError("EXPERIMENT reply payload must contain 'fitness'")
        fitness_list = payload["fitness"]
        if not isinstance(fitness_list, list) or len(fitness_list) != expected:
            got = len(fitness_list) if isinstance(fitness_list, list) else "non-list"
            raise ProtocolError(
                f"fitness count mismatch: sent {expected} expressions, got {got}"
            )
        return fitness_list


_FLOAT_FIELDS = {"p_crossover", "p_mutation"}


def merge_config(
    server_options: Mapping | None, overrides: Mapping | None
) -> GPConfig:
    """Resolve run parameters: defaults, then server options, then client
    overrides (client wins).  Unknown option names are ignored with a
    warning so servers can ship settings this engine does not know."""
    values = {f.name: f.default for f in dataclasses.fields(GPConfig)}
    for source in (server_options, overrides):
        if not source:
            continue
        for key, value in source.items():
            if key not in values:
                logger.warning("ignoring unknown engine option %r", key)
                continue
            values[key] = float(value) if key in _FLOAT_FIELDS else int(value)
    return GPConfig(**values)


def build_pset_from_config(payload: Mapping) -> PrimitiveSet:
    """Turn a CONFIG reply payload into a primitive set."""
    if not isinstance(payload, Mapping) or "primitives" not in payload:
        raise ProtocolError("CONFIG reply payload must contain 'primitives'")
    primitives = payload["primitives"]
    if not isinstance(primitives, Mapping) or not primitives:
        raise ProtocolError("'primitives' must be a non-empty name->arity map")
    constants = payload.get("constants", [])
    if not isinstance(constants, list):
        raise ProtocolError("'constants' must be a list of names")
    functions = {}
    arguments = []
    for name, arity in primitives.items():
        if not isinstance(arity, int) or isinstance(arity, bool) or arity < 0:
            raise ProtocolError(f"bad arity for primitive {name!r}: {arity!r}")
        if arity > 0:
            functions[name] = arity
        elif name not in constants:
            arguments.append(name)
    missing = [name for name in constants if primitives.get(name, -1) != 0]
    if missing:
        raise ProtocolError(
            f"constants must be arity-0 primitives, offending: {missing}"
        )
    return build_pset(functions, arguments, constants)


@dataclass
class RemoteRunOutcome:
    archive: object
    stats: list[GenerationStats]
    completed_generations: int
    error: Exception | None
    config: GPConfig
    pset: PrimitiveSet
    config_requests: int = 0
    experiment_requests: int = 0
    shutdown_requests: int = 0


def client_run(
    endpoint: str,
    overrides: Mapping | None = None,
    cache=None,
    callbacks: Sequence[Callable[[GenerationStats], None]] = (),
    config_timeout: float = CONFIG_TIMEOUT,
    experiment_timeout: float | None = EXPERIMENT_TIMEOUT,
    shutdown_timeout: float = SHUTDOWN_TIMEOUT,
) -> RemoteRunOutcome:
    """Drive a full remote evolution run against an experiment server.

    Fetches the server's configuration, merges engine options (client
    overrides win), evolves with one EXPERIMENT request per generation of
    cache misses, and sends SHUTDOWN best-effort at the end, successful or
    not.  Protocol violations abort the run and are reported in the
    outcome together with the partial archive.
    """
    host, port = parse_endpoint(endpoint)
    try:
        sock = socket.create_connection((host, port), timeout=config_timeout)
    except OSError as exc:
        raise ProtocolError(f"cannot connect to {endpoint}: {exc}") from None
    conn = Connection(sock)
    try:
        conn.send(Message(ACTION_CONFIG, None))
        reply = conn.receive(timeout=config_timeout)
        if reply is None:
            raise ProtocolError("server closed the connection during CONFIG")
        if reply.action == ACTION_ERROR:
            raise ProtocolError(f"server error: {reply.payload!r}")
        if reply.action != ACTION_CONFIG:
            raise ProtocolError(f"expected CONFIG reply, got {reply.action!r}")
        pset = build_pset_from_config(reply.payload)
        options = reply.payload.get("options") if isinstance(reply.payload, Mapping) else None
        config = merge_config(options, overrides)

        assessment = RemoteAssessment(
            conn, cache=cache, experiment_timeout=experiment_timeout
        )
        result: EvolutionResult = evolve(
            config, pset, assessment, callbacks=callbacks
        )
        outcome = RemoteRunOutcome(
            archive=result.archive,
            stats=result.stats,
            completed_generations=result.completed_generations,
            error=result.error,
            config=config,
            pset=pset,
            config_requests=1,
            experiment_requests=assessment.experiment_requests,
        )
        try:
            conn.send(Message(ACTION_SHUTDOWN, None))
            outcome.shutdown_requests = 1
            conn.receive(timeout=shutdown_timeout)
        except ProtocolError as exc:
            logger.warning("best-effort SHUTDOWN failed: %s", exc)
        return outcome
    finally:
        conn.close()
