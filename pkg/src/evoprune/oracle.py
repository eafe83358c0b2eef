"""Fitness oracles: the in-process toy model and clients for external servers.

An oracle maps (pattern, samples) to an average loss. The remote flavors talk
the NDJSON protocol (see docs/PROTOCOL.md) over child-process stdio or TCP and
support pipelining: responses may arrive out of order and are matched back to
requests by id.
"""

from __future__ import annotations

import abc
import json
import math
import queue
import shlex
import socket
import subprocess
import threading
from concurrent.futures import ThreadPoolExecutor
from typing import Sequence

from .core import EvaluationError, PruningPattern
from .protocol import CAP_EMBED, CAP_EVAL, PROTOCOL_VERSION
from .toylm import (
    CalibrationSample,
    ToyLM,
    ToyLMConfig,
    average_loss,
    init_model,
    load_model,
)

DEFAULT_HANDSHAKE_TIMEOUT = 30.0
DEFAULT_EVAL_TIMEOUT = 600.0
DEFAULT_PIPELINE_WINDOW = 32


class OracleError(RuntimeError):
    """Base class for oracle and transport failures."""


class HandshakeError(OracleError):
    pass


class TransportClosed(OracleError):
    """The peer closed the connection (or the server process died)."""


class OracleTimeout(OracleError):
    pass


class RemoteError(OracleError):
    """The server answered a request with a protocol-level error message."""

    def __init__(self, message: str, detail: str | None = None):
        super().__init__(message if detail is None else f"{message}: {detail}")
        self.remote_message = message
        self.detail = detail


class CapabilityError(OracleError):
    pass


class FitnessOracle(abc.ABC):
    """Evaluator of pruning patterns; eval is a pure function of its inputs."""

    @property
    @abc.abstractmethod
    def layer_count(self) -> int:
        ...

    @abc.abstractmethod
    def evaluate(self, pattern: PruningPattern,
                 samples: Sequence[CalibrationSample]) -> float:
        ...

    def evaluate_many(self, patterns: Sequence[PruningPattern],
                      samples: Sequence[CalibrationSample]) -> list[float]:
        out = []
        for p in patterns:
            try:
                out.append(self.evaluate(p, samples))
            except OracleError:
                raise
            except Exception as e:
                raise EvaluationError(f"evaluation failed: {e}", pattern=p) from e
        return out

    @property
    def capabilities(self) -> frozenset[str]:
        return frozenset({CAP_EVAL})

    def embed(self, texts: Sequence[str]) -> list[list[float]]:
        raise CapabilityError("this oracle does not support embedding")

    def close(self) -> None:
        pass


class LocalToyOracle(FitnessOracle):
    """In-process oracle over an immutable toy model; thread-safe."""

    def __init__(self, model: ToyLM, workers: int = 1):
        self._model = model
        self._workers = max(1, int(workers))
        self._pool: ThreadPoolExecutor | None = None

    @property
    def model(self) -> ToyLM:
        return self._model

    @property
    def layer_count(self) -> int:
        return self._model.config.n_layers

    def evaluate(self, pattern, samples) -> float:
        return average_loss(self._model, pattern, list(samples)).loss

    def evaluate_many(self, patterns, samples) -> list[float]:
        samples = list(samples)
        if self._workers == 1 or len(patterns) <= 1:
            return super().evaluate_many(patterns, samples)
        if self._pool is None:
            self._pool = ThreadPoolExecutor(max_workers=self._workers)
        futures = [self._pool.submit(self.evaluate, p, samples) for p in patterns]
        out = []
        for p, fut in zip(patterns, futures):
            try:
                out.append(fut.result())
            except Exception as e:
                raise EvaluationError(f"evaluation failed: {e}", pattern=p) from e
        return out

    def close(self) -> None:
        if self._pool is not None:
            self._pool.shutdown(wait=False)
            self._pool = None


class _LineTransport:
    """Newline-delimited text channel with a background reader thread.

    The reader pushes complete lines into a queue and a sentinel on EOF, so a
    killed peer surfaces as TransportClosed immediately instead of hanging.
    """

    def __init__(self):
        self._lines: queue.Queue[str | None] = queue.Queue()

    def _start_reader(self, stream) -> None:
        thread = threading.Thread(target=self._pump, args=(stream,), daemon=True)
        thread.start()

    def _pump(self, stream) -> None:
        try:
            for line in stream:
                self._lines.put(line)
        except Exception:
            pass
        finally:
            self._lines.put(None)

    def recv_line(self, timeout: float) -> str:
        try:
            item = self._lines.get(timeout=timeout)
        except queue.Empty:
            raise OracleTimeout(f"no response within {timeout:.0f}s") from None
        if item is None:
            raise TransportClosed("connection closed by peer")
        return item

    def send_line(self, line: str) -> None:
        raise NotImplementedError

    def close(self) -> None:
        pass


class ProcessTransport(_LineTransport):
    """Child-process server over stdio; stderr passes through."""

    def __init__(self, argv: Sequence[str]):
        super().__init__()
        try:
            self._proc = subprocess.Popen(
                list(argv),
                stdin=subprocess.PIPE,
                stdout=subprocess.PIPE,
                text=True,
                bufsize=1,
            )
        except OSError as e:
            raise TransportClosed(f"cannot start server {argv!r}: {e}") from e
        self._start_reader(self._proc.stdout)

    def send_line(self, line: str) -> None:
        try:
            self._proc.stdin.write(line + "\n")
            self._proc.stdin.flush()
        except (BrokenPipeError, ValueError, OSError) as e:
            raise TransportClosed(f"server process is gone: {e}") from e

    def close(self) -> None:
        try:
            if self._proc.stdin:
                self._proc.stdin.close()
            self._proc.wait(timeout=5)
        except Exception:
            self._proc.kill()


class TcpTransport(_LineTransport):
    def __init__(self, host: str, port: int, connect_timeout: float = 30.0):
        super().__init__()
        try:
            self._sock = socket.create_connection((host, port), timeout=connect_timeout)
        except OSError as e:
            raise TransportClosed(f"cannot connect to {host}:{port}: {e}") from e
        self._sock.settimeout(None)
        self._rfile = self._sock.makefile("r", encoding="utf-8", newline="\n")
        self._wfile = self._sock.makefile("w", encoding="utf-8", newline="\n")
        self._start_reader(self._rfile)

    def send_line(self, line: str) -> None:
        try:
            self._wfile.write(line + "\n")
            self._wfile.flush()
        except OSError as e:
            raise TransportClosed(f"connection lost: {e}") from e

    def close(self) -> None:
        try:
            self._sock.close()
        except OSError:
            pass


class OracleClient:
    """Protocol client: handshake, pipelined requests, id correlation."""

    def __init__(self, transport: _LineTransport, *,
                 handshake_timeout: float = DEFAULT_HANDSHAKE_TIMEOUT,
                 eval_timeout: float = DEFAULT_EVAL_TIMEOUT):
        from .core import canonical_dumps

        self._dumps = canonical_dumps
        self._transport = transport
        self._eval_timeout = eval_timeout
        self._next_id = 0

        hello_id = self._take_id()
        self._send({"type": "hello", "id": hello_id, "protocol_version": PROTOCOL_VERSION})
        reply = self._recv(handshake_timeout)
        if reply.get("type") == "error":
            raise HandshakeError(f"server rejected handshake: {reply.get('message')}")
        if reply.get("type") != "hello":
            raise HandshakeError(f"expected hello, got {reply.get('type')!r}")
        if reply.get("id") != hello_id:
            raise HandshakeError(f"hello answered with id {reply.get('id')!r}")
        version = reply.get("protocol_version")
        if version != PROTOCOL_VERSION:
            raise HandshakeError(
                f"protocol version mismatch: server speaks {version!r}, client speaks {PROTOCOL_VERSION}"
            )
        layer_count = reply.get("layer_count")
        capabilities = reply.get("capabilities")
        if not isinstance(layer_count, int) or layer_count < 1:
            raise HandshakeError(f"bad layer_count in hello: {layer_count!r}")
        if not isinstance(capabilities, list) or not all(isinstance(c, str) for c in capabilities):
            raise HandshakeError("bad capabilities in hello")
        self.layer_count = layer_count
        self.capabilities = frozenset(capabilities)

    def _take_id(self) -> int:
        rid = self._next_id
        self._next_id += 1
        return rid

    def _send(self, msg: dict) -> None:
        self._transport.send_line(self._dumps(msg))

    def _recv(self, timeout: float) -> dict:
        line = self._transport.recv_line(timeout)
        try:
            msg = json.loads(line)
        except json.JSONDecodeError as e:
            raise OracleError(f"peer sent malformed json: {line[:120]!r}") from e
        if not isinstance(msg, dict):
            raise OracleError(f"peer sent a non-object message: {line[:120]!r}")
        return msg

    def request_many(self, payloads: Sequence[dict], *,
                     window: int = DEFAULT_PIPELINE_WINDOW,
                     timeout: float | None = None) -> list[dict]:
        """Send requests keeping up to `window` in flight; align replies to inputs."""
        timeout = self._eval_timeout if timeout is None else timeout
        n = len(payloads)
        out: list[dict | None] = [None] * n
        index_of: dict[int, int] = {}
        next_send = 0
        received = 0
        while received < n:
            while next_send < n and len(index_of) - received < window:
                msg = dict(payloads[next_send])
                msg["id"] = self._take_id()
                index_of[msg["id"]] = next_send
                self._send(msg)
                next_send += 1
            reply = self._recv(timeout)
            rid = reply.get("id")
            if rid not in index_of:
                raise OracleError(f"response with unknown id {rid!r}")
            idx = index_of[rid]
            if out[idx] is not None:
                raise OracleError(f"duplicate response for id {rid!r}")
            out[idx] = reply
            received += 1
        return out  # type: ignore[return-value]

    def eval_patterns(self, patterns: Sequence[PruningPattern],
                      samples: Sequence[CalibrationSample], *,
                      window: int = DEFAULT_PIPELINE_WINDOW) -> list[float]:
        sample_ids = [list(s.token_ids) for s in samples]
        payloads = [
            {"type": "eval", "pattern": list(p.mask), "samples": sample_ids}
            for p in patterns
        ]
        replies = self.request_many(payloads, window=window)
        losses = []
        for pattern, reply in zip(patterns, replies):
            if reply.get("type") == "error":
                raise EvaluationError(
                    f"remote evaluation failed: {reply.get('message')}"
                    + (f" ({reply['detail']})" if reply.get("detail") else ""),
                    pattern=pattern,
                )
            loss = reply.get("loss")
            if reply.get("type") != "result" or not isinstance(loss, (int, float)):
                raise OracleError(f"malformed result message: {reply!r}")
            loss = float(loss)
            if not math.isfinite(loss):
                raise OracleError("remote returned a non-finite loss")
            losses.append(loss)
        return losses

    def embed_texts(self, texts: Sequence[str]) -> list[list[float]]:
        reply = self.request_many([{"type": "embed", "texts": list(texts)}])[0]
        if reply.get("type") == "error":
            raise RemoteError(str(reply.get("message")), reply.get("detail"))
        vectors = reply.get("vectors")
        if reply.get("type") != "embedding" or not isinstance(vectors, list):
            raise OracleError(f"malformed embedding message: {reply!r}")
        return vectors

    def close(self) -> None:
        self._transport.close()


class RemoteOracle(FitnessOracle):
    """FitnessOracle over an OracleClient connection."""

    def __init__(self, client: OracleClient, *, window: int = DEFAULT_PIPELINE_WINDOW):
        self._client = client
        self._window = window

    @property
    def layer_count(self) -> int:
        return self._client.layer_count

    @property
    def capabilities(self) -> frozenset[str]:
        return self._client.capabilities

    def evaluate(self, pattern, samples) -> float:
        return self._client.eval_patterns([pattern], samples, window=1)[0]

    def evaluate_many(self, patterns, samples) -> list[float]:
        return self._client.eval_patterns(patterns, samples, window=self._window)

    def embed(self, texts: Sequence[str]) -> list[list[float]]:
        if CAP_EMBED not in self.capabilities:
            raise CapabilityError("server did not advertise the embed capability")
        return self._client.embed_texts(texts)

    def close(self) -> None:
        self._client.close()


def _toy_model_from_spec(spec: str) -> ToyLM:
    if "=" in spec:
        fields = {}
        for part in spec.split(","):
            part = part.strip()
            if not part:
                continue
            key, _, value = part.partition("=")
            fields[key.strip()] = value.strip()
        aliases = {
            "seed": "weight_seed", "layers": "n_layers", "heads": "n_heads",
            "d_model": "d_model", "d_ff": "d_ff", "max_len": "max_seq_len",
            "vocab": "vocab_size",
        }
        kwargs = {}
        for key, value in fields.items():
            if key not in aliases:
                raise ValueError(f"unknown toy model field {key!r}")
            kwargs[aliases[key]] = int(value)
        return init_model(ToyLMConfig(**kwargs))
    return load_model(spec)


def resolve_oracle(spec: str, *, workers: int = 1,
                   handshake_timeout: float = DEFAULT_HANDSHAKE_TIMEOUT,
                   eval_timeout: float = DEFAULT_EVAL_TIMEOUT) -> FitnessOracle:
    """Build an oracle from a spec string.

    "toy:<checkpoint path>" or "toy:seed=0,layers=12,..." for the in-process
    model, "exec:<command line>" for a child-process server, "tcp:host:port"
    for a remote one.
    """
    kind, sep, rest = spec.partition(":")
    if not sep:
        raise ValueError(f"oracle spec needs a 'toy:'/'exec:'/'tcp:' prefix, got {spec!r}")
    if kind == "toy":
        return LocalToyOracle(_toy_model_from_spec(rest), workers=workers)
    if kind == "exec":
        argv = shlex.split(rest)
        if not argv:
            raise ValueError("exec: oracle spec has an empty command line")
        transport = ProcessTransport(argv)
    elif kind == "tcp":
        host, _, port = rest.rpartition(":")
        if not host or not port.isdigit():
            raise ValueError(f"tcp: oracle spec must be tcp:host:port, got {spec!r}")
        transport = TcpTransport(host, int(port), connect_timeout=handshake_timeout)
    else:
        raise ValueError(f"unknown oracle spec kind {kind!r}")
    try:
        client = OracleClient(
            transport, handshake_timeout=handshake_timeout, eval_timeout=eval_timeout
        )
    except Exception:
        transport.close()
        raise
    return RemoteOracle(client)
