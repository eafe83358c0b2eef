"""NDJSON oracle server hosting the bundled toy model.

Serves eval (token-id samples), text-eval (raw text, byte-level tokenizer)
and embed (batch-statistics trigram embedder) over stdio or TCP. Responses
use canonical JSON so clients can rely on exact bytes.
"""

from __future__ import annotations

import json
import socket
import sys

from .calibration import HashedNgramEmbedder
from .core import PruningPattern, canonical_dumps
from .protocol import (
    CAP_EMBED,
    CAP_EVAL,
    CAP_TEXT_EVAL,
    ERR_BAD_PATTERN,
    ERR_BAD_REQUEST,
    ERR_EVAL_FAILED,
    ERR_MALFORMED,
    ERR_UNSUPPORTED_TYPE,
    error_msg,
    hello_msg,
    result_msg,
    embedding_msg,
)
from .toylm import CalibrationSample, ToyLM, average_loss, encode_text

_CAPABILITIES = (CAP_EMBED, CAP_EVAL, CAP_TEXT_EVAL)


def _request_id(msg: dict) -> int | None:
    rid = msg.get("id")
    return rid if isinstance(rid, int) else None


def _parse_pattern(msg: dict, m: int) -> PruningPattern | None:
    raw = msg.get("pattern")
    if not isinstance(raw, list) or len(raw) != m:
        return None
    if any(b not in (0, 1) for b in raw):
        return None
    return PruningPattern(tuple(int(b) for b in raw))


def handle_request(msg: object, model: ToyLM, embedder: HashedNgramEmbedder) -> dict:
    """Map one request to one response; never raises."""
    if not isinstance(msg, dict):
        return error_msg(None, ERR_BAD_REQUEST)
    rid = _request_id(msg)
    mtype = msg.get("type")
    if mtype == "hello":
        return hello_msg(
            rid if rid is not None else 0,
            layer_count=model.config.n_layers,
            capabilities=_CAPABILITIES,
        )
    if mtype == "eval":
        pattern = _parse_pattern(msg, model.config.n_layers)
        if pattern is None:
            return error_msg(rid, ERR_BAD_PATTERN)
        raw_samples = msg.get("samples")
        raw_texts = msg.get("texts")
        try:
            if raw_samples is not None:
                samples = [CalibrationSample(tuple(int(t) for t in s)) for s in raw_samples]
            elif raw_texts is not None:
                samples = [CalibrationSample(encode_text(t)) for t in raw_texts]
            else:
                return error_msg(rid, ERR_BAD_REQUEST, "eval needs samples or texts")
            if not samples:
                return error_msg(rid, ERR_BAD_REQUEST, "empty sample list")
            loss = average_loss(model, pattern, samples).loss
        except Exception as e:
            return error_msg(rid, ERR_EVAL_FAILED, str(e))
        return result_msg(rid, loss)
    if mtype == "embed":
        texts = msg.get("texts")
        if not isinstance(texts, list) or not all(isinstance(t, str) for t in texts):
            return error_msg(rid, ERR_BAD_REQUEST, "embed needs a list of texts")
        try:
            vectors = [[float(x) for x in vec] for vec in embedder.embed(texts)]
        except Exception as e:
            return error_msg(rid, ERR_EVAL_FAILED, str(e))
        return embedding_msg(rid, vectors)
    return error_msg(rid, ERR_UNSUPPORTED_TYPE)


def serve_stream(model: ToyLM, rfile, wfile,
                 embedder: HashedNgramEmbedder | None = None) -> None:
    """Answer requests line by line until EOF; one response per request."""
    embedder = embedder or HashedNgramEmbedder()
    for line in rfile:
        line = line.strip()
        if not line:
            continue
        try:
            msg = json.loads(line)
        except json.JSONDecodeError:
            response = error_msg(None, ERR_MALFORMED)
        else:
            response = handle_request(msg, model, embedder)
        wfile.write(canonical_dumps(response) + "\n")
        wfile.flush()


def serve_stdio(model: ToyLM, embedder: HashedNgramEmbedder | None = None) -> None:
    serve_stream(model, sys.stdin, sys.stdout, embedder)


def serve_tcp(model: ToyLM, host: str, port: int,
              embedder: HashedNgramEmbedder | None = None) -> None:
    """Accept connections one at a time; each connection is one session."""
    with socket.create_server((host, port)) as server:
        print(f"listening on {host}:{server.getsockname()[1]}", file=sys.stderr, flush=True)
        while True:
            conn, _ = server.accept()
            with conn:
                rfile = conn.makefile("r", encoding="utf-8", newline="\n")
                wfile = conn.makefile("w", encoding="utf-8", newline="\n")
                try:
                    serve_stream(model, rfile, wfile, embedder)
                except (BrokenPipeError, ConnectionResetError):
                    pass
