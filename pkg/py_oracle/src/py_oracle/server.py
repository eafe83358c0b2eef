"""NDJSON oracle server loop (protocol version 1).

Independent implementation of the wire protocol documented in the search
framework's docs/PROTOCOL.md: one canonical-JSON object per line, pinned
error codes, requests answered in arrival order with their ids echoed.
"""

from __future__ import annotations

import json
import socket
import sys

from .model import LayerDropHost

PROTOCOL_VERSION = 1

ERR_MALFORMED = "malformed json"
ERR_BAD_REQUEST = "invalid request"
ERR_UNSUPPORTED_TYPE = "unsupported message type"
ERR_BAD_PATTERN = "pattern length mismatch"
ERR_EVAL_FAILED = "evaluation failed"

CAPABILITIES = ["embed", "eval", "text-eval"]


def canonical(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=False)


def _error(rid, message, detail=None) -> dict:
    msg = {"type": "error", "id": rid, "message": message}
    if detail is not None:
        msg["detail"] = detail
    return msg


def _request_id(msg: dict):
    rid = msg.get("id")
    return rid if isinstance(rid, int) else None


def handle_request(msg, host: LayerDropHost) -> dict:
    if not isinstance(msg, dict):
        return _error(None, ERR_BAD_REQUEST)
    rid = _request_id(msg)
    mtype = msg.get("type")
    if mtype == "hello":
        return {
            "type": "hello",
            "id": rid if rid is not None else 0,
            "protocol_version": PROTOCOL_VERSION,
            "layer_count": host.layer_count,
            "capabilities": CAPABILITIES,
        }
    if mtype == "eval":
        pattern = msg.get("pattern")
        if (not isinstance(pattern, list) or len(pattern) != host.layer_count
                or any(b not in (0, 1) for b in pattern)):
            return _error(rid, ERR_BAD_PATTERN)
        samples = msg.get("samples")
        texts = msg.get("texts")
        try:
            if samples is not None:
                if not isinstance(samples, list) or not samples:
                    return _error(rid, ERR_BAD_REQUEST, "samples must be a non-empty list")
                loss = host.eval_loss(pattern, [[int(t) for t in s] for s in samples])
            elif texts is not None:
                if not isinstance(texts, list) or not all(isinstance(t, str) for t in texts):
                    return _error(rid, ERR_BAD_REQUEST, "texts must be a list of strings")
                loss = host.eval_texts(pattern, texts)
            else:
                return _error(rid, ERR_BAD_REQUEST, "eval needs samples or texts")
        except Exception as e:
            return _error(rid, ERR_EVAL_FAILED, str(e))
        return {"type": "result", "id": rid, "loss": loss}
    if mtype == "embed":
        texts = msg.get("texts")
        if not isinstance(texts, list) or not all(isinstance(t, str) for t in texts):
            return _error(rid, ERR_BAD_REQUEST, "embed needs a list of texts")
        try:
            vectors = host.embed(texts)
        except Exception as e:
            return _error(rid, ERR_EVAL_FAILED, str(e))
        return {"type": "embedding", "id": rid, "vectors": vectors}
    return _error(rid, ERR_UNSUPPORTED_TYPE)


def serve_stream(host: LayerDropHost, rfile, wfile) -> None:
    for line in rfile:
        line = line.strip()
        if not line:
            continue
        try:
            msg = json.loads(line)
        except json.JSONDecodeError:
            response = _error(None, ERR_MALFORMED)
        else:
            response = handle_request(msg, host)
        wfile.write(canonical(response) + "\n")
        wfile.flush()


def serve_stdio(host: LayerDropHost) -> None:
    serve_stream(host, sys.stdin, sys.stdout)


def serve_tcp(host: LayerDropHost, bind_host: str, port: int) -> None:
    with socket.create_server((bind_host, port)) as server:
        print(f"listening on {bind_host}:{server.getsockname()[1]}", file=sys.stderr, flush=True)
        while True:
            conn, _ = server.accept()
            with conn:
                rfile = conn.makefile("r", encoding="utf-8", newline="\n")
                wfile = conn.makefile("w", encoding="utf-8", newline="\n")
                try:
                    serve_stream(host, rfile, wfile)
                except (BrokenPipeError, ConnectionResetError):
                    pass
