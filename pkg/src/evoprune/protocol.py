"""Wire protocol constants and message builders.

One JSON object per line, UTF-8, newline-delimited, over child-process stdio
or TCP. Servers serialize responses in canonical form (sorted keys, compact
separators). See docs/PROTOCOL.md for byte-level examples and the loss
definition external servers must match.
"""

from __future__ import annotations

PROTOCOL_VERSION = 1

# error message codes are pinned so conformance checks can compare bytes
ERR_MALFORMED = "malformed json"
ERR_BAD_REQUEST = "invalid request"
ERR_UNSUPPORTED_TYPE = "unsupported message type"
ERR_BAD_PATTERN = "pattern length mismatch"
ERR_EVAL_FAILED = "evaluation failed"
ERR_UNSUPPORTED_CAPABILITY = "unsupported capability"

CAP_EVAL = "eval"
CAP_TEXT_EVAL = "text-eval"
CAP_EMBED = "embed"


def hello_msg(msg_id: int, *, layer_count: int | None = None,
              capabilities: tuple[str, ...] | None = None) -> dict:
    msg: dict = {"type": "hello", "id": msg_id, "protocol_version": PROTOCOL_VERSION}
    if layer_count is not None:
        msg["layer_count"] = layer_count
    if capabilities is not None:
        msg["capabilities"] = sorted(capabilities)
    return msg


def result_msg(msg_id: int, loss: float) -> dict:
    return {"type": "result", "id": msg_id, "loss": loss}


def embedding_msg(msg_id: int, vectors: list[list[float]]) -> dict:
    return {"type": "embedding", "id": msg_id, "vectors": vectors}


def error_msg(msg_id: int | None, message: str, detail: str | None = None) -> dict:
    msg: dict = {"type": "error", "id": msg_id, "message": message}
    if detail is not None:
        msg["detail"] = detail
    return msg
