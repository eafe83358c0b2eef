"""Protocol conformance corpus: scripted request/response checks for servers.

Responses must be canonical JSON (sorted keys, compact separators) and match
the expected template byte-for-byte once volatile fields (losses, vectors,
capability lists) are masked. The same corpus validates the bundled toy
server and any external implementation.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

from .core import canonical_dumps
from .protocol import (
    CAP_EMBED,
    CAP_EVAL,
    ERR_BAD_PATTERN,
    ERR_MALFORMED,
    ERR_UNSUPPORTED_TYPE,
    PROTOCOL_VERSION,
)

NUM = "<NUM>"
INT = "<INT>"
CAPS = "<CAPS>"
VECTORS = "<VECTORS>"


@dataclass
class CaseResult:
    name: str
    ok: bool
    detail: str = ""


def _match(template, value, path: str = "$") -> str | None:
    """None when value satisfies template; otherwise a mismatch description."""
    if template == NUM:
        if isinstance(value, (int, float)) and not isinstance(value, bool) and math.isfinite(value):
            return None
        return f"{path}: expected a finite number, got {value!r}"
    if template == INT:
        if isinstance(value, int) and not isinstance(value, bool):
            return None
        return f"{path}: expected an integer, got {value!r}"
    if template == CAPS:
        if (isinstance(value, list) and all(isinstance(c, str) for c in value)
                and CAP_EVAL in value and value == sorted(value)):
            return None
        return f"{path}: expected a sorted capability list containing 'eval', got {value!r}"
    if template == VECTORS:
        if (isinstance(value, list) and value
                and all(isinstance(v, list) and v for v in value)
                and len({len(v) for v in value}) == 1
                and all(isinstance(x, (int, float)) and math.isfinite(x) for v in value for x in v)):
            return None
        return f"{path}: expected equal-length finite vectors"
    if isinstance(template, dict):
        if not isinstance(value, dict):
            return f"{path}: expected an object"
        if set(template) != set(value):
            return f"{path}: keys {sorted(value)} != expected {sorted(template)}"
        for key, sub in template.items():
            err = _match(sub, value[key], f"{path}.{key}")
            if err:
                return err
        return None
    if isinstance(template, list):
        if not isinstance(value, list) or len(value) != len(template):
            return f"{path}: expected a list of length {len(template)}"
        for i, sub in enumerate(template):
            err = _match(sub, value[i], f"{path}[{i}]")
            if err:
                return err
        return None
    if template != value:
        return f"{path}: expected {template!r}, got {value!r}"
    return None


def _check_line(line: str, template: dict, *, ignore_detail: bool = False) -> tuple[dict | None, str]:
    line = line.rstrip("\n")
    try:
        msg = json.loads(line)
    except json.JSONDecodeError:
        return None, f"response is not JSON: {line[:120]!r}"
    if not isinstance(msg, dict):
        return None, "response is not a JSON object"
    if canonical_dumps(msg) != line:
        return None, f"response is not canonical JSON: {line[:120]!r}"
    checked = dict(msg)
    if ignore_detail:
        checked.pop("detail", None)
    err = _match(template, checked)
    if err:
        return None, err
    return msg, ""


def run_conformance(transport, *, timeout: float = 30.0) -> list[CaseResult]:
    """Drive the corpus over an open line transport; returns one result per case."""
    results: list[CaseResult] = []

    def send(obj) -> None:
        transport.send_line(obj if isinstance(obj, str) else canonical_dumps(obj))

    def recv() -> str:
        return transport.recv_line(timeout)

    def run_case(name: str, fn) -> bool:
        try:
            detail = fn()
        except Exception as e:
            results.append(CaseResult(name, False, f"{type(e).__name__}: {e}"))
            return False
        results.append(CaseResult(name, detail == "", detail))
        return detail == ""

    state: dict = {}

    def case_hello() -> str:
        send({"type": "hello", "id": 0, "protocol_version": PROTOCOL_VERSION})
        msg, err = _check_line(recv(), {
            "type": "hello", "id": 0, "protocol_version": PROTOCOL_VERSION,
            "layer_count": INT, "capabilities": CAPS,
        })
        if err:
            return err
        if msg["layer_count"] < 1:
            return f"layer_count must be positive, got {msg['layer_count']}"
        state["m"] = msg["layer_count"]
        state["caps"] = msg["capabilities"]
        return ""

    if not run_case("handshake", case_hello):
        return results
    m = state["m"]
    sample = [1, 2, 3, 4, 5, 6, 7, 8]

    def case_eval() -> str:
        send({"type": "eval", "id": 1, "pattern": [0] * m, "samples": [sample]})
        msg, err = _check_line(recv(), {"type": "result", "id": 1, "loss": NUM})
        if err:
            return err
        if msg["loss"] < 0:
            return f"loss must be nonnegative, got {msg['loss']}"
        return ""

    run_case("eval-dense", case_eval)

    def case_bad_pattern() -> str:
        send({"type": "eval", "id": 2, "pattern": [0] * (m + 1), "samples": [sample]})
        _, err = _check_line(
            recv(), {"type": "error", "id": 2, "message": ERR_BAD_PATTERN},
            ignore_detail=True,
        )
        return err

    run_case("eval-bad-pattern", case_bad_pattern)

    def case_malformed() -> str:
        send("this is not json {")
        _, err = _check_line(
            recv(), {"type": "error", "id": None, "message": ERR_MALFORMED},
            ignore_detail=True,
        )
        return err

    run_case("malformed-json", case_malformed)

    def case_unknown_type() -> str:
        send({"type": "frobnicate", "id": 4})
        _, err = _check_line(
            recv(), {"type": "error", "id": 4, "message": ERR_UNSUPPORTED_TYPE},
            ignore_detail=True,
        )
        return err

    run_case("unknown-type", case_unknown_type)

    def case_pipelined() -> str:
        masks = {5: [0] * m, 6: [1] + [0] * (m - 1), 7: [0] * (m - 1) + [1]}
        for rid, mask in masks.items():
            send({"type": "eval", "id": rid, "pattern": mask, "samples": [sample]})
        seen = {}
        for _ in range(3):
            msg, err = _check_line(recv(), {"type": "result", "id": INT, "loss": NUM})
            if err:
                return err
            if msg["id"] not in masks or msg["id"] in seen:
                return f"unexpected or duplicate response id {msg['id']}"
            seen[msg["id"]] = msg["loss"]
        return ""

    run_case("pipelined-ids", case_pipelined)

    if CAP_EMBED in state["caps"]:
        def case_embed() -> str:
            send({"type": "embed", "id": 8, "texts": ["alpha beta.", "gamma delta."]})
            msg, err = _check_line(recv(), {"type": "embedding", "id": 8, "vectors": VECTORS})
            if err:
                return err
            if len(msg["vectors"]) != 2:
                return f"expected 2 vectors, got {len(msg['vectors'])}"
            return ""

        run_case("embed", case_embed)

    return results
