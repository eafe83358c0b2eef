"""A tiny deterministic decoder-only language model with per-layer skip support.

Blocks are pre-norm residual units (LN -> causal attention -> residual,
LN -> GELU feed-forward -> residual) over a sinusoidal-position byte-level
embedding. Because every block only *adds* to the residual stream, skipping a
layer is exactly the identity: no attention, no feed-forward, no layer norms
of that block.

Weights are random, not trained. They are drawn in a fixed traversal order
from a seeded generator and quantized to float32 at draw time, then widened
to float64 for compute, so that checkpoint round-trips are bit-exact and the
forward pass is bit-reproducible across runs and thread counts.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, asdict
from pathlib import Path
from typing import Sequence

import numpy as np

from .core import FitnessRecord, PruningPattern, canonical_dumps, make_rng

BOS_ID = 256
EOS_ID = 257
PAD_ID = 258
BYTE_VOCAB_SIZE = 259

_LN_EPS = 1e-5
_EMBED_STD = 1.0
_BLOCK_GAIN = 2.0
_SQRT_2_OVER_PI = 0.7978845608028654

_CHECKPOINT_FORMAT = "toylm-checkpoint"
_LAYER_TENSORS = (
    "ln1_g", "ln1_b", "wq", "bq", "wk", "bk", "wv", "bv", "wo", "bo",
    "ln2_g", "ln2_b", "w1", "b1", "w2", "b2",
)


def encode_text(text: str, *, add_bos: bool = True) -> tuple[int, ...]:
    """Byte-level token ids (0-255), preceded by BOS unless disabled."""
    ids = tuple(text.encode("utf-8"))
    return ((BOS_ID,) + ids) if add_bos else ids


def decode_tokens(token_ids: Sequence[int]) -> str:
    """Best-effort inverse of encode_text; control ids are dropped."""
    return bytes(t for t in token_ids if t < 256).decode("utf-8", errors="replace")


@dataclass(frozen=True)
class ToyLMConfig:
    vocab_size: int = BYTE_VOCAB_SIZE
    d_model: int = 32
    n_heads: int = 4
    n_layers: int = 12
    d_ff: int = 128
    max_seq_len: int = 4096
    weight_seed: int = 0

    def validate(self) -> None:
        if self.d_model % self.n_heads != 0:
            raise ValueError(f"d_model={self.d_model} not divisible by n_heads={self.n_heads}")
        if self.d_model % 2 != 0:
            raise ValueError("d_model must be even for sinusoidal positions")
        if self.n_layers < 2:
            raise ValueError(f"need at least 2 layers, got {self.n_layers}")
        if self.max_seq_len < 8:
            raise ValueError(f"max_seq_len must be >= 8, got {self.max_seq_len}")
        if self.vocab_size < 2 or self.d_ff < 1 or self.n_heads < 1:
            raise ValueError("vocab_size, d_ff and n_heads must be positive")


@dataclass(frozen=True)
class CalibrationSample:
    """A fixed-length run of token ids used to score candidate patterns."""

    token_ids: tuple[int, ...]

    def __len__(self) -> int:
        return len(self.token_ids)


@dataclass(frozen=True)
class LayerWeights:
    ln1_g: np.ndarray
    ln1_b: np.ndarray
    wq: np.ndarray
    bq: np.ndarray
    wk: np.ndarray
    bk: np.ndarray
    wv: np.ndarray
    bv: np.ndarray
    wo: np.ndarray
    bo: np.ndarray
    ln2_g: np.ndarray
    ln2_b: np.ndarray
    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray


@dataclass(frozen=True)
class ToyLM:
    """Immutable after construction; concurrent forward passes are safe."""

    config: ToyLMConfig
    embedding: np.ndarray
    layers: tuple[LayerWeights, ...]
    w_out: np.ndarray
    pos: np.ndarray


def _positional_encoding(max_len: int, d_model: int) -> np.ndarray:
    positions = np.arange(max_len, dtype=np.float64)[:, None]
    freqs = np.exp(-math.log(10000.0) * np.arange(0, d_model, 2, dtype=np.float64) / d_model)
    pe = np.zeros((max_len, d_model), dtype=np.float64)
    pe[:, 0::2] = np.sin(positions * freqs)
    pe[:, 1::2] = np.cos(positions * freqs)
    return pe


def _draw(rng: np.random.Generator, shape: tuple[int, ...], std: float) -> np.ndarray:
    # quantize to float32 at draw time so checkpoints preserve the exact values
    return rng.normal(0.0, std, size=shape).astype(np.float32).astype(np.float64)


def init_model(config: ToyLMConfig) -> ToyLM:
    """Build a model whose weights are fully determined by config.weight_seed."""
    config.validate()
    rng = make_rng(config.weight_seed)
    d, ff, v = config.d_model, config.d_ff, config.vocab_size
    proj_std = _BLOCK_GAIN / math.sqrt(d)
    embedding = _draw(rng, (v, d), _EMBED_STD)
    ones = np.ones(d, dtype=np.float64)
    zeros_d = np.zeros(d, dtype=np.float64)
    layers = []
    for _ in range(config.n_layers):
        layers.append(LayerWeights(
            ln1_g=ones.copy(), ln1_b=zeros_d.copy(),
            wq=_draw(rng, (d, d), proj_std), bq=zeros_d.copy(),
            wk=_draw(rng, (d, d), proj_std), bk=zeros_d.copy(),
            wv=_draw(rng, (d, d), proj_std), bv=zeros_d.copy(),
            wo=_draw(rng, (d, d), proj_std), bo=zeros_d.copy(),
            ln2_g=ones.copy(), ln2_b=zeros_d.copy(),
            w1=_draw(rng, (d, ff), proj_std), b1=np.zeros(ff, dtype=np.float64),
            w2=_draw(rng, (ff, d), _BLOCK_GAIN / math.sqrt(ff)), b2=zeros_d.copy(),
        ))
    w_out = _draw(rng, (d, v), 1.0 / math.sqrt(d))
    return ToyLM(
        config=config,
        embedding=embedding,
        layers=tuple(layers),
        w_out=w_out,
        pos=_positional_encoding(config.max_seq_len, d),
    )


def _layer_norm(x: np.ndarray, gamma: np.ndarray, beta: np.ndarray) -> np.ndarray:
    mu = x.mean(axis=-1, keepdims=True)
    centered = x - mu
    var = (centered * centered).mean(axis=-1, keepdims=True)
    return centered / np.sqrt(var + _LN_EPS) * gamma + beta


def _gelu(x: np.ndarray) -> np.ndarray:
    return 0.5 * x * (1.0 + np.tanh(_SQRT_2_OVER_PI * (x + 0.044715 * x * x * x)))


def _nll_batch(model: ToyLM, pattern: PruningPattern, ids: np.ndarray) -> list[float]:
    """Per-sample mean NLL for a (batch, seq_len) id matrix.

    The batch axis is kept as a pure stacking dimension in every matmul, so
    each sample's result is bit-identical to running it alone.
    """
    cfg = model.config
    n_batch, seq_len = ids.shape
    n_heads = cfg.n_heads
    dh = cfg.d_model // n_heads

    x = model.embedding[ids] + model.pos[:seq_len]
    causal = np.triu(np.full((seq_len, seq_len), -np.inf), 1)
    for bit, lw in zip(pattern.mask, model.layers):
        if bit:
            continue
        h = _layer_norm(x, lw.ln1_g, lw.ln1_b)
        q = (h @ lw.wq + lw.bq).reshape(n_batch, seq_len, n_heads, dh).transpose(0, 2, 1, 3)
        k = (h @ lw.wk + lw.bk).reshape(n_batch, seq_len, n_heads, dh).transpose(0, 2, 1, 3)
        v = (h @ lw.wv + lw.bv).reshape(n_batch, seq_len, n_heads, dh).transpose(0, 2, 1, 3)
        scores = q @ k.transpose(0, 1, 3, 2) / math.sqrt(dh) + causal
        scores -= scores.max(axis=-1, keepdims=True)
        np.exp(scores, out=scores)
        scores /= scores.sum(axis=-1, keepdims=True)
        ctx = (scores @ v).transpose(0, 2, 1, 3).reshape(n_batch, seq_len, cfg.d_model)
        x = x + (ctx @ lw.wo + lw.bo)
        h = _layer_norm(x, lw.ln2_g, lw.ln2_b)
        x = x + _gelu(h @ lw.w1 + lw.b1) @ lw.w2 + lw.b2

    logits = x @ model.w_out
    logits -= logits.max(axis=-1, keepdims=True)
    logp = logits - np.log(np.exp(logits).sum(axis=-1, keepdims=True))
    targets = ids[:, 1:]
    rows = np.arange(seq_len - 1)
    return [
        float(-(logp[b, rows, targets[b]].sum() / (seq_len - 1)))
        for b in range(n_batch)
    ]


def _validate_sample(cfg: ToyLMConfig, sample: CalibrationSample) -> None:
    seq_len = len(sample.token_ids)
    if seq_len < 2:
        raise ValueError(f"sample must have at least 2 tokens, got {seq_len}")
    if seq_len > cfg.max_seq_len:
        raise ValueError(f"sample length {seq_len} exceeds max_seq_len {cfg.max_seq_len}")
    if any(t < 0 or t >= cfg.vocab_size for t in sample.token_ids):
        raise ValueError("sample token id outside vocabulary")


def forward_nll(model: ToyLM, pattern: PruningPattern, sample: CalibrationSample) -> float:
    """Mean next-token negative log-likelihood over positions 1..len-1.

    Layers whose mask bit is 1 are bypassed entirely. Deterministic: the same
    (model, pattern, sample) always yields the same bits.
    """
    if len(pattern) != model.config.n_layers:
        raise ValueError(
            f"pattern length {len(pattern)} != n_layers {model.config.n_layers}"
        )
    _validate_sample(model.config, sample)
    ids = np.asarray(sample.token_ids, dtype=np.int64)[None, :]
    return _nll_batch(model, pattern, ids)[0]


def average_loss(model: ToyLM, pattern: PruningPattern,
                 samples: Sequence[CalibrationSample]) -> FitnessRecord:
    """Arithmetic mean of forward_nll over the samples.

    Equal-length samples share one batched forward pass; per-sample losses are
    summed in sorted order so the result is exactly invariant to any
    permutation of the sample list.
    """
    if not samples:
        raise ValueError("empty sample list")
    if len(pattern) != model.config.n_layers:
        raise ValueError(
            f"pattern length {len(pattern)} != n_layers {model.config.n_layers}"
        )
    losses: list[float] = []
    by_len: dict[int, list[CalibrationSample]] = {}
    for sample in samples:
        _validate_sample(model.config, sample)
        by_len.setdefault(len(sample.token_ids), []).append(sample)
    for _, group in sorted(by_len.items()):
        ids = np.asarray([s.token_ids for s in group], dtype=np.int64)
        losses.extend(_nll_batch(model, pattern, ids))
    losses.sort()
    total = 0.0
    for value in losses:
        total += value
    return FitnessRecord(pattern=pattern, loss=total / len(losses))


def _tensor_items(model: ToyLM) -> list[tuple[str, np.ndarray]]:
    items: list[tuple[str, np.ndarray]] = [("embedding", model.embedding)]
    for i, lw in enumerate(model.layers):
        for name in _LAYER_TENSORS:
            items.append((f"layer{i}.{name}", getattr(lw, name)))
    items.append(("w_out", model.w_out))
    return items


def save_model(model: ToyLM, path: str | Path) -> None:
    """Write a checkpoint: one JSON header line, then little-endian float32 data.

    The header carries the config and the exact tensor order; see
    docs/FORMATS.md. Save -> load -> save reproduces the file byte-for-byte.
    """
    items = _tensor_items(model)
    header = {
        "format": _CHECKPOINT_FORMAT,
        "version": 1,
        "config": asdict(model.config),
        "tensor_order": [name for name, _ in items],
    }
    with open(path, "wb") as f:
        f.write(canonical_dumps(header).encode("utf-8") + b"\n")
        for _, arr in items:
            f.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def _expected_shapes(config: ToyLMConfig) -> dict[str, tuple[int, ...]]:
    d, ff, v = config.d_model, config.d_ff, config.vocab_size
    per_layer = {
        "ln1_g": (d,), "ln1_b": (d,),
        "wq": (d, d), "bq": (d,), "wk": (d, d), "bk": (d,),
        "wv": (d, d), "bv": (d,), "wo": (d, d), "bo": (d,),
        "ln2_g": (d,), "ln2_b": (d,),
        "w1": (d, ff), "b1": (ff,), "w2": (ff, d), "b2": (d,),
    }
    shapes: dict[str, tuple[int, ...]] = {"embedding": (v, d)}
    for i in range(config.n_layers):
        for name, shape in per_layer.items():
            shapes[f"layer{i}.{name}"] = shape
    shapes["w_out"] = (d, v)
    return shapes


def load_model(path: str | Path) -> ToyLM:
    """Read a checkpoint written by save_model; round-trip is bit-exact."""
    raw = Path(path).read_bytes()
    nl = raw.find(b"\n")
    if nl < 0:
        raise ValueError(f"{path}: missing checkpoint header line")
    import json

    header = json.loads(raw[:nl].decode("utf-8"))
    if header.get("format") != _CHECKPOINT_FORMAT or header.get("version") != 1:
        raise ValueError(f"{path}: not a version-1 {_CHECKPOINT_FORMAT} file")
    config = ToyLMConfig(**header["config"])
    config.validate()
    shapes = _expected_shapes(config)
    order = header["tensor_order"]
    if list(shapes.keys()) != list(order):
        raise ValueError(f"{path}: tensor order does not match config")

    data = raw[nl + 1:]
    expected_bytes = sum(int(np.prod(shapes[name])) for name in order) * 4
    if len(data) != expected_bytes:
        raise ValueError(f"{path}: expected {expected_bytes} tensor bytes, found {len(data)}")

    tensors: dict[str, np.ndarray] = {}
    offset = 0
    for name in order:
        count = int(np.prod(shapes[name]))
        arr = np.frombuffer(data, dtype="<f4", count=count, offset=offset)
        tensors[name] = arr.astype(np.float64).reshape(shapes[name])
        offset += count * 4

    layers = tuple(
        LayerWeights(**{t: tensors[f"layer{i}.{t}"] for t in _LAYER_TENSORS})
        for i in range(config.n_layers)
    )
    return ToyLM(
        config=config,
        embedding=tensors["embedding"],
        layers=layers,
        w_out=tensors["w_out"],
        pos=_positional_encoding(config.max_seq_len, config.d_model),
    )


def models_equal(a: ToyLM, b: ToyLM) -> bool:
    if a.config != b.config:
        return False
    for (name_a, arr_a), (name_b, arr_b) in zip(_tensor_items(a), _tensor_items(b)):
        if name_a != name_b or not np.array_equal(arr_a, arr_b):
            return False
    return True
