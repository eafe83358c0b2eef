"""A torch transformer host with per-request layer bypass.

Every decoder block is wrapped in a pass-through guard; an eval request sets
the guards named by the mask, runs the forward pass, and always restores them,
so the dense model is recoverable after any request sequence. Bypassing is
O(1) per pattern and numerically identical to physically deleting the blocks.
"""

from __future__ import annotations

from typing import Sequence

import torch
from torch import nn

BOS_ID = 256
EOS_ID = 257
PAD_ID = 258
BYTE_VOCAB_SIZE = 259


class BlockGuard(nn.Module):
    """Wraps one decoder block; forwards or passes hidden states through."""

    def __init__(self, inner: nn.Module):
        super().__init__()
        self.inner = inner
        self.bypass = False

    def forward(self, hidden_states, *args, **kwargs):
        if self.bypass:
            return hidden_states
        return self.inner(hidden_states, *args, **kwargs)


def _find_decoder_layers(model: nn.Module) -> tuple[nn.Module, str]:
    """Locate the ModuleList of decoder blocks and its owning attribute."""
    if hasattr(model, "transformer") and hasattr(model.transformer, "h"):
        return model.transformer, "h"
    if hasattr(model, "model") and hasattr(model.model, "layers"):
        return model.model, "layers"
    if hasattr(model, "gpt_neox") and hasattr(model.gpt_neox, "layers"):
        return model.gpt_neox, "layers"
    raise ValueError("unsupported model structure: cannot find decoder layers")


def byte_encode(text: str) -> list[int]:
    """Reference byte-level tokenizer: BOS then UTF-8 bytes (ids 0-255)."""
    return [BOS_ID] + list(text.encode("utf-8"))


class LayerDropHost:
    """Owns a causal LM plus guards; answers loss and embedding queries."""

    def __init__(self, model: nn.Module, tokenizer=None, max_positions: int | None = None):
        model.eval()
        self._model = model
        self._tokenizer = tokenizer
        parent, attr = _find_decoder_layers(model)
        blocks = getattr(parent, attr)
        self._guards = [BlockGuard(block) for block in blocks]
        setattr(parent, attr, nn.ModuleList(self._guards))
        self._vocab_size = int(model.config.vocab_size)
        self._max_positions = max_positions or int(
            getattr(model.config, "n_positions", 0)
            or getattr(model.config, "max_position_embeddings", 0)
            or 2048
        )

    @classmethod
    def tiny(cls, *, seed: int = 0, layers: int = 4, d_model: int = 32, heads: int = 4,
             vocab_size: int = BYTE_VOCAB_SIZE, max_positions: int = 512) -> "LayerDropHost":
        """Randomly initialized small GPT2-style decoder; no downloads needed."""
        from transformers import GPT2Config, GPT2LMHeadModel

        torch.manual_seed(seed)
        config = GPT2Config(
            vocab_size=vocab_size,
            n_positions=max_positions,
            n_embd=d_model,
            n_layer=layers,
            n_head=heads,
            use_cache=False,
            bos_token_id=BOS_ID if vocab_size > BOS_ID else 0,
            eos_token_id=EOS_ID if vocab_size > EOS_ID else 0,
        )
        return cls(GPT2LMHeadModel(config), tokenizer=None, max_positions=max_positions)

    @classmethod
    def from_pretrained(cls, model_id: str) -> "LayerDropHost":
        """Opt-in: load a real checkpoint (and its tokenizer) by id."""
        from transformers import AutoModelForCausalLM, AutoTokenizer

        model = AutoModelForCausalLM.from_pretrained(model_id)
        tokenizer = AutoTokenizer.from_pretrained(model_id)
        return cls(model, tokenizer=tokenizer)

    @property
    def layer_count(self) -> int:
        return len(self._guards)

    @property
    def vocab_size(self) -> int:
        return self._vocab_size

    def encode(self, text: str) -> list[int]:
        if self._tokenizer is not None:
            return list(self._tokenizer(text)["input_ids"])
        return byte_encode(text)

    def _validate_sample(self, ids: Sequence[int]) -> None:
        if len(ids) < 2:
            raise ValueError(f"sample must have at least 2 tokens, got {len(ids)}")
        if len(ids) > self._max_positions:
            raise ValueError(f"sample length {len(ids)} exceeds {self._max_positions} positions")
        if any(t < 0 or t >= self._vocab_size for t in ids):
            raise ValueError("sample token id outside vocabulary")

    def _apply_pattern(self, pattern: Sequence[int]) -> None:
        for guard, bit in zip(self._guards, pattern):
            guard.bypass = bool(bit)

    def _clear_pattern(self) -> None:
        for guard in self._guards:
            guard.bypass = False

    def _sample_nll(self, ids: Sequence[int]) -> float:
        input_ids = torch.tensor([list(ids)], dtype=torch.long)
        with torch.no_grad():
            logits = self._model(input_ids, use_cache=False).logits[0].double()
        logp = torch.log_softmax(logits, dim=-1)
        targets = input_ids[0, 1:]
        picked = logp[:-1].gather(1, targets[:, None])[:, 0]
        return float(-picked.mean())

    def eval_loss(self, pattern: Sequence[int], samples: Sequence[Sequence[int]]) -> float:
        """Mean over samples of per-sample mean next-token NLL (natural log)."""
        if len(pattern) != self.layer_count:
            raise ValueError(f"pattern length {len(pattern)} != {self.layer_count} layers")
        if not samples:
            raise ValueError("empty sample list")
        for ids in samples:
            self._validate_sample(ids)
        self._apply_pattern(pattern)
        try:
            losses = [self._sample_nll(ids) for ids in samples]
        finally:
            self._clear_pattern()
        return sum(losses) / len(losses)

    def eval_texts(self, pattern: Sequence[int], texts: Sequence[str]) -> float:
        return self.eval_loss(pattern, [self.encode(t) for t in texts])

    def embed(self, texts: Sequence[str]) -> list[list[float]]:
        """Mean-pooled last-hidden-state vector per text (dense model)."""
        self._clear_pattern()
        vectors = []
        for text in texts:
            ids = self.encode(text)
            if not ids:
                ids = [BOS_ID if self._vocab_size > BOS_ID else 0]
            if len(ids) > self._max_positions:
                raise ValueError(f"text tokenizes to {len(ids)} ids, exceeding {self._max_positions}")
            if any(t < 0 or t >= self._vocab_size for t in ids):
                raise ValueError("text tokenizes outside the vocabulary")
            input_ids = torch.tensor([ids], dtype=torch.long)
            with torch.no_grad():
                out = self._model(input_ids, use_cache=False, output_hidden_states=True)
            pooled = out.hidden_states[-1][0].mean(dim=0)
            vectors.append([float(x) for x in pooled])
        return vectors
