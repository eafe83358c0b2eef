from __future__ import annotations

import copy

import pytest
import torch
from torch import nn
from transformers import GPT2Config, GPT2LMHeadModel

from py_oracle.model import BOS_ID, BYTE_VOCAB_SIZE, LayerDropHost, byte_encode

SAMPLE = byte_encode("a calibration sample for the layer-drop host")
SAMPLES = [SAMPLE, byte_encode("and a second, different one?")]


@pytest.fixture(scope="module")
def host() -> LayerDropHost:
    return LayerDropHost.tiny(seed=0, layers=4, d_model=32, heads=4)


def fresh_raw_model(seed: int = 0, layers: int = 4) -> GPT2LMHeadModel:
    torch.manual_seed(seed)
    config = GPT2Config(
        vocab_size=BYTE_VOCAB_SIZE, n_positions=512, n_embd=32, n_layer=layers,
        n_head=4, use_cache=False, bos_token_id=BOS_ID, eos_token_id=BOS_ID + 1,
    )
    return GPT2LMHeadModel(config).eval()


def raw_model_nll(model: GPT2LMHeadModel, samples) -> float:
    losses = []
    for ids in samples:
        input_ids = torch.tensor([ids], dtype=torch.long)
        with torch.no_grad():
            logits = model(input_ids, use_cache=False).logits[0].double()
        logp = torch.log_softmax(logits, dim=-1)
        targets = input_ids[0, 1:]
        losses.append(float(-logp[:-1].gather(1, targets[:, None]).mean()))
    return sum(losses) / len(losses)


def physically_deleted(model: GPT2LMHeadModel, dropped: set[int]) -> GPT2LMHeadModel:
    surgery = copy.deepcopy(model)
    surgery.transformer.h = nn.ModuleList(
        [block for i, block in enumerate(surgery.transformer.h) if i not in dropped]
    )
    return surgery


class TestNoopSurgery:
    def test_all_zeros_equals_unguarded_dense(self, host):
        dense = raw_model_nll(fresh_raw_model(), SAMPLES)
        guarded = host.eval_loss([0, 0, 0, 0], SAMPLES)
        assert guarded == pytest.approx(dense, abs=1e-6)

    def test_bypass_fully_reversible(self, host):
        dense_before = host.eval_loss([0, 0, 0, 0], SAMPLES)
        for mask in ([1, 0, 0, 0], [0, 1, 0, 1], [1, 1, 1, 1], [0, 0, 1, 0]):
            host.eval_loss(mask, SAMPLES)
        dense_after = host.eval_loss([0, 0, 0, 0], SAMPLES)
        assert dense_after == dense_before

    def test_guards_cleared_even_on_error(self, host):
        with pytest.raises(ValueError):
            host.eval_loss([1, 1, 1, 1], [[5]])  # too short to score
        assert host.eval_loss([0, 0, 0, 0], SAMPLES) == pytest.approx(
            raw_model_nll(fresh_raw_model(), SAMPLES), abs=1e-6
        )


class TestSurgeryCrossCheck:
    @pytest.mark.parametrize("dropped", [{0}, {3}, {1, 2}, {0, 1, 3}])
    def test_bypass_matches_physical_deletion(self, host, dropped):
        mask = [1 if i in dropped else 0 for i in range(4)]
        bypass_loss = host.eval_loss(mask, SAMPLES)
        deleted_loss = raw_model_nll(physically_deleted(fresh_raw_model(), dropped), SAMPLES)
        assert bypass_loss == pytest.approx(deleted_loss, abs=1e-5)

    def test_all_layers_skipped(self, host):
        bypass_loss = host.eval_loss([1, 1, 1, 1], SAMPLES)
        deleted_loss = raw_model_nll(physically_deleted(fresh_raw_model(), {0, 1, 2, 3}), SAMPLES)
        assert bypass_loss == pytest.approx(deleted_loss, abs=1e-5)


class TestHostBasics:
    def test_layer_count(self, host):
        assert host.layer_count == 4

    def test_same_seed_same_loss(self):
        a = LayerDropHost.tiny(seed=7, layers=3, d_model=32, heads=4)
        b = LayerDropHost.tiny(seed=7, layers=3, d_model=32, heads=4)
        assert a.eval_loss([0, 1, 0], SAMPLES) == b.eval_loss([0, 1, 0], SAMPLES)

    def test_loss_finite_nonnegative(self, host):
        for mask in ([0, 0, 0, 0], [1, 0, 1, 0], [1, 1, 1, 1]):
            loss = host.eval_loss(mask, SAMPLES)
            assert loss >= 0.0 and loss == loss

    def test_pattern_length_enforced(self, host):
        with pytest.raises(ValueError):
            host.eval_loss([0, 0, 0], SAMPLES)

    def test_vocabulary_enforced(self, host):
        with pytest.raises(ValueError):
            host.eval_loss([0, 0, 0, 0], [[1, 2, BYTE_VOCAB_SIZE]])

    def test_text_eval_uses_byte_tokenizer(self, host):
        text = "text and tokens must agree"
        by_text = host.eval_texts([0, 0, 1, 0], [text])
        by_tokens = host.eval_loss([0, 0, 1, 0], [byte_encode(text)])
        assert by_text == by_tokens

    def test_embed_shapes(self, host):
        vectors = host.embed(["first text", "second text, longer than the first"])
        assert len(vectors) == 2
        assert len(vectors[0]) == len(vectors[1]) == 32
        assert all(x == x for vec in vectors for x in vec)

    def test_byte_encode(self):
        assert byte_encode("ab") == [BOS_ID, 97, 98]
