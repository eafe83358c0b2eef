"""Domain types and sparsity arithmetic shared by every search strategy."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Iterable

import numpy as np


class DegenerateSparsity(ValueError):
    """The requested sparsity does not leave at least one pruned and one kept layer."""


class BudgetExceeded(RuntimeError):
    """An exhaustive enumeration would exceed its evaluation budget."""


class EvaluationError(RuntimeError):
    """A fitness evaluation failed; carries the offending pattern when known."""

    def __init__(self, message: str, pattern: "PruningPattern | None" = None):
        super().__init__(message)
        self.pattern = pattern


def canonical_dumps(obj) -> str:
    """Canonical JSON used for every on-disk artifact: sorted keys, no whitespace.

    Identical objects always produce identical bytes, so artifact files can be
    compared byte-for-byte. Non-finite floats are rejected rather than written.
    """
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=False)


def make_rng(seed: int, *stream: int) -> np.random.Generator:
    """Generator for an independent, reproducible stream named (seed, *stream).

    Streams with different names never collide, so callers can pre-split
    randomness per task (per sample, per generation, per offspring) and get
    results that do not depend on scheduling or worker count. The entropy list
    is length-tagged and shifted to be zero-free because SeedSequence treats
    trailing zero words as absent.
    """
    entropy = [int(seed), *(int(s) + 1 for s in stream), len(stream) + 1]
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(entropy)))


def pattern_space_size(m: int, k: int) -> int:
    """Exact count of masks over m layers with exactly k ones (arbitrary precision)."""
    if m < 0 or k < 0 or k > m:
        raise ValueError(f"no pattern space for m={m}, k={k}")
    return math.comb(m, k)


def derive_pruned_count(theta: float, m: int) -> int:
    """Round theta*m half-up to a layer count, rejecting all-kept/all-pruned results."""
    if m < 2:
        raise DegenerateSparsity(f"need at least 2 layers, got m={m}")
    if not 0.0 < theta < 1.0:
        raise DegenerateSparsity(f"sparsity must lie in (0, 1), got {theta}")
    k = math.floor(theta * m + 0.5)
    if not 1 <= k <= m - 1:
        raise DegenerateSparsity(
            f"theta={theta} over {m} layers rounds to k={k}, outside [1, {m - 1}]"
        )
    return k


@dataclass(frozen=True, order=True)
class PruningPattern:
    """Immutable 0/1 mask over decoder layers; a 1 bit prunes that layer.

    Ordering compares masks lexicographically, which is the tie-break order
    used by the searches.
    """

    mask: tuple[int, ...]

    def __post_init__(self):
        if not self.mask:
            raise ValueError("empty mask")
        if any(b not in (0, 1) for b in self.mask):
            raise ValueError("mask bits must be 0 or 1")

    @classmethod
    def zeros(cls, m: int) -> "PruningPattern":
        return cls((0,) * m)

    @classmethod
    def ones(cls, m: int) -> "PruningPattern":
        return cls((1,) * m)

    @classmethod
    def from_pruned_indices(cls, m: int, indices: Iterable[int]) -> "PruningPattern":
        mask = [0] * m
        for i in indices:
            mask[int(i)] = 1
        return cls(tuple(mask))

    def __len__(self) -> int:
        return len(self.mask)

    @property
    def popcount(self) -> int:
        return sum(self.mask)

    def pruned_indices(self) -> tuple[int, ...]:
        return tuple(i for i, b in enumerate(self.mask) if b)

    def to_string(self) -> str:
        return "".join(str(b) for b in self.mask)


@dataclass(frozen=True)
class SparsityConfig:
    """Sparsity target: fraction theta over m layers, resolved to an exact count k.

    The pruned-layer budget is enforced as an equality: every emitted pattern
    prunes exactly k layers.
    """

    theta: float
    m: int
    k: int

    def __post_init__(self):
        if self.m < 2:
            raise DegenerateSparsity(f"need at least 2 layers, got m={self.m}")
        if not 1 <= self.k <= self.m - 1:
            raise DegenerateSparsity(f"k={self.k} outside [1, {self.m - 1}]")

    @classmethod
    def from_theta(cls, theta: float, m: int) -> "SparsityConfig":
        return cls(theta=float(theta), m=int(m), k=derive_pruned_count(theta, m))

    def check_pattern(self, pattern: PruningPattern) -> None:
        if len(pattern) != self.m:
            raise ValueError(f"pattern length {len(pattern)} != layer count {self.m}")
        if pattern.popcount != self.k:
            raise ValueError(f"pattern popcount {pattern.popcount} != k={self.k}")


@dataclass(frozen=True)
class FitnessRecord:
    """A pattern paired with its calibration loss (mean per-token NLL, natural log)."""

    pattern: PruningPattern
    loss: float

    def __post_init__(self):
        if not math.isfinite(self.loss) or self.loss < 0.0:
            raise ValueError(f"loss must be finite and nonnegative, got {self.loss}")

    @property
    def perplexity(self) -> float:
        return math.exp(self.loss)

    def sort_key(self) -> tuple[float, tuple[int, ...]]:
        return (self.loss, self.pattern.mask)


@dataclass
class SearchReport:
    """Outcome and per-step trace of one search run.

    Wall-clock time is kept on the object for console output and sweep rows
    but deliberately stays out of to_json_dict(): the serialized artifact must
    be a pure function of configuration and seeds.
    """

    method: str
    config: dict
    seed: int | None
    layer_count: int
    pruned_count: int
    best: FitnessRecord
    trace: list[dict]
    oracle_evals: int
    wall_ms: float

    def to_json_dict(self, extra_config: dict | None = None) -> dict:
        config = dict(self.config)
        if extra_config:
            config.update(extra_config)
        best = {
            "loss": self.best.loss,
            "mask": list(self.best.pattern.mask),
        }
        if self.best.loss < 700.0:  # exp() overflow guard; unreachable for real losses
            best["perplexity"] = self.best.perplexity
        return {
            "schema_version": 1,
            "kind": "search_report",
            "method": self.method,
            "config": config,
            "seed": self.seed,
            "layer_count": self.layer_count,
            "pruned_count": self.pruned_count,
            "best": best,
            "trace": self.trace,
            "oracle_evals": self.oracle_evals,
        }
