"""Cluster-stratified calibration sampling: chunk, embed, cluster, sample.

The pipeline is a pure function of (corpus bytes, config, seed): sentences are
grouped into fixed-size chunks, each chunk is embedded, chunks are clustered
with seeded k-means, and each cluster contributes the same number of
fixed-length token samples drawn from its own chunks only.
"""

from __future__ import annotations

import math
import re
from collections import Counter
from dataclasses import dataclass, asdict
from pathlib import Path
from typing import Callable, Protocol, Sequence

import numpy as np

from .clustering import ClusterAssignment, kmeans
from .core import canonical_dumps, make_rng
from .toylm import CalibrationSample, encode_text

_SENTENCE_SPLIT = re.compile(r"(?<=[.!?])\s+")
_PARAGRAPH_SPLIT = re.compile(r"\n\s*\n")

_FNV_OFFSET64 = 0xCBF29CE484222325
_FNV_PRIME64 = 0x100000001B3
_MASK64 = 0xFFFFFFFFFFFFFFFF


class EmptyCorpus(ValueError):
    """The corpus contains no sentences."""


class CalibrationError(RuntimeError):
    """Sampling could not produce the requested dataset."""


@dataclass(frozen=True)
class Chunk:
    text: str
    ordinal: int
    sentence_count: int


@dataclass(frozen=True)
class EmbeddedChunk:
    chunk: Chunk
    vector: np.ndarray


@dataclass(frozen=True)
class DatasetConfig:
    k_clusters: int = 5
    per_cluster: int = 1
    sample_len: int = 2048
    sentences_per_chunk: int = 5
    embed_dim: int = 256
    kmeans_iters: int = 100
    seed: int = 0

    def validate(self) -> None:
        if self.k_clusters < 1 or self.per_cluster < 1:
            raise ValueError("k_clusters and per_cluster must be positive")
        if self.sample_len < 2:
            raise ValueError("sample_len must be at least 2 tokens")
        if self.sentences_per_chunk < 1 or self.embed_dim < 1 or self.kmeans_iters < 1:
            raise ValueError("sentences_per_chunk, embed_dim, kmeans_iters must be positive")


@dataclass(frozen=True)
class CalibrationDataset:
    """k_clusters groups of per_cluster samples, each exactly sample_len tokens."""

    groups: tuple[tuple[CalibrationSample, ...], ...]
    provenance: dict

    @property
    def k_clusters(self) -> int:
        return len(self.groups)

    @property
    def per_cluster(self) -> int:
        return len(self.groups[0]) if self.groups else 0

    @property
    def sample_len(self) -> int:
        return len(self.groups[0][0]) if self.groups and self.groups[0] else 0

    def all_samples(self) -> list[CalibrationSample]:
        """Samples flattened in (cluster, sample) order; fitness averages over these."""
        return [s for group in self.groups for s in group]

    @classmethod
    def from_samples(cls, samples: Sequence[CalibrationSample],
                     provenance: dict | None = None) -> "CalibrationDataset":
        """Wrap pre-built samples as a single-group dataset."""
        return cls(groups=(tuple(samples),), provenance=provenance or {})


def split_sentences(text: str) -> list[str]:
    """Split on '.', '?', '!' followed by whitespace, and on blank lines.

    A paragraph without terminators counts as a single sentence.
    """
    sentences: list[str] = []
    for paragraph in _PARAGRAPH_SPLIT.split(text):
        paragraph = paragraph.strip()
        if not paragraph:
            continue
        for candidate in _SENTENCE_SPLIT.split(paragraph):
            candidate = candidate.strip()
            if candidate:
                sentences.append(candidate)
    return sentences


def chunk_corpus(text: str, sentences_per_chunk: int) -> list[Chunk]:
    """Group sentences in order into chunks; the final chunk may be short."""
    if sentences_per_chunk < 1:
        raise ValueError("sentences_per_chunk must be positive")
    sentences = split_sentences(text)
    if not sentences:
        raise EmptyCorpus("corpus contains no sentences")
    chunks = []
    for start in range(0, len(sentences), sentences_per_chunk):
        group = sentences[start:start + sentences_per_chunk]
        chunks.append(Chunk(
            text=" ".join(group),
            ordinal=len(chunks),
            sentence_count=len(group),
        ))
    return chunks


class Embedder(Protocol):
    name: str

    def embed(self, texts: Sequence[str]) -> list[np.ndarray]:
        ...


def _fnv1a64(data: bytes) -> int:
    h = _FNV_OFFSET64
    for b in data:
        h ^= b
        h = (h * _FNV_PRIME64) & _MASK64
    return h


class HashedNgramEmbedder:
    """Deterministic text embedder: tf-idf over hashed character trigrams.

    Document frequencies are computed over the batch passed to embed(), so the
    whole chunk set must be embedded in one call. Vectors are L2-normalized.
    No downloads, no floats drawn from an RNG: the same texts always produce
    the same vectors.
    """

    def __init__(self, dim: int = 256, ngram: int = 3):
        if dim < 1 or ngram < 1:
            raise ValueError("dim and ngram must be positive")
        self.dim = dim
        self.ngram = ngram
        self.name = f"hashed-{ngram}gram-tfidf-v1-d{dim}"

    def _grams(self, text: str) -> list[str]:
        squashed = " ".join(text.split()).lower()
        padded = f" {squashed} "
        n = self.ngram
        return [padded[i:i + n] for i in range(max(0, len(padded) - n + 1))]

    def embed(self, texts: Sequence[str]) -> list[np.ndarray]:
        grams_per_text = [self._grams(t) for t in texts]
        doc_freq: Counter[str] = Counter()
        for grams in grams_per_text:
            doc_freq.update(set(grams))
        n_docs = len(texts)
        idf = {g: math.log((1 + n_docs) / (1 + df)) + 1.0 for g, df in doc_freq.items()}
        vectors = []
        for grams in grams_per_text:
            vec = np.zeros(self.dim, dtype=np.float64)
            for gram, count in Counter(grams).items():
                h = _fnv1a64(gram.encode("utf-8"))
                sign = 1.0 if (h >> 63) & 1 == 0 else -1.0
                vec[h % self.dim] += sign * count * idf[gram]
            norm = math.sqrt(float(vec @ vec))
            if norm > 0.0:
                vec /= norm
            vectors.append(vec)
        return vectors


class RemoteEmbedder:
    """Adapter exposing an oracle's embed capability as an Embedder."""

    def __init__(self, oracle, name: str = "remote"):
        self._oracle = oracle
        self.name = name

    def embed(self, texts: Sequence[str]) -> list[np.ndarray]:
        return [np.asarray(v, dtype=np.float64) for v in self._oracle.embed(texts)]


def embed_chunks(chunks: Sequence[Chunk], embedder: Embedder) -> list[EmbeddedChunk]:
    """One vector per chunk; dimensions must agree and components be finite."""
    if not chunks:
        raise ValueError("no chunks to embed")
    try:
        vectors = embedder.embed([c.text for c in chunks])
    except Exception as e:
        raise CalibrationError(
            f"embedder failed on chunks 0..{len(chunks) - 1}: {e}"
        ) from e
    if len(vectors) != len(chunks):
        raise CalibrationError(f"embedder returned {len(vectors)} vectors for {len(chunks)} chunks")
    dim = len(vectors[0])
    out = []
    for chunk, vec in zip(chunks, vectors):
        arr = np.asarray(vec, dtype=np.float64)
        if arr.shape != (dim,):
            raise CalibrationError(f"chunk {chunk.ordinal}: embedding dimension {arr.shape} != ({dim},)")
        if not np.isfinite(arr).all():
            raise CalibrationError(f"chunk {chunk.ordinal}: non-finite embedding component")
        out.append(EmbeddedChunk(chunk=chunk, vector=arr))
    return out


Tokenizer = Callable[[str], Sequence[int]]


def sample_calibration(
    assignment: ClusterAssignment,
    chunks: Sequence[Chunk],
    n: int,
    sample_len: int,
    tokenizer: Tokenizer = encode_text,
    seed: int = 0,
) -> CalibrationDataset:
    """Draw n samples of exactly sample_len tokens from each cluster.

    Each sample appends uniformly-random chunks (with replacement, from that
    cluster only) until it reaches sample_len tokens, then truncates. The RNG
    stream is derived per (cluster, sample), so the output does not depend on
    iteration order.
    """
    if n < 1 or sample_len < 2:
        raise ValueError("need n >= 1 samples of at least 2 tokens")
    token_cache: dict[int, tuple[int, ...]] = {}

    def tokens_of(ordinal: int) -> tuple[int, ...]:
        if ordinal not in token_cache:
            token_cache[ordinal] = tuple(tokenizer(chunks[ordinal].text))
        return token_cache[ordinal]

    groups: list[tuple[CalibrationSample, ...]] = []
    sources: list[list[list[int]]] = []
    for cluster_id in range(assignment.k_clusters):
        members = assignment.members(cluster_id)
        if not members:
            raise CalibrationError(f"cluster {cluster_id} is empty")
        if all(len(tokens_of(o)) == 0 for o in members):
            raise CalibrationError(f"cluster {cluster_id} has zero total token mass")
        cluster_samples = []
        cluster_sources = []
        for sample_idx in range(n):
            rng = make_rng(seed, 0, cluster_id, sample_idx)
            buf: list[int] = []
            picked: list[int] = []
            while len(buf) < sample_len:
                ordinal = members[int(rng.integers(len(members)))]
                stream = tokens_of(ordinal)
                if not stream:
                    continue
                buf.extend(stream)
                picked.append(ordinal)
            cluster_samples.append(CalibrationSample(tuple(buf[:sample_len])))
            cluster_sources.append(picked)
        groups.append(tuple(cluster_samples))
        sources.append(cluster_sources)

    return CalibrationDataset(
        groups=tuple(groups),
        provenance={"sample_sources": sources, "seed": seed, "sample_len": sample_len},
    )


def build_dataset(
    text: str,
    config: DatasetConfig,
    *,
    embedder: Embedder | None = None,
    corpus_id: dict | None = None,
) -> CalibrationDataset:
    """Run the full pipeline and attach provenance for reproducibility."""
    config.validate()
    chunks = chunk_corpus(text, config.sentences_per_chunk)
    if len(chunks) < config.k_clusters:
        raise CalibrationError(
            f"corpus yields {len(chunks)} chunks, fewer than {config.k_clusters} clusters"
        )
    embedder = embedder or HashedNgramEmbedder(config.embed_dim)
    embedded = embed_chunks(chunks, embedder)
    points = np.stack([e.vector for e in embedded])
    assignment = kmeans(points, config.k_clusters, seed=config.seed, max_iters=config.kmeans_iters)
    dataset = sample_calibration(
        assignment, chunks, config.per_cluster, config.sample_len, seed=config.seed
    )
    provenance = {
        "config": asdict(config),
        "corpus": corpus_id or {},
        "embedder": embedder.name,
        "chunk_count": len(chunks),
        "cluster_sizes": [len(assignment.members(c)) for c in range(config.k_clusters)],
        "kmeans": {"iterations": assignment.iterations, "repairs": assignment.repairs},
        "sample_sources": dataset.provenance["sample_sources"],
    }
    return CalibrationDataset(groups=dataset.groups, provenance=provenance)


def save_dataset(dataset: CalibrationDataset, path: str | Path) -> None:
    """Write the versioned dataset JSON; reruns with equal inputs are byte-identical."""
    payload = {
        "schema_version": 1,
        "kind": "calibration_dataset",
        "provenance": dataset.provenance,
        "groups": [[list(s.token_ids) for s in group] for group in dataset.groups],
    }
    Path(path).write_bytes(canonical_dumps(payload).encode("utf-8") + b"\n")


def load_dataset(path: str | Path) -> CalibrationDataset:
    import json

    payload = json.loads(Path(path).read_text(encoding="utf-8"))
    if payload.get("kind") != "calibration_dataset" or payload.get("schema_version") != 1:
        raise ValueError(f"{path}: not a version-1 calibration dataset")
    groups = tuple(
        tuple(CalibrationSample(tuple(int(t) for t in sample)) for sample in group)
        for group in payload["groups"]
    )
    return CalibrationDataset(groups=groups, provenance=payload.get("provenance", {}))
