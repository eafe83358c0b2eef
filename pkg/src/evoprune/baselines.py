"""Comparison searches: greedy layer dropping, exhaustive enumeration, random."""

from __future__ import annotations

import itertools
import time
from typing import Iterable

from .calibration import CalibrationDataset
from .core import (
    BudgetExceeded,
    FitnessRecord,
    PruningPattern,
    SearchReport,
    make_rng,
    pattern_space_size,
)
from .oracle import FitnessOracle

DEFAULT_MAX_EVALS = 200_000
_EVAL_BATCH = 128


def _check_setup(oracle: FitnessOracle, m: int, k: int) -> None:
    if oracle.layer_count != m:
        raise ValueError(f"oracle has {oracle.layer_count} layers, search expects {m}")
    if not 1 <= k <= m - 1:
        raise ValueError(f"k={k} outside [1, {m - 1}]")


def greedy_search(oracle: FitnessOracle, dataset: CalibrationDataset,
                  m: int, k: int) -> SearchReport:
    """Drop one layer at a time, always the one whose removal scores lowest.

    Each of the k steps evaluates every currently-unpruned single addition, so
    the oracle sees exactly m + (m-1) + ... + (m-k+1) patterns. Ties pick the
    lowest layer index. The chosen set at step j is shared by every run with
    a budget of at least j, making greedy trajectories nested.
    """
    _check_setup(oracle, m, k)
    samples = dataset.all_samples()
    t0 = time.perf_counter()
    mask = [0] * m
    evals = 0
    trace: list[dict] = []
    step_loss = 0.0
    for step in range(1, k + 1):
        layers = [i for i in range(m) if mask[i] == 0]
        candidates = []
        for layer in layers:
            trial = list(mask)
            trial[layer] = 1
            candidates.append(PruningPattern(tuple(trial)))
        losses = oracle.evaluate_many(candidates, samples)
        evals += len(candidates)
        best_idx = 0
        for i in range(1, len(losses)):
            if losses[i] < losses[best_idx]:
                best_idx = i
        mask[layers[best_idx]] = 1
        step_loss = losses[best_idx]
        trace.append({
            "step": step,
            "layer": layers[best_idx],
            "loss": step_loss,
            "mask": list(mask),
        })
    wall_ms = (time.perf_counter() - t0) * 1000.0
    best = FitnessRecord(pattern=PruningPattern(tuple(mask)), loss=step_loss)
    return SearchReport(
        method="greedy", config={}, seed=None, layer_count=m, pruned_count=k,
        best=best, trace=trace, oracle_evals=evals, wall_ms=wall_ms,
    )


def _batched(iterable: Iterable, size: int) -> Iterable[list]:
    batch: list = []
    for item in iterable:
        batch.append(item)
        if len(batch) == size:
            yield batch
            batch = []
    if batch:
        yield batch


def exhaustive_search(oracle: FitnessOracle, dataset: CalibrationDataset,
                      m: int, k: int, max_evals: int = DEFAULT_MAX_EVALS) -> SearchReport:
    """Evaluate every k-subset; the returned pattern is the global optimum.

    Ties resolve to the lexicographically smallest mask. Refuses to start when
    the pattern space exceeds max_evals.
    """
    _check_setup(oracle, m, k)
    space = pattern_space_size(m, k)
    if space > max_evals:
        raise BudgetExceeded(
            f"pattern space C({m},{k})={space} exceeds the budget of {max_evals} evaluations"
        )
    samples = dataset.all_samples()
    t0 = time.perf_counter()
    evals = 0
    best: FitnessRecord | None = None
    trace: list[dict] = []
    combos = (PruningPattern.from_pruned_indices(m, c) for c in itertools.combinations(range(m), k))
    for batch in _batched(combos, _EVAL_BATCH):
        losses = oracle.evaluate_many(batch, samples)
        for pattern, loss in zip(batch, losses):
            evals += 1
            candidate = FitnessRecord(pattern=pattern, loss=loss)
            if best is None or candidate.sort_key() < best.sort_key():
                best = candidate
                trace.append({"evals": evals, "loss": loss, "mask": list(pattern.mask)})
    wall_ms = (time.perf_counter() - t0) * 1000.0
    assert best is not None
    return SearchReport(
        method="ideal", config={"max_evals": max_evals}, seed=None,
        layer_count=m, pruned_count=k,
        best=best, trace=trace, oracle_evals=evals, wall_ms=wall_ms,
    )


def random_search(oracle: FitnessOracle, dataset: CalibrationDataset,
                  m: int, k: int, trials: int, seed: int = 0) -> SearchReport:
    """Best of `trials` uniformly-random valid patterns (duplicates re-evaluated)."""
    _check_setup(oracle, m, k)
    if trials < 1:
        raise ValueError("trials must be >= 1")
    samples = dataset.all_samples()
    t0 = time.perf_counter()
    rng = make_rng(seed, 3)
    patterns = [
        PruningPattern.from_pruned_indices(m, rng.permutation(m)[:k])
        for _ in range(trials)
    ]
    evals = 0
    best: FitnessRecord | None = None
    trace: list[dict] = []
    for batch in _batched(patterns, _EVAL_BATCH):
        losses = oracle.evaluate_many(batch, samples)
        for pattern, loss in zip(batch, losses):
            evals += 1
            candidate = FitnessRecord(pattern=pattern, loss=loss)
            if best is None or candidate.sort_key() < best.sort_key():
                best = candidate
                trace.append({"trial": evals, "loss": loss, "mask": list(pattern.mask)})
    wall_ms = (time.perf_counter() - t0) * 1000.0
    assert best is not None
    return SearchReport(
        method="random", config={"trials": trials}, seed=seed,
        layer_count=m, pruned_count=k,
        best=best, trace=trace, oracle_evals=evals, wall_ms=wall_ms,
    )
