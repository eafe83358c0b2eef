"""Evolutionary search over fixed-popcount pruning masks.

One generation: evaluate -> select the lowest-loss fraction -> pair parents
uniformly at random -> uniform crossover -> per-bit mutation -> sparsity
repair. Elites are copied through unchanged, so the per-generation best loss
never increases. RNG streams are pre-split per member and per offspring, and
fitness values are memoized by mask, so a run is bit-reproducible regardless
of evaluation parallelism.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass

import numpy as np

from .calibration import CalibrationDataset
from .core import (
    FitnessRecord,
    PruningPattern,
    SearchReport,
    SparsityConfig,
    make_rng,
)
from .oracle import FitnessOracle

_CONVERGENCE_EPS = 1e-12


@dataclass(frozen=True)
class GAConfig:
    generations: int = 100
    population: int = 64
    mutation_rate: float | None = None  # None resolves to 1/m
    selection_fraction: float = 0.30
    elitism: int = 1
    patience: int = 0  # 0 disables early stopping
    seed: int = 0

    def validate(self) -> None:
        if self.generations < 0:
            raise ValueError("generations must be >= 0")
        if self.population < 2:
            raise ValueError("population must be >= 2")
        if self.mutation_rate is not None and not 0.0 <= self.mutation_rate <= 1.0:
            raise ValueError("mutation_rate must lie in [0, 1]")
        if not 0.0 < self.selection_fraction <= 1.0:
            raise ValueError("selection_fraction must lie in (0, 1]")
        if not 0 <= self.elitism < self.population:
            raise ValueError("elitism must lie in [0, population)")
        if self.patience < 0:
            raise ValueError("patience must be >= 0")


@dataclass(frozen=True)
class Population:
    members: tuple[PruningPattern, ...]
    generation: int


def init_population(size: int, m: int, k: int, seed: int) -> Population:
    """Uniformly-random k-subsets, one independent RNG stream per member."""
    members = []
    for i in range(size):
        rng = make_rng(seed, 1, i)
        indices = rng.permutation(m)[:k]
        members.append(PruningPattern.from_pruned_indices(m, indices))
    return Population(members=tuple(members), generation=0)


def evaluate_population(
    population: Population,
    oracle: FitnessOracle,
    dataset: CalibrationDataset,
    memo: dict[tuple[int, ...], float] | None = None,
) -> list[FitnessRecord]:
    """One record per member; each distinct mask costs one oracle call.

    The memo (keyed by mask) persists across calls when supplied, so repeat
    masks from earlier generations are free as well.
    """
    if memo is None:
        memo = {}
    samples = dataset.all_samples()
    fresh: list[PruningPattern] = []
    queued: set[tuple[int, ...]] = set()
    for member in population.members:
        if member.mask not in memo and member.mask not in queued:
            fresh.append(member)
            queued.add(member.mask)
    if fresh:
        for pattern, loss in zip(fresh, oracle.evaluate_many(fresh, samples)):
            memo[pattern.mask] = loss
    return [FitnessRecord(pattern=m, loss=memo[m.mask]) for m in population.members]


def select_top(records: list[FitnessRecord], selection_fraction: float) -> list[PruningPattern]:
    """ceil(fraction * len) lowest-loss patterns, at least 2; mask order breaks ties."""
    if not records:
        raise ValueError("no records to select from")
    count = max(2, math.ceil(selection_fraction * len(records)))
    count = min(count, len(records))
    ranked = sorted(records, key=FitnessRecord.sort_key)
    return [r.pattern for r in ranked[:count]]


def crossover(parent_a: PruningPattern, parent_b: PruningPattern,
              rng: np.random.Generator) -> PruningPattern:
    """Uniform crossover; bits the parents agree on are always preserved."""
    if len(parent_a) != len(parent_b):
        raise ValueError("parents must have equal length")
    take_a = rng.integers(0, 2, size=len(parent_a))
    mask = tuple(
        a if pick else b
        for a, b, pick in zip(parent_a.mask, parent_b.mask, take_a)
    )
    return PruningPattern(mask)


def mutate(pattern: PruningPattern, mutation_rate: float,
           rng: np.random.Generator) -> PruningPattern:
    """Flip each bit independently with probability mutation_rate."""
    if not 0.0 <= mutation_rate <= 1.0:
        raise ValueError("mutation_rate must lie in [0, 1]")
    flips = rng.random(len(pattern)) < mutation_rate
    return PruningPattern(tuple(b ^ int(f) for b, f in zip(pattern.mask, flips)))


def repair_sparsity(pattern: PruningPattern, k: int,
                    rng: np.random.Generator) -> PruningPattern:
    """Flip uniformly-random violating bits until popcount == k.

    Only excess ones (or missing ones) are touched; a pattern that already
    meets the budget is returned unchanged.
    """
    m = len(pattern)
    if not 1 <= k <= m - 1:
        raise ValueError(f"k={k} outside [1, {m - 1}]")
    excess = pattern.popcount - k
    if excess == 0:
        return pattern
    mask = list(pattern.mask)
    if excess > 0:
        ones = np.flatnonzero(np.asarray(mask) == 1)
        for idx in rng.choice(ones, size=excess, replace=False):
            mask[int(idx)] = 0
    else:
        zeros = np.flatnonzero(np.asarray(mask) == 0)
        for idx in rng.choice(zeros, size=-excess, replace=False):
            mask[int(idx)] = 1
    return PruningPattern(tuple(mask))


def evolution_search(
    ga: GAConfig,
    sparsity: SparsityConfig,
    oracle: FitnessOracle,
    dataset: CalibrationDataset,
) -> SearchReport:
    """Run the full generational loop and return the best pattern ever seen."""
    ga.validate()
    if oracle.layer_count != sparsity.m:
        raise ValueError(
            f"oracle has {oracle.layer_count} layers, sparsity expects {sparsity.m}"
        )
    m, k = sparsity.m, sparsity.k
    mutation_rate = ga.mutation_rate if ga.mutation_rate is not None else 1.0 / m
    t0 = time.perf_counter()

    memo: dict[tuple[int, ...], float] = {}
    trace: list[dict] = []

    def record_generation(step: int, records: list[FitnessRecord]) -> FitnessRecord:
        gen_best = min(records, key=FitnessRecord.sort_key)
        mean_loss = sum(r.loss for r in records) / len(records)
        trace.append({
            "step": step,
            "best_loss": gen_best.loss,
            "mean_loss": mean_loss,
            "best_mask": list(gen_best.pattern.mask),
        })
        return gen_best

    population = init_population(ga.population, m, k, ga.seed)
    for member in population.members:
        sparsity.check_pattern(member)
    records = evaluate_population(population, oracle, dataset, memo)
    best = record_generation(0, records)
    stall = 0

    for generation in range(1, ga.generations + 1):
        parents = select_top(records, ga.selection_fraction)
        elite = [r.pattern for r in sorted(records, key=FitnessRecord.sort_key)[:ga.elitism]]
        children: list[PruningPattern] = []
        for offspring_idx in range(ga.population - ga.elitism):
            rng = make_rng(ga.seed, 2, generation, offspring_idx)
            parent_a = parents[int(rng.integers(len(parents)))]
            parent_b = parents[int(rng.integers(len(parents)))]
            child = repair_sparsity(
                mutate(crossover(parent_a, parent_b, rng), mutation_rate, rng), k, rng
            )
            sparsity.check_pattern(child)
            children.append(child)
        population = Population(members=tuple(elite + children), generation=generation)
        records = evaluate_population(population, oracle, dataset, memo)
        gen_best = record_generation(generation, records)
        if gen_best.loss < best.loss - _CONVERGENCE_EPS:
            best = gen_best
            stall = 0
        else:
            if gen_best.sort_key() < best.sort_key():
                best = gen_best
            stall += 1
            if ga.patience > 0 and stall >= ga.patience:
                break

    wall_ms = (time.perf_counter() - t0) * 1000.0
    return SearchReport(
        method="evo",
        config={
            "generations": ga.generations,
            "population": ga.population,
            "mutation_rate": mutation_rate,
            "selection_fraction": ga.selection_fraction,
            "elitism": ga.elitism,
            "patience": ga.patience,
            "theta": sparsity.theta,
        },
        seed=ga.seed,
        layer_count=m,
        pruned_count=k,
        best=best,
        trace=trace,
        oracle_evals=len(memo),
        wall_ms=wall_ms,
    )
