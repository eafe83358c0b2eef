from __future__ import annotations

import itertools
import math

import pytest

from evoprune.core import (
    DegenerateSparsity,
    FitnessRecord,
    PruningPattern,
    SparsityConfig,
    derive_pruned_count,
    make_rng,
    pattern_space_size,
)


def brute_force_subset_count(m: int, k: int) -> int:
    return sum(1 for _ in itertools.combinations(range(m), k))


class TestPatternSpaceSize:
    def test_empty_selection(self):
        assert pattern_space_size(12, 0) == 1

    def test_full_selection(self):
        assert pattern_space_size(12, 12) == 1

    def test_multiplicative_formula(self):
        # C(40, 4) = 40*39*38*37 / 4! evaluated with exact integers
        assert pattern_space_size(40, 4) == (40 * 39 * 38 * 37) // math.factorial(4)
        assert pattern_space_size(40, 4) == 91390

    def test_matches_brute_force_enumeration(self):
        for m in range(13):
            for k in range(m + 1):
                assert pattern_space_size(m, k) == brute_force_subset_count(m, k)

    def test_symmetry(self):
        for m in range(1, 40):
            for k in range(m + 1):
                assert pattern_space_size(m, k) == pattern_space_size(m, m - k)

    def test_no_silent_wrap_on_huge_inputs(self):
        # python ints are arbitrary precision; the value must be exact, not clipped
        assert pattern_space_size(300, 150) % 2 == 0
        assert pattern_space_size(300, 150) > 2**250

    def test_invalid_arguments(self):
        with pytest.raises(ValueError):
            pattern_space_size(5, 6)
        with pytest.raises(ValueError):
            pattern_space_size(-1, 0)


class TestDerivePrunedCount:
    def test_exact_products(self):
        assert derive_pruned_count(0.20, 40) == 8
        assert derive_pruned_count(0.50, 12) == 6

    def test_rounds_half_up(self):
        assert derive_pruned_count(0.10, 12) == 1  # 1.2 -> 1
        assert derive_pruned_count(0.125, 12) == 2  # 1.5 -> 2
        assert derive_pruned_count(0.375, 4) == 2  # 1.5 -> 2

    def test_degenerate_low(self):
        with pytest.raises(DegenerateSparsity):
            derive_pruned_count(0.01, 12)  # rounds to 0

    def test_degenerate_high(self):
        with pytest.raises(DegenerateSparsity):
            derive_pruned_count(0.99, 12)  # rounds to 12

    def test_theta_bounds(self):
        for theta in (0.0, 1.0, -0.1, 1.5):
            with pytest.raises(DegenerateSparsity):
                derive_pruned_count(theta, 12)

    def test_tiny_model(self):
        with pytest.raises(DegenerateSparsity):
            derive_pruned_count(0.5, 1)


class TestPruningPattern:
    def test_roundtrip_indices(self):
        p = PruningPattern.from_pruned_indices(6, [1, 4])
        assert p.mask == (0, 1, 0, 0, 1, 0)
        assert p.popcount == 2
        assert p.pruned_indices() == (1, 4)
        assert p.to_string() == "010010"
        assert len(p) == 6

    def test_rejects_bad_bits(self):
        with pytest.raises(ValueError):
            PruningPattern((0, 2, 0))
        with pytest.raises(ValueError):
            PruningPattern(())

    def test_lexicographic_ordering(self):
        assert PruningPattern((0, 0, 1, 1)) < PruningPattern((0, 1, 0, 1))
        assert PruningPattern((1, 0, 0, 0)) > PruningPattern((0, 1, 1, 1))

    def test_hashable_and_equal(self):
        a = PruningPattern.zeros(4)
        b = PruningPattern((0, 0, 0, 0))
        assert a == b and hash(a) == hash(b)


class TestSparsityConfig:
    def test_from_theta(self):
        sp = SparsityConfig.from_theta(0.5, 12)
        assert (sp.theta, sp.m, sp.k) == (0.5, 12, 6)

    def test_check_pattern(self):
        sp = SparsityConfig.from_theta(0.5, 4)
        sp.check_pattern(PruningPattern((1, 1, 0, 0)))
        with pytest.raises(ValueError):
            sp.check_pattern(PruningPattern((1, 0, 0, 0)))
        with pytest.raises(ValueError):
            sp.check_pattern(PruningPattern((1, 1, 0)))

    def test_rejects_degenerate_k(self):
        with pytest.raises(DegenerateSparsity):
            SparsityConfig(theta=0.5, m=4, k=0)
        with pytest.raises(DegenerateSparsity):
            SparsityConfig(theta=0.5, m=4, k=4)


class TestFitnessRecord:
    def test_rejects_nonfinite_loss(self):
        p = PruningPattern.zeros(2)
        with pytest.raises(ValueError):
            FitnessRecord(p, float("nan"))
        with pytest.raises(ValueError):
            FitnessRecord(p, float("inf"))
        with pytest.raises(ValueError):
            FitnessRecord(p, -0.5)

    def test_perplexity(self):
        rec = FitnessRecord(PruningPattern.zeros(2), 1.0)
        assert rec.perplexity == pytest.approx(math.e)


class TestMakeRng:
    def test_same_stream_same_values(self):
        a = make_rng(7, 1, 2).integers(0, 1000, size=8)
        b = make_rng(7, 1, 2).integers(0, 1000, size=8)
        assert (a == b).all()

    def test_different_streams_diverge(self):
        a = make_rng(7, 1, 2).integers(0, 10**9, size=8)
        b = make_rng(7, 1, 3).integers(0, 10**9, size=8)
        c = make_rng(8, 1, 2).integers(0, 10**9, size=8)
        assert not (a == b).all()
        assert not (a == c).all()

    def test_prefix_is_not_a_substream(self):
        # (seed,) and (seed, 0) name different streams
        a = make_rng(5).integers(0, 10**9, size=4)
        b = make_rng(5, 0).integers(0, 10**9, size=4)
        assert not (a == b).all()
