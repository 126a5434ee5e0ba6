from __future__ import annotations

import itertools
import math

import numpy as np
import pytest

from app.mobility.config import MiningParams
from app.mobility.patterns import (
    GapPattern,
    PatternVocabulary,
    annotate,
    contains_pattern,
    mine_patterns,
    parse_sequence_sets,
    sequence_set_lines,
)


def feasible_subsequences(seq, gap, max_len):
    found = set()
    for length in range(1, min(max_len, len(seq)) + 1):
        for positions in itertools.combinations(range(len(seq)), length):
            if all(b - a - 1 <= gap for a, b in zip(positions, positions[1:])):
                found.add(tuple(seq[p] for p in positions))
    return found


def frequent_by_count(per_sequence, min_support):
    support = {}
    for found in per_sequence:
        for pattern in found:
            support[pattern] = support.get(pattern, 0) + 1
    threshold = max(1, math.ceil(min_support * len(per_sequence) - 1e-9))
    frequent = {p for p, count in support.items() if count >= threshold}
    return frequent, [found & frequent for found in per_sequence]


def brute_force(corpus, min_support, gap, max_len):
    """Every gap-feasible subsequence up to max_len, counted once per sequence."""
    return frequent_by_count([feasible_subsequences(seq, gap, max_len) for seq in corpus], min_support)


def random_corpus(seed: int, n: int = 12, alphabet: int = 4, max_len: int = 8) -> list[list[int]]:
    rng = np.random.default_rng(seed)
    return [list(rng.integers(1, alphabet + 1, size=rng.integers(0, max_len + 1))) for _ in range(n)]


def small_random_corpus(rng: np.random.Generator) -> list[list[int]]:
    """At most 8 sequences of length at most 10 over at most 5 symbols."""
    alphabet = int(rng.integers(1, 6))
    return [
        [int(s) for s in rng.integers(1, alphabet + 1, size=rng.integers(0, 11))]
        for _ in range(int(rng.integers(1, 9)))
    ]


def test_small_corpus_with_gap_one():
    vocabulary, annotations = mine_patterns([[1, 2, 1], [1, 3, 2]], MiningParams(min_support=1.0, gap=1, max_pattern_length=2))
    assert [p.symbols for p in vocabulary] == [(1,), (1, 2), (2,)]
    assert annotations == [[0, 1, 2], [0, 1, 2]]
    assert vocabulary.supports == [2, 2, 2]


def test_small_corpus_with_gap_zero():
    vocabulary, _ = mine_patterns([[1, 2, 1], [1, 3, 2]], MiningParams(min_support=1.0, gap=0, max_pattern_length=2))
    assert [p.symbols for p in vocabulary] == [(1,), (2,)]


def test_singleton_corpus_yields_every_feasible_subsequence():
    seq = [3, 1, 2, 1]
    vocabulary, (ids,) = mine_patterns([seq], MiningParams(min_support=1.0, gap=1, max_pattern_length=3))
    expected, _ = brute_force([seq], 1.0, 1, 3)
    assert {p.symbols for p in vocabulary} == expected
    assert ids == list(range(len(vocabulary)))


@pytest.mark.parametrize("gap", [0, 1, 2, 4])
@pytest.mark.parametrize("min_support", [0.25, 0.5, 1.0])
def test_matches_brute_force_enumeration(gap, min_support):
    corpus = random_corpus(seed=gap * 10 + int(min_support * 4))
    vocabulary, annotations = mine_patterns(corpus, MiningParams(min_support=min_support, gap=gap, max_pattern_length=4))
    expected, expected_sets = brute_force(corpus, min_support, gap, 4)
    assert {p.symbols for p in vocabulary} == expected
    for ids, found in zip(annotations, expected_sets):
        assert {vocabulary.patterns[i].symbols for i in ids} == found


@pytest.mark.parametrize("gap", [0, 1, 2, 4])
def test_matches_brute_force_on_many_small_corpora(gap):
    rng = np.random.default_rng(1000 + gap)
    for _ in range(200):
        corpus = small_random_corpus(rng)
        per_sequence = [feasible_subsequences(seq, gap, 10) for seq in corpus]
        for min_support in (0.25, 0.5, 1.0):
            vocabulary, annotations = mine_patterns(corpus, MiningParams(min_support=min_support, gap=gap, max_pattern_length=10))
            expected, expected_sets = frequent_by_count(per_sequence, min_support)
            assert {p.symbols for p in vocabulary} == expected
            for ids, found in zip(annotations, expected_sets):
                assert {vocabulary.patterns[i].symbols for i in ids} == found


def test_looser_constraints_never_lose_a_pattern():
    rng = np.random.default_rng(7)
    for _ in range(100):
        corpus = small_random_corpus(rng)
        mined = {
            (gap, support): {p.symbols for p in mine_patterns(corpus, MiningParams(min_support=support, gap=gap, max_pattern_length=10))[0]}
            for gap in (0, 1, 2, 4)
            for support in (0.25, 0.5, 1.0)
        }
        for support in (0.25, 0.5, 1.0):
            for narrow, wide in zip((0, 1, 2), (1, 2, 4)):
                assert mined[(narrow, support)] <= mined[(wide, support)]
        for gap in (0, 1, 2, 4):
            assert mined[(gap, 1.0)] <= mined[(gap, 0.5)] <= mined[(gap, 0.25)]


def test_ids_follow_lexicographic_order():
    vocabulary, _ = mine_patterns(random_corpus(seed=3), MiningParams(min_support=0.25, gap=2, max_pattern_length=3))
    symbols = [p.symbols for p in vocabulary]
    assert symbols == sorted(symbols)
    assert [p.id for p in vocabulary] == list(range(len(vocabulary)))


def test_support_is_anti_monotone():
    vocabulary, _ = mine_patterns(random_corpus(seed=5), MiningParams(min_support=0.25, gap=2, max_pattern_length=4))
    support = dict(zip((p.symbols for p in vocabulary), vocabulary.supports))
    for symbols, count in support.items():
        if len(symbols) > 1:
            assert symbols[:-1] in support
            assert support[symbols[:-1]] >= count


def test_empty_corpus_is_rejected():
    with pytest.raises(ValueError):
        mine_patterns([], MiningParams())


def test_contains_pattern_respects_gap():
    assert contains_pattern([1, 3, 2], (1, 2), gap=1)
    assert not contains_pattern([1, 3, 2], (1, 2), gap=0)
    assert contains_pattern([1, 3, 3, 2, 1], (1, 2, 1), gap=2)
    assert not contains_pattern([2, 1], (1, 2), gap=5)


def test_every_symbol_is_contained_whatever_the_gap():
    seq = [4, 1, 1, 2]
    for symbol in seq:
        for gap in (0, 3):
            assert contains_pattern(seq, GapPattern(0, (symbol,)), gap)


def test_annotate_reproduces_mining_annotations():
    corpus = random_corpus(seed=11)
    vocabulary, annotations = mine_patterns(corpus, MiningParams(min_support=0.25, gap=1, max_pattern_length=4))
    assert annotate(corpus, vocabulary) == annotations


def test_annotate_new_sequences_uses_only_known_patterns():
    vocabulary, _ = mine_patterns([[1, 2, 1], [1, 3, 2]], MiningParams(min_support=1.0, gap=1, max_pattern_length=2))
    assert annotate([[9, 9], [2, 5, 1, 2]], vocabulary) == [[], [0, 1, 2]]


def test_vocabulary_and_sequence_sets_text_round_trip():
    vocabulary, annotations = mine_patterns(random_corpus(seed=2), MiningParams(min_support=0.5, gap=2, max_pattern_length=3))
    reloaded = PatternVocabulary.from_lines(vocabulary.to_lines(), gap=vocabulary.gap)
    assert reloaded.patterns == vocabulary.patterns
    seq_ids = [f"u{i}/1" for i in range(len(annotations))]
    assert parse_sequence_sets(sequence_set_lines(seq_ids, annotations)) == dict(zip(seq_ids, annotations))
