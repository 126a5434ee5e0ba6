"""Gap-constrained sequential pattern mining by depth-first prefix projection."""

from __future__ import annotations

import logging
import math
import time
from collections.abc import Callable, Iterator, Sequence
from dataclasses import dataclass, field

import numpy as np

from .config import MiningParams

logger = logging.getLogger(__name__)

Symbol = int


@dataclass(frozen=True, slots=True)
class GapPattern:
    id: int
    symbols: tuple[Symbol, ...]

    def __post_init__(self) -> None:
        if not self.symbols:
            raise ValueError("a pattern has at least one symbol")

    @property
    def token(self) -> str:
        return f"sp{self.id}"


@dataclass
class PatternVocabulary:
    """Frequent patterns in lexicographic order of their symbol lists; ids are positions."""

    patterns: list[GapPattern]
    gap: int
    min_support: float = 0.0
    supports: list[int] = field(default_factory=list)

    def __post_init__(self) -> None:
        self._by_symbols = {p.symbols: p.id for p in self.patterns}
        # Trie of admissible extensions, keyed by prefix.
        children: dict[tuple[Symbol, ...], list[Symbol]] = {}
        for p in self.patterns:
            children.setdefault(p.symbols[:-1], []).append(p.symbols[-1])
        self._children = {prefix: sorted(set(nxt)) for prefix, nxt in children.items()}

    def __len__(self) -> int:
        return len(self.patterns)

    def __iter__(self) -> Iterator[GapPattern]:
        return iter(self.patterns)

    def __contains__(self, symbols: object) -> bool:
        return tuple(symbols) in self._by_symbols  # type: ignore[arg-type]

    def id_of(self, symbols: Sequence[Symbol]) -> int:
        return self._by_symbols[tuple(symbols)]

    def extensions(self, prefix: tuple[Symbol, ...]) -> list[Symbol]:
        return self._children.get(prefix, [])

    @property
    def max_length(self) -> int:
        return max((len(p.symbols) for p in self.patterns), default=0)

    def to_lines(self) -> list[str]:
        return [f"{p.id}\t{' '.join(str(s) for s in p.symbols)}" for p in self.patterns]

    @classmethod
    def from_lines(cls, lines: Sequence[str], gap: int, min_support: float = 0.0) -> PatternVocabulary:
        patterns = []
        for line in lines:
            pid, symbols = line.split("\t")
            patterns.append(GapPattern(int(pid), tuple(int(s) for s in symbols.split())))
        return cls(patterns, gap, min_support)


def contains_pattern(sequence: Sequence[Symbol], pattern: GapPattern | Sequence[Symbol], gap: int) -> bool:
    """True iff positions i_1 < ... < i_m spell the pattern with i_{j+1} - i_j - 1 <= gap."""
    symbols = pattern.symbols if isinstance(pattern, GapPattern) else tuple(pattern)
    if not symbols:
        raise ValueError("contains_pattern needs a non-empty pattern")
    ends = {i for i, s in enumerate(sequence) if s == symbols[0]}
    for symbol in symbols[1:]:
        ends = {
            j
            for i in ends
            for j in range(i + 1, min(i + gap + 2, len(sequence)))
            if sequence[j] == symbol
        }
        if not ends:
            return False
    return bool(ends)


def _padded(corpus: Sequence[Sequence[Symbol]]) -> np.ndarray:
    width = max((len(seq) for seq in corpus), default=0)
    matrix = np.full((len(corpus), max(width, 1)), -1, dtype=np.int64)
    for row, seq in enumerate(corpus):
        matrix[row, : len(seq)] = seq
    return matrix


def _reachable(ends: np.ndarray, gap: int) -> np.ndarray:
    """Positions that may hold the next pattern symbol given current end positions."""
    out = np.zeros_like(ends)
    width = ends.shape[1]
    for shift in range(1, min(gap + 1, width - 1) + 1):
        out[:, shift:] |= ends[:, :-shift]
    return out


class _Projector:
    """Depth-first prefix projection over a padded corpus matrix."""

    def __init__(self, corpus: Sequence[Sequence[Symbol]], gap: int, max_length: int):
        self.matrix = _padded(corpus)
        self.gap = gap
        self.max_length = max_length
        self.annotations: list[list[int]] = [[] for _ in range(len(corpus))]

    def occurrences(self, symbol: Symbol, rows: np.ndarray, reach: np.ndarray | None) -> tuple[np.ndarray, np.ndarray]:
        hits = self.matrix[rows] == symbol
        if reach is not None:
            hits &= reach
        present = hits.any(axis=1)
        return rows[present], hits[present]

    def expand(
        self,
        prefix: tuple[Symbol, ...],
        rows: np.ndarray,
        ends: np.ndarray,
        candidates: Callable[[tuple[Symbol, ...]], Sequence[Symbol]],
        accept: Callable[[int], bool],
    ) -> Iterator[tuple[tuple[Symbol, ...], np.ndarray]]:
        if len(prefix) >= self.max_length:
            return
        reach = _reachable(ends, self.gap)
        for symbol in candidates(prefix):
            sub_rows, sub_ends = self.occurrences(symbol, rows, reach)
            if not accept(len(sub_rows)):
                continue
            pattern = prefix + (symbol,)
            yield pattern, sub_rows
            yield from self.expand(pattern, sub_rows, sub_ends, candidates, accept)


def mine_patterns(
    corpus: Sequence[Sequence[Symbol]],
    params: MiningParams | None = None,
) -> tuple[PatternVocabulary, list[list[int]]]:
    """
    Mine every gap-constrained pattern with relative support >= min_support.

    Args:
        corpus: Non-empty list of integer symbol sequences (empty sequences allowed).
        params: Support threshold, gap and maximal pattern length.

    Returns:
        The pattern vocabulary (ids in lexicographic order of symbol lists) and,
        per input sequence, the sorted ids of the patterns it contains.

    Raises:
        ValueError: On an empty corpus or a support outside (0, 1].
    """
    params = params or MiningParams()
    if not 0.0 < params.min_support <= 1.0:
        raise ValueError(f"min_support must be in (0, 1], got {params.min_support}")
    if len(corpus) == 0:
        raise ValueError("mine_patterns needs a non-empty corpus")

    t0 = time.perf_counter()
    n = len(corpus)
    min_rows = max(1, math.ceil(params.min_support * n - 1e-9))

    projector = _Projector(corpus, params.gap, params.max_pattern_length)
    all_rows = np.arange(n)
    singletons = sorted({s for seq in corpus for s in seq})
    frequent = [s for s in singletons if len(projector.occurrences(s, all_rows, None)[0]) >= min_rows]

    patterns: list[GapPattern] = []
    supports: list[int] = []

    def record(symbols: tuple[Symbol, ...], rows: np.ndarray) -> None:
        pid = len(patterns)
        patterns.append(GapPattern(pid, symbols))
        supports.append(len(rows))
        for row in rows:
            projector.annotations[row].append(pid)

    for symbol in frequent:
        rows, ends = projector.occurrences(symbol, all_rows, None)
        record((symbol,), rows)
        for pattern, sub_rows in projector.expand(
            (symbol,), rows, ends, lambda _prefix: frequent, lambda count: count >= min_rows
        ):
            record(pattern, sub_rows)

    vocabulary = PatternVocabulary(patterns, params.gap, params.min_support, supports)
    logger.info(
        f"Mined {len(vocabulary)} patterns from {n} sequences "
        f"(min_support={params.min_support}, gap={params.gap}, max_len={params.max_pattern_length}, "
        f"{round((time.perf_counter() - t0) * 1000, 1)}ms)"
    )
    return vocabulary, projector.annotations


def annotate(corpus: Sequence[Sequence[Symbol]], vocabulary: PatternVocabulary) -> list[list[int]]:
    """Ids of the vocabulary patterns contained in each sequence of a new corpus."""
    if len(corpus) == 0 or len(vocabulary) == 0:
        return [[] for _ in corpus]
    projector = _Projector(corpus, vocabulary.gap, max(vocabulary.max_length, 1))
    all_rows = np.arange(len(corpus))
    found: list[tuple[int, np.ndarray]] = []
    for symbol in vocabulary.extensions(()):
        rows, ends = projector.occurrences(symbol, all_rows, None)
        if not len(rows):
            continue
        found.append((vocabulary.id_of((symbol,)), rows))
        for pattern, sub_rows in projector.expand(
            (symbol,), rows, ends, vocabulary.extensions, lambda count: count > 0
        ):
            found.append((vocabulary.id_of(pattern), sub_rows))

    annotations: list[list[int]] = [[] for _ in corpus]
    for pid, rows in found:
        for row in rows:
            annotations[row].append(pid)
    return [sorted(ids) for ids in annotations]


def sequence_set_lines(seq_ids: Sequence[str], annotations: Sequence[Sequence[int]]) -> list[str]:
    return [f"{sid}\t{' '.join(str(i) for i in ids)}" for sid, ids in zip(seq_ids, annotations)]


def parse_sequence_sets(lines: Sequence[str]) -> dict[str, list[int]]:
    sets = {}
    for line in lines:
        sid, ids = line.split("\t")
        sets[sid] = [int(i) for i in ids.split()]
    return sets
