"""Coherence metric (Jensen-Shannon vs embedding distance) and the perturbation experiment."""

from __future__ import annotations

import logging
import math
import time
from collections.abc import Iterable, Mapping, Sequence
from dataclasses import dataclass, field
from typing import Any

import numpy as np
from scipy import stats
from scipy.spatial import ConvexHull
from scipy.spatial.distance import jensenshannon, pdist

from .embedder import Sqn2VecModel, aggregate_users
from .patterns import PatternVocabulary, annotate
from .reduction import Reducer
from .trajectories import WeeklyTrajectory

logger = logging.getLogger(__name__)

_NATS_TO_BITS = 1.0 / math.sqrt(math.log(2.0))


@dataclass(frozen=True)
class RankDistribution:
    """Relative frequencies of ranks 1..r_max (index 0 holds rank 1)."""

    probabilities: tuple[float, ...]

    def __post_init__(self) -> None:
        p = np.asarray(self.probabilities)
        if p.size == 0 or (p < 0).any() or abs(p.sum() - 1.0) > 1e-9:
            raise ValueError("a rank distribution is non-empty, non-negative and sums to 1")

    @property
    def support(self) -> int:
        return len(self.probabilities)

    def padded(self, size: int) -> np.ndarray:
        if size < self.support:
            raise ValueError(f"cannot pad a support of {self.support} down to {size}")
        out = np.zeros(size)
        out[: self.support] = self.probabilities
        return out


def rank_distribution(ranks: Sequence[int]) -> RankDistribution:
    """Empirical distribution of rank values."""
    if len(ranks) == 0:
        raise ValueError("rank_distribution needs at least one rank")
    values = np.asarray(ranks, dtype=np.int64)
    if (values < 1).any():
        raise ValueError("ranks are positive integers")
    counts = np.bincount(values)[1:]
    return RankDistribution(tuple(float(c) for c in counts / counts.sum()))


def user_rank_distributions(weekly: Iterable[WeeklyTrajectory]) -> dict[str, RankDistribution]:
    """Per-user distribution over the concatenation of all weekly rank sequences."""
    ranks: dict[str, list[int]] = {}
    for w in weekly:
        ranks.setdefault(w.user_id, []).extend(w.ranks)
    return {user: rank_distribution(r) for user, r in sorted(ranks.items()) if r}


def _as_arrays(g1: RankDistribution | Sequence[float], g2: RankDistribution | Sequence[float]) -> tuple[np.ndarray, np.ndarray]:
    if isinstance(g1, RankDistribution) and isinstance(g2, RankDistribution):
        size = max(g1.support, g2.support)
        return g1.padded(size), g2.padded(size)
    p = g1.padded(len(g2)) if isinstance(g1, RankDistribution) else np.asarray(g1, dtype=np.float64)
    q = g2.padded(len(p)) if isinstance(g2, RankDistribution) else np.asarray(g2, dtype=np.float64)
    if p.shape != q.shape:
        raise ValueError(f"distributions have different supports: {p.shape} vs {q.shape}")
    return p, q


def _check_mass(matrix: np.ndarray) -> None:
    if not np.isfinite(matrix).all() or (matrix < 0).any():
        raise ValueError("distributions need finite, non-negative probabilities")
    if (matrix.sum(axis=-1) <= 0).any():
        raise ValueError("distribution has zero mass")


def js_distance(g1: RankDistribution | Sequence[float], g2: RankDistribution | Sequence[float]) -> float:
    """
    Square root of the base-2 Jensen-Shannon divergence, in [0, 1].

    Raises:
        ValueError: On different raw supports, negative entries or a zero-mass input.
    """
    p, q = _as_arrays(g1, g2)
    _check_mass(np.stack([p, q]))
    value = float(jensenshannon(p, q, base=2.0))
    # Rounding can leave a divergence of -1e-17 for equal inputs; its root is NaN.
    if math.isnan(value):
        return 0.0
    return min(max(value, 0.0), 1.0)


def pairwise_js(distributions: Sequence[RankDistribution]) -> np.ndarray:
    """Condensed matrix of pairwise JS distances (same order as `pdist`)."""
    size = max(g.support for g in distributions)
    matrix = np.stack([g.padded(size) for g in distributions])
    _check_mass(matrix)
    # pdist uses natural logarithms; rescale to base 2.
    values = pdist(matrix, metric="jensenshannon") * _NATS_TO_BITS
    return np.clip(np.nan_to_num(values, nan=0.0), 0.0, 1.0)


def pearson_r(xs: Sequence[float], ys: Sequence[float]) -> float:
    """
    Sample Pearson correlation.

    Raises:
        ValueError: On length mismatch, fewer than two values, or zero variance.
    """
    x = np.asarray(xs, dtype=np.float64)
    y = np.asarray(ys, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError(f"pearson_r needs two equal-length 1D inputs, got {x.shape} and {y.shape}")
    if x.size < 2:
        raise ValueError("pearson_r needs at least two values")
    if np.ptp(x) == 0.0 or np.ptp(y) == 0.0:
        raise ValueError("pearson_r is undefined for zero-variance input")
    r, _ = stats.pearsonr(x, y)
    return float(np.clip(r, -1.0, 1.0))


@dataclass
class EvaluationReport:
    users: list[str]
    distance: str
    pearson_r: float
    embedding_distances: np.ndarray = field(repr=False)
    js_distances: np.ndarray = field(repr=False)
    seed: int = 0

    @property
    def n_pairs(self) -> int:
        return int(self.embedding_distances.shape[0])

    def to_dict(self) -> dict[str, Any]:
        return {
            "sampled_users": len(self.users),
            "pairs": self.n_pairs,
            "distance": self.distance,
            "pearson_r": round(self.pearson_r, 6),
            "seed": self.seed,
            "embedding_distance_mean": round(float(self.embedding_distances.mean()), 6),
            "js_distance_mean": round(float(self.js_distances.mean()), 6),
        }

    def pair_rows(self) -> Iterable[tuple[str, str, float, float]]:
        k = 0
        for i in range(len(self.users)):
            for j in range(i + 1, len(self.users)):
                yield self.users[i], self.users[j], float(self.embedding_distances[k]), float(self.js_distances[k])
                k += 1


def embedding_quality(
    embeddings: Mapping[str, np.ndarray],
    distributions: Mapping[str, RankDistribution],
    sample: int = 800,
    distance: str = "euclidean",
    seed: int = 42,
) -> EvaluationReport:
    """
    Pearson r between pairwise embedding distances and JS distances of rank distributions.

    Args:
        embeddings: User -> point (2D layout or full-width vector).
        distributions: User -> rank distribution; same users as `embeddings`.
        sample: Number of users drawn uniformly (without replacement).
        distance: "euclidean" or "cosine".
        seed: Sampling seed.

    Raises:
        ValueError: On mismatched users, sample outside [2, users], or zero variance.
    """
    if set(embeddings) != set(distributions):
        raise ValueError("embeddings and distributions must cover the same users")
    users = sorted(embeddings)
    if sample < 2:
        raise ValueError("embedding_quality needs at least 2 sampled users")
    if sample > len(users):
        raise ValueError(f"sample={sample} exceeds the {len(users)} available users")
    rng = np.random.default_rng(seed)
    chosen = sorted(rng.choice(users, size=sample, replace=False).tolist())

    points = np.stack([np.asarray(embeddings[u], dtype=np.float64) for u in chosen])
    emb = pdist(points, metric=distance)
    emb = np.nan_to_num(emb, nan=0.0)
    js = pairwise_js([distributions[u] for u in chosen])
    r = pearson_r(emb, js)
    return EvaluationReport(chosen, distance, r, emb, js, seed)


def perturb_trajectory(weekly: WeeklyTrajectory, k: int) -> WeeklyTrajectory:
    """
    Remove every occurrence of the k largest distinct ranks of a weekly trajectory.

    With k or fewer distinct ranks only the rank-1 occurrences remain.

    Raises:
        ValueError: If k < 1, the sequence holds only rank 1, or nothing would remain.
    """
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    distinct = sorted(set(weekly.ranks))
    if distinct == [1]:
        raise ValueError(f"{weekly.seq_id}: only rank 1 occurs, nothing to perturb")
    if len(distinct) > k:
        removed = set(distinct[-k:])
        kept = tuple(r for r in weekly.ranks if r not in removed)
    else:
        kept = tuple(r for r in weekly.ranks if r == 1)
    if not kept:
        raise ValueError(f"{weekly.seq_id}: perturbation with k={k} leaves an empty sequence")
    return WeeklyTrajectory(weekly.user_id, weekly.week_index, kept)


def max_pairwise_distance(points: np.ndarray) -> float:
    """Largest Euclidean distance between two points (hull vertices suffice in 2D)."""
    points = np.asarray(points, dtype=np.float64)
    if len(points) < 2:
        return 0.0
    if points.shape[1] == 2 and len(points) > 3:
        try:
            points = points[ConvexHull(points).vertices]
        except Exception:
            logger.debug("Convex hull failed (degenerate layout); using all points")
    return float(pdist(points).max())


def embed_weekly_users(
    model: Sqn2VecModel,
    patterns: PatternVocabulary,
    weekly: Sequence[WeeklyTrajectory],
    epochs: int | None = None,
    seed: int | None = None,
) -> tuple[list[str], np.ndarray]:
    """
    Infer weekly vectors for new weekly trajectories and average them per user.

    Weeks without any symbol of the model vocabulary are skipped.
    """
    kept = [w for w in weekly if model.known(w.ranks)]
    if len(kept) < len(weekly):
        logger.warning(f"Skipped {len(weekly) - len(kept)} weekly trajectories with no known symbol")
    if not kept:
        return [], np.zeros((0, model.config.dim))
    weekly = kept
    symbols = [list(w.ranks) for w in weekly]
    pattern_sets = annotate(symbols, patterns)
    vectors = model.infer(symbols, pattern_sets, epochs=epochs, seed=seed)
    return aggregate_users([w.user_id for w in weekly], vectors)


@dataclass
class SimilarityReport:
    per_k: dict[int, dict[str, float]]
    samples: list[tuple[int, str, float]]
    global_max_distance: float
    random_pair_p10: float
    baseline: dict[str, float]
    monotonic: bool
    all_below_max: bool
    n_sources: int

    def to_dict(self) -> dict[str, Any]:
        return {
            "n_sources": self.n_sources,
            "per_k": {str(k): v for k, v in self.per_k.items()},
            "global_max_distance": round(self.global_max_distance, 6),
            "random_pair_p10": round(self.random_pair_p10, 6),
            "baseline": self.baseline,
            "monotonic_median": self.monotonic,
            "all_below_max": self.all_below_max,
        }


def _summary(values: np.ndarray) -> dict[str, float]:
    q = np.percentile(values, [0, 25, 50, 75, 100])
    return {
        "count": int(values.size),
        "min": round(float(q[0]), 6),
        "q1": round(float(q[1]), 6),
        "median": round(float(q[2]), 6),
        "q3": round(float(q[3]), 6),
        "max": round(float(q[4]), 6),
        "mean": round(float(values.mean()), 6),
    }


def perturbed_weeks(weeks: Sequence[WeeklyTrajectory], k: int) -> list[WeeklyTrajectory]:
    """Perturb every non-empty week; k=0 returns the weeks unchanged."""
    out = []
    for w in weeks:
        if not w.ranks:
            continue
        if k == 0:
            out.append(w)
            continue
        try:
            out.append(perturb_trajectory(w, k))
        except ValueError:
            continue
    return out


def similarity_experiment(
    model: Sqn2VecModel,
    reducer: Reducer,
    patterns: PatternVocabulary,
    dataset: Mapping[str, Sequence[WeeklyTrajectory]],
    layout: Mapping[str, np.ndarray],
    n_sources: int = 1000,
    k_max: int = 5,
    seed: int = 42,
    epochs: int | None = None,
) -> SimilarityReport:
    """
    Distance between each sampled source and its k-perturbed copies in the 2D layout.

    For every k in 1..k_max, each source's weekly trajectories lose their k
    largest ranks, are re-inferred, averaged and transformed into the layout;
    the distance to the source's fitted point is recorded. k=0 (plain
    re-inference) serves as the baseline.
    """
    all_points = np.stack([layout[u] for u in sorted(layout)])
    if k_max == 0:
        return SimilarityReport({}, [], max_pairwise_distance(all_points), 0.0, {}, True, True, 0)

    t0 = time.perf_counter()
    rng = np.random.default_rng(seed)
    eligible = sorted(u for u, weeks in dataset.items() if u in layout and any(w.ranks for w in weeks))
    count = min(n_sources, len(eligible))
    if count < n_sources:
        logger.warning(f"Only {count} eligible source trajectories (asked for {n_sources})")
    sources = sorted(rng.choice(eligible, size=count, replace=False).tolist())

    samples: list[tuple[int, str, float]] = []
    per_k: dict[int, dict[str, float]] = {}
    baseline: dict[str, float] = {}
    for k in range(0, k_max + 1):
        weeks = [w for u in sources for w in perturbed_weeks(dataset[u], k)]
        if not weeks:
            logger.warning(f"k={k}: no perturbable weekly trajectory")
            continue
        users, centroids = embed_weekly_users(model, patterns, weeks, epochs=epochs, seed=seed)
        if not users:
            continue
        points = reducer.transform(centroids)
        distances = np.array([np.linalg.norm(points[i] - layout[u]) for i, u in enumerate(users)])
        if k == 0:
            baseline = _summary(distances)
            continue
        per_k[k] = _summary(distances)
        samples.extend((k, u, float(d)) for u, d in zip(users, distances))

    global_max = max_pairwise_distance(all_points)
    n = len(all_points)
    a = rng.integers(0, n, size=1000)
    b = rng.integers(0, n, size=1000)
    distinct = a != b
    random_pairs = np.linalg.norm(all_points[a[distinct]] - all_points[b[distinct]], axis=1)
    random_p10 = float(np.percentile(random_pairs, 10)) if random_pairs.size else 0.0

    medians = [per_k[k]["median"] for k in sorted(per_k)]
    monotonic = all(m2 >= m1 for m1, m2 in zip(medians, medians[1:]))
    all_below = all(d < global_max for _, _, d in samples)
    logger.info(
        f"Similarity experiment: {len(sources)} sources, k=1..{k_max}, medians={medians}, "
        f"monotonic={monotonic} ({round((time.perf_counter() - t0) * 1000, 1)}ms)"
    )
    return SimilarityReport(per_k, samples, global_max, random_p10, baseline, monotonic, all_below, len(sources))
