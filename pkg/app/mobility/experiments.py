"""Ablation experiments: dataset variants, reducers, dimensions and architectures."""

from __future__ import annotations

import logging
import time
from collections.abc import Mapping, Sequence
from dataclasses import dataclass
from pathlib import Path
from typing import Any

import numpy as np
import pandas as pd
from scipy.spatial.distance import pdist

from .config import PipelineConfig, ReductionConfig, TrainingConfig
from .embedder import Sqn2VecModel, aggregate_users, train_sqn2vec
from .errors import ConfigError
from .evaluation import (
    RankDistribution,
    embed_weekly_users,
    embedding_quality,
    js_distance,
    perturbed_weeks,
    rank_distribution,
    user_rank_distributions,
)
from .generalization import WeekCalendar, rank_map, split_tokens
from .model_store import load_model
from .patterns import PatternVocabulary, mine_patterns
from .pipeline import MobilityPipeline
from .reduction import Reducer, make_reducer
from .storage import write_json
from .trajectories import CdrTrajectory, CorpusStats, RankTrajectory, SummaryTrajectory, WeeklyTrajectory, corpus_stats

logger = logging.getLogger(__name__)

VARIANTS = ("native_rank_weekly", "summary_location_weekly", "summary_rank_weekly", "summary_rank_full")


@dataclass
class Corpus:
    """Integer token sequences keyed by `user/week` ids (week 0 for full trajectories)."""

    name: str
    seq_ids: list[str]
    sequences: list[list[int]]

    @property
    def users(self) -> list[str]:
        return [sid.rsplit("/", 1)[0] for sid in self.seq_ids]

    def stats(self) -> CorpusStats:
        return corpus_stats(self.sequences)


def _weekly_corpus(name: str, per_user: Mapping[str, list[list[int]]]) -> Corpus:
    seq_ids, sequences = [], []
    for user in sorted(per_user):
        for week, tokens in enumerate(per_user[user], start=1):
            if tokens:
                seq_ids.append(f"{user}/{week}")
                sequences.append(tokens)
    return Corpus(name, seq_ids, sequences)


def build_dataset_variants(
    trajectories: Sequence[CdrTrajectory],
    summaries: Sequence[SummaryTrajectory],
    ranks: Sequence[RankTrajectory],
    calendar: WeekCalendar,
) -> dict[str, Corpus]:
    """
    The dataset family compared by the ablations.

    native_rank_weekly treats every raw event as a one-event segment;
    summary_location_weekly keeps location labels (as integer ids) instead of
    ranks; summary_rank_weekly is the default corpus; summary_rank_full keeps
    each user's trajectory unsplit.
    """
    native: dict[str, list[list[int]]] = {}
    for t in trajectories:
        mapping = rank_map(t.locations)
        native[t.user_id] = split_tokens(t.timestamps, [mapping[loc] for loc in t.locations], calendar)

    label_ids = {label: i for i, label in enumerate(sorted({s.location for x in summaries for s in x.segments}))}
    locations: dict[str, list[list[int]]] = {}
    for x in summaries:
        starts = [s.interval.start for s in x.segments]
        locations[x.user_id] = split_tokens(starts, [label_ids[s.location] for s in x.segments], calendar)

    weekly: dict[str, list[list[int]]] = {}
    for r in ranks:
        weekly[r.user_id] = split_tokens([iv.start for iv, _ in r.segments], r.ranks, calendar)

    full = Corpus(
        "summary_rank_full",
        [f"{r.user_id}/0" for r in sorted(ranks, key=lambda r: r.user_id) if r.segments],
        [list(r.ranks) for r in sorted(ranks, key=lambda r: r.user_id) if r.segments],
    )
    variants = {
        "native_rank_weekly": _weekly_corpus("native_rank_weekly", native),
        "summary_location_weekly": _weekly_corpus("summary_location_weekly", locations),
        "summary_rank_weekly": _weekly_corpus("summary_rank_weekly", weekly),
        "summary_rank_full": full,
    }
    for name, corpus in variants.items():
        if not corpus.sequences:
            raise ValueError(f"dataset variant {name} is empty")
    return variants


def train_corpus(corpus: Corpus, config: PipelineConfig, training: TrainingConfig | None = None) -> tuple[Sqn2VecModel, PatternVocabulary]:
    """Mine patterns of a corpus and train its fused sequence vectors."""
    patterns, annotations = mine_patterns(corpus.sequences, config.mining)
    model = train_sqn2vec(
        dict(zip(corpus.seq_ids, corpus.sequences)),
        dict(zip(corpus.seq_ids, annotations)),
        training or config.training,
    )
    return model, patterns


def score_layout(
    users: Sequence[str],
    points: np.ndarray,
    distributions: Mapping[str, RankDistribution],
    config: PipelineConfig,
    distance: str | None = None,
) -> float:
    """Embedding-quality r of a set of user points against the reference distributions."""
    common = sorted(set(users) & set(distributions))
    row = {u: i for i, u in enumerate(users)}
    sample = min(config.evaluation.sample, len(common))
    report = embedding_quality(
        {u: points[row[u]] for u in common},
        {u: distributions[u] for u in common},
        sample,
        distance or config.evaluation.distance,
        config.evaluation.seed,
    )
    return report.pearson_r


def score_corpus(
    corpus: Corpus,
    distributions: Mapping[str, RankDistribution],
    config: PipelineConfig,
    training: TrainingConfig | None = None,
    reduction: ReductionConfig | None = None,
) -> dict[str, Any]:
    """Train, aggregate, reduce and score one corpus."""
    t0 = time.perf_counter()
    model, _ = train_corpus(corpus, config, training)
    train_seconds = time.perf_counter() - t0
    users, centroids = aggregate_users(corpus.users, model.vectors)
    points = make_reducer(reduction or config.reduction).fit_transform(centroids.astype(np.float64))
    r = score_layout(users, points, distributions, config)
    epoch_seconds = [s for sub in model.models.values() for s in sub.epoch_seconds]
    return {
        "r": round(r, 6),
        "train_seconds": round(train_seconds, 3),
        "seconds_per_epoch": round(float(np.mean(epoch_seconds)), 6) if epoch_seconds else None,
    }


def reducer_comparison(
    corpus: Corpus,
    distributions: Mapping[str, RankDistribution],
    config: PipelineConfig,
) -> list[dict[str, Any]]:
    """No reduction (cosine and Euclidean) against PCA and UMAP in two dimensions."""
    model, _ = train_corpus(corpus, config)
    users, centroids = aggregate_users(corpus.users, model.vectors)
    centroids = centroids.astype(np.float64)
    rows = []
    for technique, distance in (("none", "cosine"), ("none", "euclidean"), ("pca", "euclidean"), ("umap", "euclidean")):
        t0 = time.perf_counter()
        reducer = make_reducer(config.reduction.model_copy(update={"kind": technique}))
        points = reducer.fit_transform(centroids)
        seconds = time.perf_counter() - t0
        r = score_layout(users, points, distributions, config, distance)
        rows.append({"technique": technique, "distance": distance, "r": round(r, 6), "seconds": round(seconds, 3)})
        logger.info(f"Reducer {technique}/{distance}: r={r:.4f}")
    return rows


def dimension_sweep(
    corpus: Corpus,
    distributions: Mapping[str, RankDistribution],
    config: PipelineConfig,
    dims: Sequence[int] = (64, 128, 256),
) -> list[dict[str, Any]]:
    rows = []
    for dim in dims:
        result = score_corpus(corpus, distributions, config, config.training.model_copy(update={"dim": dim}))
        rows.append({"dim": dim, "r": result["r"]})
        logger.info(f"Dimension {dim}: r={result['r']:.4f}")
    return rows


def architecture_comparison(
    corpus: Corpus,
    distributions: Mapping[str, RankDistribution],
    config: PipelineConfig,
) -> list[dict[str, Any]]:
    rows = []
    for mode in ("pv-dbow", "pv-dm"):
        result = score_corpus(corpus, distributions, config, config.training.model_copy(update={"mode": mode}))
        rows.append({"mode": mode, "r": result["r"], "seconds_per_epoch": result["seconds_per_epoch"]})
        logger.info(f"Architecture {mode}: r={result['r']:.4f}, {result['seconds_per_epoch']}s/epoch")
    return rows


def rank_vs_location(
    variants: Mapping[str, Corpus],
    distributions: Mapping[str, RankDistribution],
    config: PipelineConfig,
) -> list[dict[str, Any]]:
    rows = []
    for name in ("summary_location_weekly", "summary_rank_weekly"):
        result = score_corpus(variants[name], distributions, config)
        rows.append({"corpus": name, "r": result["r"]})
    return rows


def native_vs_summary(
    variants: Mapping[str, Corpus],
    distributions: Mapping[str, RankDistribution],
    config: PipelineConfig,
    dims: Sequence[int] | None = None,
) -> list[dict[str, Any]]:
    rows = []
    for name in ("native_rank_weekly", "summary_rank_weekly"):
        for dim in dims or (config.training.dim,):
            result = score_corpus(variants[name], distributions, config, config.training.model_copy(update={"dim": dim}))
            rows.append({"corpus": name, "dim": dim, "r": result["r"]})
    return rows


def weekly_cluster_check(
    model: Sqn2VecModel,
    reducer: Reducer,
    n_users: int = 50,
    seed: int = 42,
) -> dict[str, float]:
    """
    Mean intra-user vs inter-user 2D distance of weekly embeddings.

    Weekly vectors of sampled users with at least two weeks are placed with
    the fitted reducer's transform.
    """
    rows: dict[str, list[int]] = {}
    for i, sid in enumerate(model.seq_ids):
        rows.setdefault(sid.rsplit("/", 1)[0], []).append(i)
    eligible = sorted(u for u, idx in rows.items() if len(idx) >= 2)
    if len(eligible) < 2:
        raise ValueError("weekly_cluster_check needs two users with at least two weeks")
    rng = np.random.default_rng(seed)
    chosen = sorted(rng.choice(eligible, size=min(n_users, len(eligible)), replace=False).tolist())

    index = [i for u in chosen for i in rows[u]]
    owners = np.array([u for u in chosen for _ in rows[u]])
    points = reducer.transform(model.vectors[index].astype(np.float64))
    distances = pdist(points)
    i, j = np.triu_indices(len(index), k=1)
    same = owners[i] == owners[j]
    intra, inter = float(distances[same].mean()), float(distances[~same].mean())
    logger.info(f"Weekly clusters over {len(chosen)} users: intra={intra:.4f}, inter={inter:.4f}")
    return {"users": len(chosen), "weeks": len(index), "intra_mean": round(intra, 6), "inter_mean": round(inter, 6)}


def summary_fidelity(
    trajectories: Sequence[CdrTrajectory],
    summaries: Sequence[SummaryTrajectory],
) -> dict[str, Any]:
    """
    Per-user JS distance between the location-rank distribution of the raw
    events and that of the summary segments.
    """
    by_user = {s.user_id: s for s in summaries}
    values = []
    for t in trajectories:
        summary = by_user.get(t.user_id)
        if summary is None or not summary.segments:
            continue
        raw = rank_map(t.locations)
        seg = rank_map(summary.labels)
        values.append(
            js_distance(
                rank_distribution([raw[loc] for loc in t.locations]),
                rank_distribution([seg[label] for label in summary.labels]),
            )
        )
    if not values:
        raise ValueError("summary_fidelity needs at least one summarized user")
    q = np.percentile(values, [0, 25, 50, 75, 100])
    return {
        "users": len(values),
        "min": round(float(q[0]), 6),
        "q1": round(float(q[1]), 6),
        "median": round(float(q[2]), 6),
        "q3": round(float(q[3]), 6),
        "max": round(float(q[4]), 6),
    }


def similar_points_export(
    user_id: str,
    model: Sqn2VecModel,
    reducer: Reducer,
    patterns: PatternVocabulary,
    weeks: Sequence[WeeklyTrajectory],
    source_point: np.ndarray,
    k_max: int = 5,
    epochs: int | None = None,
    seed: int | None = None,
) -> pd.DataFrame:
    """The source point (k=0) and its k-perturbed placements for plotting."""
    rows = [{"user_id": user_id, "k": 0, "x": float(source_point[0]), "y": float(source_point[1])}]
    for k in range(1, k_max + 1):
        perturbed = perturbed_weeks(weeks, k)
        users, centroids = embed_weekly_users(model, patterns, perturbed, epochs=epochs, seed=seed)
        if not users:
            continue
        point = reducer.transform(centroids)[0]
        rows.append({"user_id": user_id, "k": k, "x": float(point[0]), "y": float(point[1])})
    return pd.DataFrame(rows, columns=["user_id", "k", "x", "y"])


EXPERIMENTS = (
    "datasets",
    "reducers",
    "dimensions",
    "architectures",
    "rank-vs-location",
    "native-vs-summary",
    "weekly-clusters",
    "summary-fidelity",
    "similar-points",
)


def run_experiments(pipeline: MobilityPipeline, names: Sequence[str] | None = None) -> dict[str, Path]:
    """
    Run ablations over the artifacts of a pipeline run and write one JSON per table.

    Args:
        pipeline: A MobilityPipeline whose stages up to `reduce` have run.
        names: Subset of EXPERIMENTS; all by default.

    Returns:
        Experiment name -> report path.
    """
    names = list(names or EXPERIMENTS)
    unknown = sorted(set(names) - set(EXPERIMENTS))
    if unknown:
        raise ConfigError(f"unknown experiments {unknown}; expected some of {', '.join(EXPERIMENTS)}")
    for upstream in ("ingest", "summarize", "rank", "split", "reduce"):
        pipeline.upstream_digest("experiments", upstream)

    config = pipeline.config
    out_dir = pipeline.settings.experiments_dir
    out_dir.mkdir(parents=True, exist_ok=True)

    trajectories = pipeline.load_trajectories()
    summaries = pipeline.load_summaries()
    variants = build_dataset_variants(trajectories, summaries, pipeline.load_ranks(), pipeline.load_calendar())
    weekly = pipeline.load_weekly()
    distributions = user_rank_distributions(weekly)
    default = variants["summary_rank_weekly"]
    bundle = load_model(pipeline.settings.reduce_dir / "model.bin")

    paths: dict[str, Path] = {}

    def emit(name: str, payload: Any) -> None:
        path = out_dir / f"{name}.json"
        write_json(path, {**pipeline.report_header(), "experiment": name, "result": payload})
        paths[name] = path
        logger.info(f"Experiment {name} -> {path}")

    for name in names:
        t0 = time.perf_counter()
        if name == "datasets":
            emit(name, {k: v.stats().to_dict() for k, v in variants.items()})
        elif name == "reducers":
            emit(name, reducer_comparison(default, distributions, config))
        elif name == "dimensions":
            emit(name, dimension_sweep(default, distributions, config))
        elif name == "architectures":
            emit(name, architecture_comparison(default, distributions, config))
        elif name == "rank-vs-location":
            emit(name, rank_vs_location(variants, distributions, config))
        elif name == "native-vs-summary":
            emit(name, native_vs_summary(variants, distributions, config))
        elif name == "weekly-clusters":
            if bundle.reducer is None:
                raise ConfigError("weekly-clusters needs a fitted reducer")
            emit(
                name,
                weekly_cluster_check(
                    bundle.model, bundle.reducer, config.evaluation.weekly_cluster_users, config.evaluation.seed
                ),
            )
        elif name == "summary-fidelity":
            emit(name, summary_fidelity(trajectories, summaries))
        elif name == "similar-points":
            layout = pipeline.load_layout()
            weeks_of: dict[str, list[WeeklyTrajectory]] = {}
            for w in weekly:
                weeks_of.setdefault(w.user_id, []).append(w)
            if bundle.reducer is None:
                raise ConfigError("similar-points needs a fitted reducer")
            # The user with the most distinct ranks shows every perturbation level.
            source = min(
                (u for u in layout if u in weeks_of),
                key=lambda u: (-len({r for w in weeks_of[u] for r in w.ranks}), u),
            )
            frame = similar_points_export(
                source,
                bundle.model,
                bundle.reducer,
                bundle.patterns or PatternVocabulary([], 0),
                weeks_of[source],
                layout[source],
                config.evaluation.k_max,
                config.training.infer_epochs,
                config.training.seed,
            )
            csv_path = out_dir / "similar_points.csv"
            frame.to_csv(csv_path, index=False, float_format="%.8f", lineterminator="\n")
            emit(name, {"source": source, "points": len(frame), "csv": csv_path.name})
        logger.info(f"Experiment {name} took {round((time.perf_counter() - t0) * 1000, 1)}ms")
    return paths
