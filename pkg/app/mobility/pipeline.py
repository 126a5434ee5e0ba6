"""Stage orchestration: synthetic data to embeddings, layouts and evaluation reports."""

from __future__ import annotations

import json
import logging
import time
from collections.abc import Callable, Sequence
from pathlib import Path
from typing import Any

import numpy as np
import pandas as pd

from . import __version__
from .config import ParseOptions, PipelineConfig
from .embedder import aggregate_users, train_sqn2vec
from .errors import ConfigError, DataError, MissingUpstreamError
from .evaluation import (
    embed_weekly_users,
    embedding_quality,
    similarity_experiment,
    user_rank_distributions,
)
from .generalization import WeekCalendar, observation_calendar, rank_corpus, split_corpus
from .model_store import ModelBundle, load_model, save_model
from .patterns import PatternVocabulary, mine_patterns, parse_sequence_sets, sequence_set_lines
from .reduction import make_reducer
from .segmentation import segment_corpus
from .storage import (
    StageManifest,
    ensure_dirs,
    load_manifest,
    read_json,
    read_jsonl,
    read_lines,
    save_manifest,
    sha256_file,
    sha256_from_bytes,
    write_json,
    write_jsonl,
    write_lines,
)
from .synthetic import write_synthetic
from .trajectories import (
    CdrTrajectory,
    RankTrajectory,
    SummaryTrajectory,
    WeeklyTrajectory,
    corpus_stats,
    parse_cdr,
    write_cdr,
)

logger = logging.getLogger(__name__)

STAGES = (
    "synth",
    "ingest",
    "summarize",
    "rank",
    "split",
    "mine",
    "train",
    "aggregate",
    "reduce",
    "evaluate",
    "perturb-experiment",
    "infer",
)

# Stages whose outputs a stage reads.
UPSTREAM: dict[str, tuple[str, ...]] = {
    "synth": (),
    "ingest": (),
    "summarize": ("ingest",),
    "rank": ("summarize",),
    "split": ("rank", "ingest"),
    "mine": ("split",),
    "train": ("split", "mine"),
    "aggregate": ("train",),
    "reduce": ("aggregate", "train"),
    "evaluate": ("reduce", "split"),
    "perturb-experiment": ("reduce", "split"),
    "infer": ("reduce",),
}

# Config groups that change a stage's output.
CONFIG_GROUPS: dict[str, tuple[str, ...]] = {
    "synth": ("synth", "parse"),
    "ingest": ("parse",),
    "summarize": ("seqscan",),
    "rank": (),
    "split": (),
    "mine": ("mining",),
    "train": ("training",),
    "aggregate": (),
    "reduce": ("reduction",),
    "evaluate": ("evaluation",),
    "perturb-experiment": ("evaluation", "training"),
    "infer": ("parse", "seqscan", "training"),
}

# Internal artifact format; the user-facing parse options apply to input files only.
_EVENTS_FORMAT = ParseOptions()


def _ms(t0: float) -> float:
    return round((time.perf_counter() - t0) * 1000, 1)


def user_of(seq_id: str) -> str:
    return seq_id.rsplit("/", 1)[0]


def write_layout(path: Path, users: Sequence[str], points: np.ndarray) -> None:
    """Write `user_id,x,y` (or `c0..cN` for other widths) with fixed precision."""
    columns = ["x", "y"] if points.shape[1] == 2 else [f"c{i}" for i in range(points.shape[1])]
    frame = pd.DataFrame(points, columns=columns)
    frame.insert(0, "user_id", list(users))
    path.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(path, index=False, float_format="%.8f", lineterminator="\n")


def read_layout(path: Path) -> dict[str, np.ndarray]:
    frame = pd.read_csv(path, dtype={"user_id": str})
    points = frame.drop(columns=["user_id"]).to_numpy(dtype=np.float64)
    return {user: points[i] for i, user in enumerate(frame["user_id"])}


def infer_users(
    cdr_path: Path,
    bundle: ModelBundle,
    config: PipelineConfig,
) -> tuple[list[str], np.ndarray, dict[str, Any]]:
    """
    Place the users of a new CDR file into a trained layout.

    The file is summarized and ranked like the training data and split with
    its own calendar; weekly vectors are inferred with frozen token tables,
    averaged per user and transformed by the fitted reducer.

    Returns:
        (users, points, stats) for users with at least one usable week.

    Raises:
        DataError: If no weekly trajectory of the file can be embedded.
    """
    timings: dict[str, float] = {}
    t0 = time.perf_counter()
    trajectories = parse_cdr(cdr_path, config.parse)
    if not trajectories:
        raise DataError(f"no CDR records in {cdr_path}")
    summaries = segment_corpus(trajectories, config.seqscan)
    ranks = rank_corpus(summaries)
    try:
        calendar = observation_calendar(trajectories, config.parse.timezone)
    except ValueError as e:
        raise DataError(f"{cdr_path}: {e}") from e
    weekly = [w for w in split_corpus(ranks, calendar) if w.ranks]
    timings["prepare_ms"] = _ms(t0)

    t0 = time.perf_counter()
    users, centroids = embed_weekly_users(
        bundle.model, bundle.patterns or PatternVocabulary([], 0), weekly,
        epochs=config.training.infer_epochs, seed=config.training.seed,
    )
    if not users:
        raise DataError(f"{cdr_path}: no weekly trajectory could be embedded")
    timings["infer_ms"] = _ms(t0)

    t0 = time.perf_counter()
    points = bundle.reducer.transform(centroids) if bundle.reducer is not None else centroids
    timings["transform_ms"] = _ms(t0)

    skipped = sorted({t.user_id for t in trajectories} - set(users))
    if skipped:
        logger.warning(f"{len(skipped)} users of {cdr_path.name} have no usable week and were not placed")
    stats = {
        "users": len(users),
        "skipped_users": len(skipped),
        "weeks": calendar.n_weeks,
        "weekly_trajectories": len(weekly),
        "timings": timings,
    }
    return users, points, stats


class MobilityPipeline:
    """
    Stage-by-stage trajectory embedding pipeline over one run directory.

    Each stage reads its upstream artifacts, writes its own directory and a
    manifest recording the config hash and upstream output hashes. A stage
    whose manifest still matches is skipped.
    """

    def __init__(self, config: PipelineConfig | None = None):
        self.config = config or PipelineConfig()
        self.settings = self.config.settings
        ensure_dirs(self.settings)
        self._handlers: dict[str, Callable[[Path, dict[str, float]], list[str]]] = {
            "synth": self._synth,
            "ingest": self._ingest,
            "summarize": self._summarize,
            "rank": self._rank,
            "split": self._split,
            "mine": self._mine,
            "train": self._train,
            "aggregate": self._aggregate,
            "reduce": self._reduce,
            "evaluate": self._evaluate,
            "perturb-experiment": self._perturb,
            "infer": self._infer,
        }

    def default_chain(self) -> list[str]:
        """Stages of a full run; synthetic data only when no CDR file is configured."""
        chain = list(STAGES[1:-1])
        if self.config.cdr_path is None:
            chain.insert(0, "synth")
        return chain

    def run(self, stages: Sequence[str] | None = None, force: bool = False) -> list[dict[str, Any]]:
        return [self.run_stage(stage, force=force) for stage in (stages or self.default_chain())]

    def run_stage(self, stage: str, force: bool = False) -> dict[str, Any]:
        """
        Run one stage unless its manifest matches the current config and inputs.

        Args:
            stage: One of STAGES.
            force: Rerun even on a manifest hit.

        Returns:
            Dict with stage, skipped flag, outputs and timings.

        Raises:
            ConfigError: Unknown stage or missing input path.
            MissingUpstreamError: An upstream stage has not produced its outputs.
        """
        if stage not in self._handlers:
            raise ConfigError(f"unknown stage {stage!r}; expected one of {', '.join(STAGES)}")
        stage_dir = self.settings.stage_dir(stage)
        inputs = self._inputs(stage)
        config_hash = self.config.config_hash(CONFIG_GROUPS[stage])

        manifest = load_manifest(stage_dir)
        if (
            not force
            and manifest is not None
            and manifest.matches(config_hash, inputs)
            and all((stage_dir / name).exists() for name in manifest.outputs)
        ):
            logger.info(f"Stage {stage} is up to date (manifest hit), skipping")
            return {"stage": stage, "skipped": True, "outputs": manifest.outputs, "timings": {}}

        total_start = time.perf_counter()
        timings: dict[str, float] = {}
        stage_dir.mkdir(parents=True, exist_ok=True)
        outputs = sorted(self._handlers[stage](stage_dir, timings))
        timings["total_ms"] = _ms(total_start)

        save_manifest(
            stage_dir,
            StageManifest(stage=stage, config_hash=config_hash, inputs=inputs, outputs=outputs, timings=timings),
        )
        logger.info(f"Stage {stage} done -> {', '.join(outputs)} | timings: {timings}")
        return {"stage": stage, "skipped": False, "outputs": outputs, "timings": timings}

    # -- inputs -------------------------------------------------------------

    def upstream_digest(self, stage: str, upstream: str) -> str:
        stage_dir = self.settings.stage_dir(upstream)
        manifest = load_manifest(stage_dir)
        if manifest is None or not all((stage_dir / name).exists() for name in manifest.outputs):
            raise MissingUpstreamError(stage, upstream)
        hashes = manifest.output_hashes(stage_dir)
        return sha256_from_bytes(json.dumps(hashes, sort_keys=True).encode("utf-8"))

    def _cdr_source(self) -> Path:
        if self.config.cdr_path is not None:
            if not self.config.cdr_path.exists():
                raise DataError(f"CDR file not found: {self.config.cdr_path}")
            return self.config.cdr_path
        self.upstream_digest("ingest", "synth")
        return self.settings.synth_dir / "cdr.csv"

    def _infer_source(self) -> Path:
        path = self.config.infer_path
        if path is None:
            raise ConfigError("the infer stage needs an input CDR file (infer_path / --input)")
        if not path.exists():
            raise DataError(f"CDR file not found: {path}")
        return path

    def _inputs(self, stage: str) -> dict[str, str]:
        inputs = {upstream: self.upstream_digest(stage, upstream) for upstream in UPSTREAM[stage]}
        if stage == "ingest":
            inputs["cdr"] = sha256_file(self._cdr_source())
        elif stage == "infer":
            inputs["cdr"] = sha256_file(self._infer_source())
        return inputs

    # -- artifact readers ---------------------------------------------------

    def report_header(self) -> dict[str, Any]:
        """Config echo, config hash and tool version embedded in every report."""
        return {
            "tool_version": __version__,
            "config_hash": self.config.config_hash(),
            "config": self.config.result_dump(),
        }

    def load_trajectories(self) -> list[CdrTrajectory]:
        return parse_cdr(self.settings.ingest_dir / "events.csv", _EVENTS_FORMAT)

    def load_calendar(self) -> WeekCalendar:
        return WeekCalendar.from_dict(read_json(self.settings.ingest_dir / "calendar.json"))

    def load_summaries(self) -> list[SummaryTrajectory]:
        return [SummaryTrajectory.from_record(r) for r in read_jsonl(self.settings.summary_dir / "summaries.jsonl")]

    def load_ranks(self) -> list[RankTrajectory]:
        return [RankTrajectory.from_record(r) for r in read_jsonl(self.settings.rank_dir / "ranks.jsonl")]

    def load_weekly(self, non_empty: bool = True) -> list[WeeklyTrajectory]:
        weekly = [WeeklyTrajectory.from_line(line) for line in read_lines(self.settings.weekly_dir / "weekly.txt")]
        return [w for w in weekly if w.ranks] if non_empty else weekly

    def load_patterns(self) -> PatternVocabulary:
        meta = read_json(self.settings.patterns_dir / "meta.json")
        lines = read_lines(self.settings.patterns_dir / "patterns.txt")
        return PatternVocabulary.from_lines(lines, int(meta["gap"]), float(meta["min_support"]))

    def load_layout(self) -> dict[str, np.ndarray]:
        return read_layout(self.settings.reduce_dir / "layout.csv")

    # -- stages -------------------------------------------------------------

    def _synth(self, stage_dir: Path, timings: dict[str, float]) -> list[str]:
        t0 = time.perf_counter()
        n_users, n_events = write_synthetic(
            self.config.synth, stage_dir / "cdr.csv", stage_dir / "labels.csv", self.config.parse
        )
        timings["generate_ms"] = _ms(t0)
        logger.info(f"Wrote synthetic corpus: {n_users} users, {n_events} events")
        return ["cdr.csv", "labels.csv"]

    def _ingest(self, stage_dir: Path, timings: dict[str, float]) -> list[str]:
        source = self._cdr_source()
        t0 = time.perf_counter()
        trajectories = parse_cdr(source, self.config.parse)
        if not trajectories:
            raise DataError(f"no CDR records in {source}")
        timings["parse_ms"] = _ms(t0)

        parse = self.config.parse
        try:
            calendar = observation_calendar(trajectories, parse.timezone, parse.period_start, parse.period_end)
        except ValueError as e:
            raise DataError(f"{source}: {e}") from e

        t0 = time.perf_counter()
        write_cdr(trajectories, stage_dir / "events.csv", _EVENTS_FORMAT)
        write_json(stage_dir / "calendar.json", calendar.to_dict())
        write_json(
            stage_dir / "stats.json",
            {
                "users": len(trajectories),
                "events": sum(len(t) for t in trajectories),
                "weeks": calendar.n_weeks,
                "period_start": pd.Timestamp(calendar.start, unit="s", tz="UTC").tz_convert(parse.timezone).isoformat(),
                "period_end": pd.Timestamp(calendar.end, unit="s", tz="UTC").tz_convert(parse.timezone).isoformat(),
            },
        )
        timings["write_ms"] = _ms(t0)
        return ["events.csv", "calendar.json", "stats.json"]

    def _summarize(self, stage_dir: Path, timings: dict[str, float]) -> list[str]:
        t0 = time.perf_counter()
        trajectories = self.load_trajectories()
        timings["load_ms"] = _ms(t0)

        t0 = time.perf_counter()
        summaries = segment_corpus(trajectories, self.config.seqscan)
        timings["segment_ms"] = _ms(t0)

        write_jsonl(stage_dir / "summaries.jsonl", (s.to_record() for s in summaries))
        write_json(
            stage_dir / "stats.json",
            {
                "trajectories": len(summaries),
                "segments": sum(len(s.segments) for s in summaries),
                "local_noise": sum(s.local_noise_count for s in summaries),
                "transitions": sum(s.transition_count for s in summaries),
                "without_segments": sum(1 for s in summaries if not s.segments),
            },
        )
        return ["summaries.jsonl", "stats.json"]

    def _rank(self, stage_dir: Path, timings: dict[str, float]) -> list[str]:
        t0 = time.perf_counter()
        ranks = rank_corpus(self.load_summaries())
        timings["rank_ms"] = _ms(t0)
        write_jsonl(stage_dir / "ranks.jsonl", (r.to_record() for r in ranks))
        return ["ranks.jsonl"]

    def _split(self, stage_dir: Path, timings: dict[str, float]) -> list[str]:
        t0 = time.perf_counter()
        weekly = split_corpus(self.load_ranks(), self.load_calendar())
        timings["split_ms"] = _ms(t0)
        write_lines(stage_dir / "weekly.txt", (w.to_line() for w in weekly))

        non_empty = [list(w.ranks) for w in weekly if w.ranks]
        if not non_empty:
            raise DataError("every weekly trajectory is empty; check the SeqScan parameters")
        stats = corpus_stats(non_empty).to_dict()
        stats["empty_weeks"] = len(weekly) - len(non_empty)
        write_json(stage_dir / "stats.json", stats)
        return ["weekly.txt", "stats.json"]

    def _mine(self, stage_dir: Path, timings: dict[str, float]) -> list[str]:
        weekly = self.load_weekly()
        t0 = time.perf_counter()
        vocabulary, annotations = mine_patterns([list(w.ranks) for w in weekly], self.config.mining)
        timings["mine_ms"] = _ms(t0)

        write_lines(stage_dir / "patterns.txt", vocabulary.to_lines())
        write_lines(stage_dir / "sequence_sets.txt", sequence_set_lines([w.seq_id for w in weekly], annotations))
        write_json(
            stage_dir / "meta.json",
            {
                "gap": vocabulary.gap,
                "min_support": vocabulary.min_support,
                "max_pattern_length": self.config.mining.max_pattern_length,
                "patterns": len(vocabulary),
                "supports": vocabulary.supports,
            },
        )
        return ["patterns.txt", "sequence_sets.txt", "meta.json"]

    def _train(self, stage_dir: Path, timings: dict[str, float]) -> list[str]:
        weekly = self.load_weekly()
        sets = parse_sequence_sets(read_lines(self.settings.patterns_dir / "sequence_sets.txt"))
        symbol_corpus = {w.seq_id: list(w.ranks) for w in weekly}
        pattern_corpus = {sid: sets.get(sid, []) for sid in symbol_corpus}

        t0 = time.perf_counter()
        model = train_sqn2vec(symbol_corpus, pattern_corpus, self.config.training)
        timings["train_ms"] = _ms(t0)

        save_model(stage_dir / "model.bin", model, self.load_patterns())
        write_json(
            stage_dir / "stats.json",
            {
                "fusion": model.fusion,
                "mode": model.config.mode,
                "sequences": len(model.seq_ids),
                "models": {
                    name: {
                        "tokens": len(sub.vocabulary),
                        "first_loss": round(sub.loss_history[0], 6) if sub.loss_history else None,
                        "final_loss": round(sub.loss_history[-1], 6) if sub.loss_history else None,
                    }
                    for name, sub in model.models.items()
                },
            },
        )
        return ["model.bin", "stats.json"]

    def _aggregate(self, stage_dir: Path, timings: dict[str, float]) -> list[str]:
        bundle = load_model(self.settings.model_dir / "model.bin")
        t0 = time.perf_counter()
        users, centroids = aggregate_users_of(bundle)
        timings["aggregate_ms"] = _ms(t0)
        np.save(stage_dir / "centroids.npy", centroids.astype(np.float32))
        write_lines(stage_dir / "users.txt", users)
        return ["centroids.npy", "users.txt"]

    def _reduce(self, stage_dir: Path, timings: dict[str, float]) -> list[str]:
        users = read_lines(self.settings.aggregate_dir / "users.txt")
        centroids = np.load(self.settings.aggregate_dir / "centroids.npy").astype(np.float64)

        t0 = time.perf_counter()
        reducer = make_reducer(self.config.reduction)
        layout = reducer.fit_transform(centroids)
        timings["fit_ms"] = _ms(t0)

        write_layout(stage_dir / "layout.csv", users, layout)
        bundle = load_model(self.settings.model_dir / "model.bin")
        save_model(stage_dir / "model.bin", bundle.model, bundle.patterns, reducer, extra={"users": len(users)})
        return ["layout.csv", "model.bin"]

    def _evaluate(self, stage_dir: Path, timings: dict[str, float]) -> list[str]:
        layout = self.load_layout()
        distributions = user_rank_distributions(self.load_weekly())
        users = sorted(set(layout) & set(distributions))
        cfg = self.config.evaluation
        sample = min(cfg.sample, len(users))
        if sample < cfg.sample:
            logger.warning(f"Only {len(users)} users available; sampling {sample} instead of {cfg.sample}")

        t0 = time.perf_counter()
        report = embedding_quality(
            {u: layout[u] for u in users}, {u: distributions[u] for u in users}, sample, cfg.distance, cfg.seed
        )
        timings["metric_ms"] = _ms(t0)
        logger.info(f"Embedding quality: r={report.pearson_r:.4f} over {report.n_pairs} pairs")

        write_json(stage_dir / "report.json", {**self.report_header(), "metric": report.to_dict()})
        frame = pd.DataFrame(
            list(report.pair_rows()), columns=["user_a", "user_b", "embedding_distance", "js_distance"]
        )
        frame.to_csv(stage_dir / "pairs.csv", index=False, float_format="%.8f", lineterminator="\n")
        return ["report.json", "pairs.csv"]

    def _perturb(self, stage_dir: Path, timings: dict[str, float]) -> list[str]:
        bundle = load_model(self.settings.reduce_dir / "model.bin")
        if bundle.reducer is None:
            raise DataError("model container of the reduce stage has no reducer")
        dataset: dict[str, list[WeeklyTrajectory]] = {}
        for w in self.load_weekly():
            dataset.setdefault(w.user_id, []).append(w)
        cfg = self.config.evaluation

        t0 = time.perf_counter()
        report = similarity_experiment(
            bundle.model,
            bundle.reducer,
            bundle.patterns or PatternVocabulary([], 0),
            dataset,
            self.load_layout(),
            n_sources=cfg.n_sources,
            k_max=cfg.k_max,
            seed=cfg.seed,
            epochs=self.config.training.infer_epochs,
        )
        timings["experiment_ms"] = _ms(t0)

        write_json(stage_dir / "report.json", {**self.report_header(), "experiment": report.to_dict()})
        frame = pd.DataFrame(report.samples, columns=["k", "user_id", "distance"])
        frame.to_csv(stage_dir / "samples.csv", index=False, float_format="%.8f", lineterminator="\n")
        return ["report.json", "samples.csv"]

    def _infer(self, stage_dir: Path, timings: dict[str, float]) -> list[str]:
        bundle = load_model(self.settings.reduce_dir / "model.bin")
        users, points, stats = infer_users(self._infer_source(), bundle, self.config)
        timings.update(stats.pop("timings"))
        write_layout(stage_dir / "layout.csv", users, points)
        write_json(stage_dir / "stats.json", stats)
        return ["layout.csv", "stats.json"]


def aggregate_users_of(bundle: ModelBundle) -> tuple[list[str], np.ndarray]:
    """Trajectory embeddings: centroid of each user's weekly vectors in a trained model."""
    return aggregate_users([user_of(sid) for sid in bundle.model.seq_ids], bundle.model.vectors)
