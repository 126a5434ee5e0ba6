"""Shared fixtures: tiny synthetic corpora, small model configs, temporary run directories."""

from __future__ import annotations

from pathlib import Path

import numpy as np
import pytest

from app.mobility.config import (
    EvaluationConfig,
    MiningParams,
    PipelineConfig,
    ReductionConfig,
    SynthConfig,
    TrainingConfig,
)
from app.mobility.pipeline import MobilityPipeline
from app.mobility.trajectories import CdrEvent, CdrTrajectory, SymbolicLocation

MINUTE = 60
HOUR = 3600
# Monday 2012-03-05 00:00 UTC
MONDAY = 1330905600


def make_trajectory(user: str, events: list[tuple[int, str]]) -> CdrTrajectory:
    return CdrTrajectory(user, tuple(CdrEvent(user, ts, SymbolicLocation(loc)) for ts, loc in events))


def stay(location: str, start: int, count: int, step: int = 10 * MINUTE) -> list[tuple[int, str]]:
    """`count` events at one location, `step` seconds apart."""
    return [(start + i * step, location) for i in range(count)]


@pytest.fixture
def tiny_synth() -> SynthConfig:
    return SynthConfig(n_users=24, n_weeks=3, n_locations=30, events_per_day=16.0, noise_rate=0.05, seed=7)


@pytest.fixture
def small_training() -> TrainingConfig:
    return TrainingConfig(dim=16, epochs=5, batch_size=256, seed=3)


def small_config(run_dir: Path) -> PipelineConfig:
    """A full pipeline config small enough to run every stage in seconds."""
    return PipelineConfig(
        run_dir=run_dir,
        synth=SynthConfig(n_users=24, n_weeks=3, n_locations=30, events_per_day=16.0, noise_rate=0.05, seed=7),
        mining=MiningParams(min_support=0.1, gap=2, max_pattern_length=4),
        training=TrainingConfig(dim=16, epochs=5, batch_size=256, seed=3),
        reduction=ReductionConfig(n_neighbors=5, epochs=40, transform_epochs=10, seed=3),
        evaluation=EvaluationConfig(sample=20, n_sources=8, k_max=2, weekly_cluster_users=10, seed=3),
    )


@pytest.fixture
def run_config(tmp_path: Path) -> PipelineConfig:
    return small_config(tmp_path / "run")


@pytest.fixture(scope="session")
def completed_run(tmp_path_factory: pytest.TempPathFactory) -> MobilityPipeline:
    """One small run through every default stage, shared read-only by the tests."""
    pipeline = MobilityPipeline(small_config(tmp_path_factory.mktemp("shared") / "run"))
    pipeline.run()
    return pipeline


@pytest.fixture
def blobs() -> tuple[np.ndarray, np.ndarray]:
    """Three well separated Gaussian blobs in 128 dimensions, 60 points each."""
    rng = np.random.default_rng(0)
    centers = rng.normal(0.0, 10.0, size=(3, 128))
    points = np.concatenate([c + rng.normal(0.0, 1.0, size=(60, 128)) for c in centers])
    labels = np.repeat(np.arange(3), 60)
    return points, labels
