"""Run settings and validated parameter groups for every pipeline stage."""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass, field
from datetime import date
from pathlib import Path
from typing import Any, Literal

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from .errors import ConfigError

CDR_FIELDS = ("user_id", "timestamp", "location")


def _default_base() -> Path:
    return Path(os.getenv("MOBEMB_RUN_DIR", "data/runs/default"))


@dataclass(frozen=True)
class Settings:
    base_dir: Path = field(default_factory=_default_base)

    def stage_dir(self, stage: str) -> Path:
        return self.base_dir / stage

    @property
    def synth_dir(self) -> Path:
        return self.stage_dir("synth")

    @property
    def ingest_dir(self) -> Path:
        return self.stage_dir("ingest")

    @property
    def summary_dir(self) -> Path:
        return self.stage_dir("summarize")

    @property
    def rank_dir(self) -> Path:
        return self.stage_dir("rank")

    @property
    def weekly_dir(self) -> Path:
        return self.stage_dir("split")

    @property
    def patterns_dir(self) -> Path:
        return self.stage_dir("mine")

    @property
    def model_dir(self) -> Path:
        return self.stage_dir("train")

    @property
    def aggregate_dir(self) -> Path:
        return self.stage_dir("aggregate")

    @property
    def reduce_dir(self) -> Path:
        return self.stage_dir("reduce")

    @property
    def reports_dir(self) -> Path:
        return self.stage_dir("evaluate")

    @property
    def perturb_dir(self) -> Path:
        return self.stage_dir("perturb-experiment")

    @property
    def infer_dir(self) -> Path:
        return self.stage_dir("infer")

    @property
    def experiments_dir(self) -> Path:
        return self.stage_dir("experiments")


class _Group(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class ParseOptions(_Group):
    """Layout of the CDR text input."""

    delimiter: str = Field(default=",", min_length=1, max_length=1)
    field_order: tuple[str, str, str] = CDR_FIELDS
    header: bool = False
    timezone: str = "UTC"
    period_start: date | None = None
    period_end: date | None = None

    @field_validator("field_order", mode="before")
    @classmethod
    def _split_field_order(cls, value: Any) -> Any:
        if isinstance(value, str):
            return tuple(part.strip() for part in value.split(","))
        return value

    @field_validator("field_order")
    @classmethod
    def _check_field_order(cls, value: tuple[str, str, str]) -> tuple[str, str, str]:
        if sorted(value) != sorted(CDR_FIELDS):
            raise ValueError(f"field_order must be a permutation of {CDR_FIELDS}, got {value}")
        return value

    @model_validator(mode="after")
    def _check_period(self) -> ParseOptions:
        if self.period_start and self.period_end and self.period_start >= self.period_end:
            raise ValueError("period_start must precede period_end")
        return self


class SeqScanParams(_Group):
    """Relevance model of the symbolic segmentation (N and the presence threshold)."""

    min_count: int = Field(default=4, ge=1)
    delta_presence: float = Field(default=15 * 60.0, ge=0.0)


class MiningParams(_Group):
    """Support threshold, index gap and maximal length of the mined patterns."""

    min_support: float = Field(default=0.05, gt=0.0, le=1.0)
    gap: int = Field(default=4, ge=0)
    max_pattern_length: int = Field(default=8, ge=1)


class TrainingConfig(_Group):
    """Paragraph-vector training knobs."""

    dim: int = Field(default=128, ge=1)
    epochs: int = Field(default=50, ge=1)
    initial_lr: float = Field(default=0.025, gt=0.0)
    final_lr: float = Field(default=1e-4, ge=0.0)
    negatives: int = Field(default=5, ge=1)
    noise_exponent: float = 0.75
    window: int = Field(default=5, ge=1)
    seed: int = 42
    mode: Literal["pv-dbow", "pv-dm"] = "pv-dbow"
    fusion: Literal["sep", "sim"] = "sep"
    batch_size: int = Field(default=512, ge=1)
    infer_epochs: int | None = Field(default=None, ge=1)
    threads: int = Field(default=1, ge=1)

    @model_validator(mode="after")
    def _check_schedule(self) -> TrainingConfig:
        if not self.initial_lr > self.final_lr:
            raise ValueError("initial_lr must be greater than final_lr")
        return self


class ReductionConfig(_Group):
    """2D reduction of the trajectory embeddings."""

    kind: Literal["umap", "pca", "none"] = "umap"
    out_dim: int = Field(default=2, ge=1)
    n_neighbors: int = Field(default=15, ge=2)
    min_dist: float = Field(default=0.1, ge=0.0)
    spread: float = Field(default=1.0, gt=0.0)
    epochs: int = Field(default=200, ge=1)
    learning_rate: float = Field(default=1.0, gt=0.0)
    negative_sample_rate: int = Field(default=5, ge=1)
    transform_epochs: int = Field(default=30, ge=0)
    seed: int = 42

    @model_validator(mode="after")
    def _check_dist(self) -> ReductionConfig:
        if self.min_dist > self.spread:
            raise ValueError("min_dist must not exceed spread")
        return self


class EvaluationConfig(_Group):
    """Coherence metric and perturbation experiment settings."""

    sample: int = Field(default=800, ge=2)
    distance: Literal["euclidean", "cosine"] = "euclidean"
    n_sources: int = Field(default=1000, ge=1)
    k_max: int = Field(default=5, ge=0)
    weekly_cluster_users: int = Field(default=50, ge=2)
    seed: int = 42


class SynthConfig(_Group):
    """Synthetic CDR corpus with commuter, homebody and roamer archetypes."""

    n_users: int = Field(default=500, ge=1)
    n_weeks: int = Field(default=10, ge=1)
    n_locations: int = Field(default=250, ge=3)
    events_per_day: float = Field(default=20.0, gt=0.0)
    commuter_share: float = Field(default=0.5, ge=0.0, le=1.0)
    homebody_share: float = Field(default=0.2, ge=0.0, le=1.0)
    roamer_share: float = Field(default=0.3, ge=0.0, le=1.0)
    noise_rate: float = Field(default=0.1, ge=0.0, le=1.0)
    zipf_exponent: float = Field(default=1.2, gt=0.0)
    start_date: date = date(2012, 3, 5)
    timezone: str = "UTC"
    seed: int = 42

    @model_validator(mode="after")
    def _check_mix(self) -> SynthConfig:
        total = self.commuter_share + self.homebody_share + self.roamer_share
        if abs(total - 1.0) > 1e-9:
            raise ValueError(f"archetype shares must sum to 1, got {total}")
        return self

    @property
    def archetype_mix(self) -> dict[str, float]:
        return {
            "commuter": self.commuter_share,
            "homebody": self.homebody_share,
            "roamer": self.roamer_share,
        }


_SEEDED_GROUPS = ("training", "reduction", "evaluation", "synth")


# Where a run lives; `training.threads` still carries the thread count into training.
RUN_LOCAL_FIELDS = {"run_dir", "threads"}


class PipelineConfig(_Group):
    """Every parameter group plus paths and the global seed."""

    seed: int = 42
    threads: int = Field(default=1, ge=1)
    run_dir: Path = Field(default_factory=_default_base)
    cdr_path: Path | None = None
    infer_path: Path | None = None

    parse: ParseOptions = Field(default_factory=ParseOptions)
    seqscan: SeqScanParams = Field(default_factory=SeqScanParams)
    mining: MiningParams = Field(default_factory=MiningParams)
    training: TrainingConfig = Field(default_factory=TrainingConfig)
    reduction: ReductionConfig = Field(default_factory=ReductionConfig)
    evaluation: EvaluationConfig = Field(default_factory=EvaluationConfig)
    synth: SynthConfig = Field(default_factory=SynthConfig)

    @model_validator(mode="before")
    @classmethod
    def _propagate_globals(cls, data: Any) -> Any:
        # Group seeds and thread counts default to the global values.
        if not isinstance(data, dict):
            return data
        data = dict(data)
        seed = data.get("seed", 42)
        for group in _SEEDED_GROUPS:
            values = data.get(group)
            if values is None or isinstance(values, dict):
                values = dict(values or {})
                values.setdefault("seed", seed)
                data[group] = values
        training = data.get("training")
        if isinstance(training, dict) and "threads" in data:
            training.setdefault("threads", data["threads"])
        return data

    @property
    def settings(self) -> Settings:
        return Settings(base_dir=self.run_dir)

    def result_dump(self) -> dict[str, Any]:
        """JSON dump without the run location and top-level thread count, which never change results."""
        return self.model_dump(mode="json", exclude=RUN_LOCAL_FIELDS)

    def config_hash(self, groups: tuple[str, ...] | None = None) -> str:
        """SHA-256 of the canonical JSON dump, optionally limited to some groups."""
        payload = self.result_dump()
        if groups is not None:
            payload = {name: payload[name] for name in groups}
        canonical = json.dumps(payload, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def parse_flat_config(text: str) -> dict[str, Any]:
    """Parse `group.key = value` lines into a nested dict of raw strings."""
    nested: dict[str, Any] = {}
    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"config line {line_no}: expected 'key = value', got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if not key:
            raise ConfigError(f"config line {line_no}: empty key")
        if "." in key:
            group, name = key.split(".", 1)
            nested.setdefault(group, {})[name] = value
        else:
            nested[key] = value
    return nested


def merge_overrides(base: dict[str, Any], overrides: dict[str, Any]) -> dict[str, Any]:
    """Overlay dotted-key overrides (e.g. from CLI flags) onto a nested dict."""
    merged = {key: dict(value) if isinstance(value, dict) else value for key, value in base.items()}
    for key, value in overrides.items():
        if value is None:
            continue
        if "." in key:
            group, name = key.split(".", 1)
            merged.setdefault(group, {})[name] = value
        else:
            merged[key] = value
    return merged


def build_config(data: dict[str, Any]) -> PipelineConfig:
    try:
        return PipelineConfig.model_validate(data)
    except ValidationError as e:
        raise ConfigError(f"invalid configuration: {e}") from e


def load_config(path: Path | None = None, overrides: dict[str, Any] | None = None) -> PipelineConfig:
    """Load a flat key-value config file, apply overrides, validate."""
    data: dict[str, Any] = {}
    if path is not None:
        if not path.exists():
            raise ConfigError(f"config file not found: {path}")
        data = parse_flat_config(path.read_text(encoding="utf-8"))
    return build_config(merge_overrides(data, overrides or {}))


def dump_flat_config(config: PipelineConfig) -> str:
    """Render a config back into the flat key-value format."""
    lines = []
    for key, value in config.model_dump(mode="json").items():
        if isinstance(value, dict):
            for name, inner in value.items():
                if inner is None:
                    continue
                if isinstance(inner, list):
                    inner = ",".join(str(v) for v in inner)
                lines.append(f"{key}.{name} = {inner}")
        elif value is not None:
            lines.append(f"{key} = {value}")
    return "\n".join(lines) + "\n"
