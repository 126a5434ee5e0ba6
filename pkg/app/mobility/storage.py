"""Storage utilities for stage artifacts and manifests."""

from __future__ import annotations

import hashlib
import json
from collections.abc import Iterable, Iterator
from dataclasses import asdict, dataclass, field
from datetime import datetime
from pathlib import Path
from typing import Any

from . import __version__
from .config import Settings

MANIFEST_NAME = "manifest.json"


def ensure_dirs(run_settings: Settings) -> None:
    """Create the run directory root."""
    run_settings.base_dir.mkdir(parents=True, exist_ok=True)


def sha256_from_bytes(data: bytes) -> str:
    """Generate full SHA256 hash from raw bytes."""
    return hashlib.sha256(data).hexdigest()


def sha256_file(path: Path, chunk_size: int = 1 << 20) -> str:
    """SHA256 of a file, read in chunks."""
    digest = hashlib.sha256()
    with path.open("rb") as fh:
        while chunk := fh.read(chunk_size):
            digest.update(chunk)
    return digest.hexdigest()


def manifest_path(stage_dir: Path) -> Path:
    """Get the path to the manifest of a stage directory."""
    return stage_dir / MANIFEST_NAME


@dataclass
class StageManifest:
    """Manifest tracking what a stage produced and from which inputs."""

    stage: str
    version: str = __version__
    config_hash: str = ""
    inputs: dict[str, str] = field(default_factory=dict)
    outputs: list[str] = field(default_factory=list)
    created_at: str = field(default_factory=lambda: datetime.now().isoformat())
    timings: dict[str, float] = field(default_factory=dict)

    def matches(self, config_hash: str, inputs: dict[str, str]) -> bool:
        return self.version == __version__ and self.config_hash == config_hash and self.inputs == inputs

    def output_hashes(self, stage_dir: Path) -> dict[str, str]:
        return {name: sha256_file(stage_dir / name) for name in self.outputs}


def load_manifest(stage_dir: Path) -> StageManifest | None:
    """Load the manifest of a stage, or None if not found."""
    path = manifest_path(stage_dir)
    if not path.exists():
        return None
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
        return StageManifest(**data)
    except (json.JSONDecodeError, TypeError):
        return None


def save_manifest(stage_dir: Path, manifest: StageManifest) -> None:
    """Save manifest to disk."""
    path = manifest_path(stage_dir)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(asdict(manifest), indent=2), encoding="utf-8")


def write_json(path: Path, payload: Any) -> None:
    """Write JSON with sorted keys so reruns produce identical bytes."""
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def read_json(path: Path) -> Any:
    return json.loads(path.read_text(encoding="utf-8"))


def write_jsonl(path: Path, records: Iterable[dict[str, Any]]) -> int:
    path.parent.mkdir(parents=True, exist_ok=True)
    count = 0
    with path.open("w", encoding="utf-8") as fh:
        for record in records:
            fh.write(json.dumps(record, separators=(",", ":")) + "\n")
            count += 1
    return count


def read_jsonl(path: Path) -> Iterator[dict[str, Any]]:
    with path.open(encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                yield json.loads(line)


def write_lines(path: Path, lines: Iterable[str]) -> int:
    path.parent.mkdir(parents=True, exist_ok=True)
    count = 0
    with path.open("w", encoding="utf-8") as fh:
        for line in lines:
            fh.write(line + "\n")
            count += 1
    return count


def read_lines(path: Path) -> list[str]:
    return [line for line in path.read_text(encoding="utf-8").split("\n") if line]
