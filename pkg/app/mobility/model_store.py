"""Versioned binary container for trained embeddings, pattern vocabulary and reducer state."""

from __future__ import annotations

import json
import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from . import __version__
from .config import TrainingConfig
from .embedder import EmbeddingModel, Sqn2VecModel, TokenVocabulary
from .errors import ModelFormatError, ModelVersionError, TruncatedModelError
from .patterns import PatternVocabulary
from .reduction import Reducer, reducer_from_state

logger = logging.getLogger(__name__)

MAGIC = b"MOBEMB\x00\x00"
FORMAT_VERSION = 1
# magic, format version (uint16), header length (uint32), little endian
_PREFIX = struct.Struct("<8sHI")

_VECTOR_TABLES = ("sequence_vectors", "output_vectors", "input_vectors")


@dataclass
class ModelBundle:
    model: Sqn2VecModel
    patterns: PatternVocabulary | None = None
    reducer: Reducer | None = None
    extra: dict[str, Any] = field(default_factory=dict)


def _dtype_for(array: np.ndarray, vector_table: bool) -> str:
    if vector_table:
        return "<f4"
    if np.issubdtype(array.dtype, np.integer):
        return "<i4"
    return "<f8"


def save_model(
    path: Path,
    model: Sqn2VecModel,
    patterns: PatternVocabulary | None = None,
    reducer: Reducer | None = None,
    extra: dict[str, Any] | None = None,
) -> None:
    """
    Write a model container.

    Layout: fixed prefix (magic, format version, header length), a UTF-8
    JSON header describing every table, then the raw little-endian tables.
    Vector tables are 32-bit floats; reducer parameters keep 64-bit floats.
    """
    tables: list[dict[str, Any]] = []
    blobs: list[bytes] = []
    offset = 0

    def add_table(name: str, array: np.ndarray, vector_table: bool) -> None:
        nonlocal offset
        dtype = _dtype_for(array, vector_table)
        raw = np.ascontiguousarray(array, dtype=np.dtype(dtype)).tobytes()
        tables.append({"name": name, "dtype": dtype, "shape": list(array.shape), "offset": offset, "nbytes": len(raw)})
        blobs.append(raw)
        offset += len(raw)

    models_header = {}
    for name, sub in model.models.items():
        models_header[name] = {
            "config": sub.config.model_dump(mode="json"),
            "tokens": sub.vocabulary.tokens,
            "counts": sub.vocabulary.counts,
            "loss_history": sub.loss_history,
            "epoch_seconds": sub.epoch_seconds,
        }
        for table in _VECTOR_TABLES:
            array = getattr(sub, table)
            if array is not None:
                add_table(f"models/{name}/{table}", array, vector_table=True)

    reducer_header = None
    if reducer is not None:
        params, arrays = reducer.state()
        reducer_header = params
        for name, array in arrays.items():
            add_table(f"reducer/{name}", array, vector_table=False)

    header = {
        "tool_version": __version__,
        "fusion": model.fusion,
        "seq_ids": model.seq_ids,
        "models": models_header,
        "patterns": None
        if patterns is None
        else {"gap": patterns.gap, "min_support": patterns.min_support, "lines": patterns.to_lines()},
        "reducer": reducer_header,
        "extra": extra or {},
        "tables": tables,
    }
    header_bytes = json.dumps(header, separators=(",", ":")).encode("utf-8")

    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("wb") as fh:
        fh.write(_PREFIX.pack(MAGIC, FORMAT_VERSION, len(header_bytes)))
        fh.write(header_bytes)
        for blob in blobs:
            fh.write(blob)
    logger.info(f"Saved model container {path} ({len(tables)} tables, {offset} data bytes)")


def _read_header(data: bytes, path: Path) -> tuple[dict[str, Any], int]:
    if len(data) < _PREFIX.size:
        raise TruncatedModelError(f"{path}: file too short for a model header ({len(data)} bytes)")
    magic, version, header_len = _PREFIX.unpack_from(data, 0)
    if magic != MAGIC:
        raise ModelVersionError(f"{path}: not a model container (bad magic {magic!r})")
    if version != FORMAT_VERSION:
        raise ModelVersionError(f"{path}: unsupported format version {version}, expected {FORMAT_VERSION}")
    end = _PREFIX.size + header_len
    if len(data) < end:
        raise TruncatedModelError(f"{path}: header truncated ({len(data)} of {end} bytes)")
    try:
        header = json.loads(data[_PREFIX.size : end].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise ModelFormatError(f"{path}: unreadable header ({e})") from e
    return header, end


def load_model(path: Path) -> ModelBundle:
    """
    Read a model container written by `save_model`.

    Raises:
        ModelVersionError: Bad magic or unknown format version.
        TruncatedModelError: File shorter than its header or tables announce.
        ModelFormatError: Unreadable header.
    """
    data = path.read_bytes()
    header, data_start = _read_header(data, path)

    arrays: dict[str, np.ndarray] = {}
    for table in header["tables"]:
        start = data_start + table["offset"]
        if start + table["nbytes"] > len(data):
            raise TruncatedModelError(f"{path}: table {table['name']} truncated")
        dtype = np.dtype(table["dtype"])
        native = dtype.newbyteorder("=")
        count = table["nbytes"] // dtype.itemsize
        if count == 0:
            arrays[table["name"]] = np.zeros(table["shape"], dtype=native)
            continue
        array = np.frombuffer(data, dtype=dtype, count=count, offset=start).reshape(table["shape"])
        arrays[table["name"]] = array.astype(native, copy=True)

    seq_ids = list(header["seq_ids"])
    models = {}
    for name, meta in header["models"].items():
        prefix = f"models/{name}/"
        models[name] = EmbeddingModel(
            config=TrainingConfig(**meta["config"]),
            seq_ids=seq_ids,
            sequence_vectors=arrays[prefix + "sequence_vectors"],
            vocabulary=TokenVocabulary(list(meta["tokens"]), [int(c) for c in meta["counts"]]),
            output_vectors=arrays[prefix + "output_vectors"],
            input_vectors=arrays.get(prefix + "input_vectors"),
            loss_history=list(meta.get("loss_history", [])),
            epoch_seconds=list(meta.get("epoch_seconds", [])),
        )

    patterns = None
    if header.get("patterns"):
        meta = header["patterns"]
        patterns = PatternVocabulary.from_lines(meta["lines"], int(meta["gap"]), float(meta["min_support"]))

    reducer = None
    if header.get("reducer"):
        reducer_arrays = {name.split("/", 1)[1]: arr for name, arr in arrays.items() if name.startswith("reducer/")}
        reducer = reducer_from_state(header["reducer"], reducer_arrays)

    return ModelBundle(
        model=Sqn2VecModel(header["fusion"], seq_ids, models),
        patterns=patterns,
        reducer=reducer,
        extra=header.get("extra", {}),
    )
