from __future__ import annotations

import struct
from pathlib import Path

import numpy as np
import pytest

from app.mobility.config import MiningParams, ReductionConfig, TrainingConfig
from app.mobility.embedder import train_sqn2vec
from app.mobility.errors import DataError, ModelFormatError, ModelVersionError, TruncatedModelError
from app.mobility.model_store import MAGIC, load_model, save_model
from app.mobility.patterns import mine_patterns
from app.mobility.reduction import PcaReducer, UmapReducer


@pytest.fixture
def trained(request):
    fusion, mode = request.param if hasattr(request, "param") else ("sep", "pv-dbow")
    rng = np.random.default_rng(0)
    corpus = {f"U{i:05d}/1": [int(r) for r in rng.integers(1, 6, size=15)] for i in range(20)}
    vocabulary, annotations = mine_patterns(list(corpus.values()), MiningParams(min_support=0.3, gap=1, max_pattern_length=3))
    patterns = dict(zip(corpus, annotations))
    config = TrainingConfig(dim=8, epochs=3, seed=1, fusion=fusion, mode=mode)
    return train_sqn2vec(corpus, patterns, config), vocabulary


def assert_same_model(a, b):
    assert a.fusion == b.fusion
    assert a.seq_ids == b.seq_ids
    assert set(a.models) == set(b.models)
    for name in a.models:
        x, y = a.models[name], b.models[name]
        assert x.config == y.config
        assert x.vocabulary.tokens == y.vocabulary.tokens
        np.testing.assert_array_equal(x.sequence_vectors, y.sequence_vectors)
        np.testing.assert_array_equal(x.output_vectors, y.output_vectors)
        if x.input_vectors is None:
            assert y.input_vectors is None
        else:
            np.testing.assert_array_equal(x.input_vectors, y.input_vectors)


@pytest.mark.parametrize("trained", [("sep", "pv-dbow"), ("sep", "pv-dm"), ("sim", "pv-dbow")], indirect=True)
def test_round_trip_keeps_every_table(tmp_path: Path, trained):
    model, vocabulary = trained
    path = tmp_path / "model.bin"
    save_model(path, model, vocabulary, extra={"users": ["U00000"]})
    bundle = load_model(path)
    assert_same_model(model, bundle.model)
    assert bundle.patterns.patterns == vocabulary.patterns
    assert bundle.patterns.gap == vocabulary.gap
    assert bundle.reducer is None
    assert bundle.extra == {"users": ["U00000"]}


def test_round_trip_with_reducers(tmp_path: Path, trained):
    model, vocabulary = trained
    vectors = model.vectors
    for reducer in (PcaReducer(2), UmapReducer(ReductionConfig(n_neighbors=5, epochs=20, transform_epochs=5))):
        reducer.fit_transform(vectors)
        path = tmp_path / f"{reducer.kind}.bin"
        save_model(path, model, vocabulary, reducer)
        restored = load_model(path).reducer
        assert restored.kind == reducer.kind
        np.testing.assert_allclose(restored.transform(vectors[:4]), reducer.transform(vectors[:4]))


def test_loaded_model_infers_like_the_original(tmp_path: Path, trained):
    model, vocabulary = trained
    save_model(tmp_path / "model.bin", model, vocabulary)
    loaded = load_model(tmp_path / "model.bin").model
    a = model.infer([[1, 2, 3]], [[0]], epochs=2, seed=4)
    b = loaded.infer([[1, 2, 3]], [[0]], epochs=2, seed=4)
    np.testing.assert_allclose(a, b)


def test_bad_magic(tmp_path: Path):
    path = tmp_path / "model.bin"
    path.write_bytes(b"NOTAMODEL" + bytes(20))
    with pytest.raises(ModelVersionError) as info:
        load_model(path)
    assert info.value.code == "model-version"
    assert isinstance(info.value, DataError)


def test_unknown_version(tmp_path: Path, trained):
    model, _ = trained
    path = tmp_path / "model.bin"
    save_model(path, model)
    data = bytearray(path.read_bytes())
    struct.pack_into("<H", data, len(MAGIC), 99)
    path.write_bytes(bytes(data))
    with pytest.raises(ModelVersionError, match="version 99"):
        load_model(path)


@pytest.mark.parametrize("keep", [4, 20, -1])
def test_truncated_container(tmp_path: Path, trained, keep):
    model, vocabulary = trained
    path = tmp_path / "model.bin"
    save_model(path, model, vocabulary)
    data = path.read_bytes()
    path.write_bytes(data[:keep])
    with pytest.raises(TruncatedModelError) as info:
        load_model(path)
    assert info.value.code == "model-truncated"


def test_corrupt_header(tmp_path: Path, trained):
    model, _ = trained
    path = tmp_path / "model.bin"
    save_model(path, model)
    data = bytearray(path.read_bytes())
    data[14] = ord("!")
    path.write_bytes(bytes(data))
    with pytest.raises(ModelFormatError, match="unreadable header"):
        load_model(path)
