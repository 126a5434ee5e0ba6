from __future__ import annotations

import numpy as np
import pytest
from scipy import sparse

from app.mobility.config import ReductionConfig
from app.mobility.neighbors import knn
from app.mobility.reduction import (
    IdentityReducer,
    PcaReducer,
    UmapReducer,
    find_ab_params,
    fuzzy_graph,
    make_reducer,
    pca_fit_transform,
    reducer_from_state,
    smooth_knn_dist,
    umap_fit,
    umap_transform,
)


def neighbour_sets(points: np.ndarray, k: int) -> np.ndarray:
    return knn(points, k + 1)[1][:, 1:]


@pytest.mark.parametrize("seed", range(20))
def test_pca_matches_eigendecomposition(seed):
    rng = np.random.default_rng(seed)
    n, d = int(rng.integers(30, 121)), int(rng.integers(4, 21))
    points = rng.normal(size=(n, d)) * np.geomspace(4.0, 0.25, d) + rng.normal(size=d)
    reducer, projected = pca_fit_transform(points, 2)
    centered = points - points.mean(axis=0)
    values, vectors = np.linalg.eigh(np.cov(centered, rowvar=False))
    top = vectors[:, np.argsort(values)[::-1][:2]]
    expected = centered @ top
    signs = np.sign((projected * expected).sum(axis=0))
    np.testing.assert_allclose(projected * signs, expected, atol=1e-6)
    np.testing.assert_allclose(reducer.explained_variance_, np.sort(values)[::-1][:2], rtol=1e-6)


def test_pca_components_are_orthonormal_and_variance_non_increasing():
    points = np.random.default_rng(1).normal(size=(60, 10))
    reducer, projected = pca_fit_transform(points, 3)
    np.testing.assert_allclose(reducer.components_ @ reducer.components_.T, np.eye(3), atol=1e-8)
    variances = projected.var(axis=0)
    assert np.all(np.diff(variances) <= 1e-12)


def test_pca_is_exact_on_planar_data():
    rng = np.random.default_rng(2)
    basis = np.linalg.qr(rng.normal(size=(128, 2)))[0]
    points = rng.normal(size=(40, 2)) @ basis.T + 5.0
    reducer, projected = pca_fit_transform(points, 2)
    reconstructed = projected @ reducer.components_ + reducer.mean_
    np.testing.assert_allclose(reconstructed, points, atol=1e-8)


def test_pca_duplicate_points_share_an_image():
    points = np.random.default_rng(3).normal(size=(10, 5))
    points[7] = points[2]
    _, projected = pca_fit_transform(points, 2)
    np.testing.assert_allclose(projected[7], projected[2], atol=1e-12)


def test_pca_needs_enough_points():
    with pytest.raises(ValueError):
        pca_fit_transform(np.zeros((1, 4)), 2)


def test_unfitted_reducers_refuse_to_transform():
    for reducer in (PcaReducer(), UmapReducer(), IdentityReducer()):
        with pytest.raises(RuntimeError):
            reducer.transform(np.zeros((1, 4)))


def test_identity_reducer_passes_points_through():
    points = np.arange(12.0).reshape(3, 4)
    reducer = IdentityReducer()
    np.testing.assert_array_equal(reducer.fit_transform(points), points)
    assert reducer.out_dim == 4


def test_ab_params_for_default_min_dist():
    a, b = find_ab_params(1.0, 0.1)
    assert a == pytest.approx(1.577, abs=0.01)
    assert b == pytest.approx(0.895, abs=0.01)


def test_smooth_knn_dist_hits_the_target_sum():
    dists, _ = knn(np.random.default_rng(4).normal(size=(30, 6)), 8)
    dists[:, 0] = 0.0
    sigmas, rhos = smooth_knn_dist(dists, 8)
    psum = np.exp(-np.maximum(dists[:, 1:] - rhos[:, None], 0.0) / sigmas[:, None]).sum(axis=1)
    np.testing.assert_allclose(psum, np.log2(8), atol=1e-3)
    np.testing.assert_allclose(rhos, dists[:, 1])


def test_fuzzy_graph_is_symmetric_with_weights_in_unit_interval(blobs):
    points, _ = blobs
    graph, _, _ = fuzzy_graph(points, 10)
    dense = graph.toarray()
    np.testing.assert_allclose(dense, dense.T, atol=1e-12)
    assert np.all(graph.data > 0.0) and np.all(graph.data <= 1.0)
    assert np.all(np.diag(dense) == 0.0)
    assert isinstance(graph, sparse.coo_matrix)


def test_umap_separates_blobs(blobs):
    points, labels = blobs
    _, layout = umap_fit(points, ReductionConfig(seed=0))
    assert np.isfinite(layout).all()
    neighbours = neighbour_sets(layout, 10)
    purity = (labels[neighbours] == labels[:, None]).mean(axis=1)
    for blob in range(3):
        assert purity[labels == blob].mean() >= 0.9


def test_umap_preserves_neighbourhoods_of_planar_blobs():
    rng = np.random.default_rng(5)
    parts = []
    for _ in range(3):
        plane = np.linalg.qr(rng.normal(size=(128, 2)))[0]
        parts.append(rng.normal(0.0, 10.0, size=128) + rng.uniform(-1.0, 1.0, size=(60, 2)) @ plane.T)
    points = np.concatenate(parts)
    _, layout = umap_fit(points, ReductionConfig(seed=0))
    high = neighbour_sets(points, 15)
    low = neighbour_sets(layout, 15)
    overlap = np.mean([len(set(h) & set(lo)) / 15 for h, lo in zip(high, low)])
    assert overlap >= 0.4


def test_umap_is_deterministic(blobs):
    points, _ = blobs
    config = ReductionConfig(epochs=50, seed=3)
    np.testing.assert_array_equal(umap_fit(points, config)[1], umap_fit(points, config)[1])


def test_single_blob_layout_is_finite():
    points = np.random.default_rng(6).normal(size=(40, 16))
    _, layout = umap_fit(points, ReductionConfig(epochs=50))
    assert layout.shape == (40, 2)
    assert np.isfinite(layout).all()


def test_umap_needs_more_points_than_neighbours():
    with pytest.raises(ValueError):
        umap_fit(np.zeros((15, 3)), ReductionConfig(n_neighbors=15))


def test_transform_of_training_points_lands_near_their_images(blobs):
    points, _ = blobs
    reducer, layout = umap_fit(points, ReductionConfig(seed=0))
    diameter = np.linalg.norm(layout.max(axis=0) - layout.min(axis=0))
    moved = np.linalg.norm(umap_transform(reducer, points[::10]) - layout[::10], axis=1)
    assert np.all(moved <= 0.1 * diameter)


def test_transform_is_deterministic(blobs):
    points, _ = blobs
    reducer, _ = umap_fit(points, ReductionConfig(epochs=50, seed=1))
    queries = points[:5] + 0.01
    np.testing.assert_array_equal(reducer.transform(queries), reducer.transform(queries))


def test_midpoint_of_close_points_lands_in_their_blob(blobs):
    points, labels = blobs
    reducer, layout = umap_fit(points, ReductionConfig(seed=0))
    a, b = 0, int(neighbour_sets(points, 1)[0, 0])
    image = reducer.transform((points[a] + points[b]) / 2.0)[0]
    nearest = np.argsort(np.linalg.norm(layout - image, axis=1))[:10]
    assert (labels[nearest] == labels[a]).mean() >= 0.9


@pytest.mark.parametrize("kind", ["umap", "pca", "none"])
def test_reducer_state_round_trip(kind, blobs):
    points, _ = blobs
    reducer = make_reducer(ReductionConfig(kind=kind, epochs=20, transform_epochs=5))
    reducer.fit_transform(points)
    params, arrays = reducer.state()
    restored = reducer_from_state(params, arrays)
    assert restored.kind == kind
    np.testing.assert_allclose(restored.transform(points[:3]), reducer.transform(points[:3]))


def test_unknown_reducer_kind_in_state():
    with pytest.raises(ValueError):
        reducer_from_state({"kind": "tsne"}, {})
