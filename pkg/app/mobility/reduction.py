"""2D reduction of embeddings: PCA, a UMAP-style manifold layout, or passthrough."""

from __future__ import annotations

import logging
import time
from abc import ABC, abstractmethod
from typing import Any, ClassVar

import numpy as np
from scipy import sparse
from scipy.optimize import curve_fit
from sklearn.decomposition import PCA

from .config import ReductionConfig
from .neighbors import knn

logger = logging.getLogger(__name__)

SMOOTH_K_TOLERANCE = 1e-5
MIN_K_DIST_SCALE = 1e-3
BINARY_SEARCH_STEPS = 64
GRAD_CLIP = 4.0


class Reducer(ABC):
    """Fitted map from embedding space to a low-dimensional layout."""

    kind: ClassVar[str]

    def __init__(self, out_dim: int = 2):
        self.out_dim = out_dim

    @property
    @abstractmethod
    def fitted(self) -> bool: ...

    @abstractmethod
    def fit_transform(self, points: np.ndarray) -> np.ndarray: ...

    @abstractmethod
    def _transform(self, points: np.ndarray) -> np.ndarray: ...

    def transform(self, points: np.ndarray) -> np.ndarray:
        if not self.fitted:
            raise RuntimeError(f"{self.kind} reducer is not fitted. Run reduce first.")
        points = np.asarray(points, dtype=np.float64)
        if points.ndim == 1:
            points = points[None, :]
        return self._transform(points)

    @abstractmethod
    def state(self) -> tuple[dict[str, Any], dict[str, np.ndarray]]:
        """JSON-able parameters and named arrays describing the fitted state."""

    @classmethod
    @abstractmethod
    def from_state(cls, params: dict[str, Any], arrays: dict[str, np.ndarray]) -> Reducer: ...


class IdentityReducer(Reducer):
    """No reduction: points keep their full width."""

    kind = "none"

    def __init__(self, out_dim: int = 0):
        super().__init__(out_dim)
        self._fitted = False

    @property
    def fitted(self) -> bool:
        return self._fitted

    def fit_transform(self, points: np.ndarray) -> np.ndarray:
        points = np.asarray(points, dtype=np.float64)
        self.out_dim = points.shape[1]
        self._fitted = True
        return points.copy()

    def _transform(self, points: np.ndarray) -> np.ndarray:
        return points.copy()

    def state(self) -> tuple[dict[str, Any], dict[str, np.ndarray]]:
        return {"kind": self.kind, "out_dim": self.out_dim}, {}

    @classmethod
    def from_state(cls, params: dict[str, Any], arrays: dict[str, np.ndarray]) -> IdentityReducer:
        reducer = cls(int(params["out_dim"]))
        reducer._fitted = True
        return reducer


class PcaReducer(Reducer):
    """Centering plus projection on the leading principal directions."""

    kind = "pca"

    def __init__(self, out_dim: int = 2):
        super().__init__(out_dim)
        self.mean_: np.ndarray | None = None
        self.components_: np.ndarray | None = None
        self.explained_variance_: np.ndarray | None = None

    @property
    def fitted(self) -> bool:
        return self.components_ is not None

    def fit_transform(self, points: np.ndarray) -> np.ndarray:
        points = np.asarray(points, dtype=np.float64)
        if points.ndim != 2 or points.shape[0] < self.out_dim:
            raise ValueError(f"PCA to {self.out_dim} dims needs at least {self.out_dim} points")
        if points.shape[1] < self.out_dim:
            raise ValueError(f"cannot project {points.shape[1]}-dim points onto {self.out_dim} components")
        pca = PCA(n_components=self.out_dim, svd_solver="full")
        pca.fit(points)
        self.mean_ = pca.mean_
        self.components_ = pca.components_
        self.explained_variance_ = pca.explained_variance_
        return self._transform(points)

    def _transform(self, points: np.ndarray) -> np.ndarray:
        return (points - self.mean_) @ self.components_.T

    def state(self) -> tuple[dict[str, Any], dict[str, np.ndarray]]:
        arrays = {
            "mean": self.mean_,
            "components": self.components_,
            "explained_variance": self.explained_variance_,
        }
        return {"kind": self.kind, "out_dim": self.out_dim}, arrays

    @classmethod
    def from_state(cls, params: dict[str, Any], arrays: dict[str, np.ndarray]) -> PcaReducer:
        reducer = cls(int(params["out_dim"]))
        reducer.mean_ = arrays["mean"]
        reducer.components_ = arrays["components"]
        reducer.explained_variance_ = arrays["explained_variance"]
        return reducer


def pca_fit_transform(points: np.ndarray, out_dim: int = 2) -> tuple[PcaReducer, np.ndarray]:
    reducer = PcaReducer(out_dim)
    return reducer, reducer.fit_transform(points)


def find_ab_params(spread: float, min_dist: float) -> tuple[float, float]:
    """Fit a, b of the low-dimensional kernel 1 / (1 + a d^(2b)) to an offset exponential."""

    def curve(x, a, b):
        return 1.0 / (1.0 + a * x ** (2 * b))

    xv = np.linspace(0, spread * 3, 300)
    yv = np.zeros(xv.shape)
    yv[xv < min_dist] = 1.0
    yv[xv >= min_dist] = np.exp(-(xv[xv >= min_dist] - min_dist) / spread)
    params, _ = curve_fit(curve, xv, yv)
    return float(params[0]), float(params[1])


def smooth_knn_dist(
    distances: np.ndarray,
    k: float,
    local_connectivity: float = 1.0,
    bandwidth: float = 1.0,
) -> tuple[np.ndarray, np.ndarray]:
    """
    Per-point bandwidth sigma and offset rho of the fuzzy neighbourhood.

    sigma solves sum_j exp(-max(d_ij - rho_i, 0) / sigma_i) = log2(k) * bandwidth
    over all but the first neighbour column, by a vectorized binary search.

    Args:
        distances: kNN distances of shape (n, k), sorted per row.
        k: Neighbourhood size.
        local_connectivity: Number of neighbours assumed fully connected.
        bandwidth: Target scale.

    Returns:
        (sigmas, rhos), each of shape (n,).
    """
    n = distances.shape[0]
    target = np.log2(k) * bandwidth
    rho = np.zeros(n)
    if local_connectivity > 0:
        index = int(np.floor(local_connectivity))
        interpolation = local_connectivity - index
        for i in range(n):
            non_zero = distances[i][distances[i] > 0.0]
            if non_zero.shape[0] >= local_connectivity:
                if index > 0:
                    rho[i] = non_zero[index - 1]
                    if interpolation > SMOOTH_K_TOLERANCE:
                        rho[i] += interpolation * (non_zero[index] - non_zero[index - 1])
                else:
                    rho[i] = interpolation * non_zero[0]
            elif non_zero.shape[0] > 0:
                rho[i] = np.max(non_zero)

    lo = np.zeros(n)
    hi = np.full(n, np.inf)
    mid = np.ones(n)
    tail = distances[:, 1:] - rho[:, None]
    for _ in range(BINARY_SEARCH_STEPS):
        psum = np.where(tail > 0, np.exp(-np.maximum(tail, 0.0) / mid[:, None]), 1.0).sum(axis=1)
        done = np.abs(psum - target) < SMOOTH_K_TOLERANCE
        if done.all():
            break
        above = (psum > target) & ~done
        below = (psum <= target) & ~done
        hi = np.where(above, mid, hi)
        lo = np.where(below, mid, lo)
        mid = np.where(
            above,
            (lo + hi) / 2.0,
            np.where(below, np.where(np.isinf(hi), mid * 2.0, (lo + hi) / 2.0), mid),
        )

    mean_all = distances.mean()
    mean_row = distances.mean(axis=1)
    floor = np.where(rho > 0.0, MIN_K_DIST_SCALE * mean_row, MIN_K_DIST_SCALE * mean_all)
    return np.maximum(mid, floor), rho


def membership_strengths(
    knn_indices: np.ndarray,
    knn_dists: np.ndarray,
    sigmas: np.ndarray,
    rhos: np.ndarray,
    exclude_self: bool = True,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Directed fuzzy weights exp(-max(d - rho, 0) / sigma) in (0, 1] as COO triplets."""
    n, k = knn_indices.shape
    rows = np.repeat(np.arange(n), k)
    cols = knn_indices.reshape(-1)
    offset = knn_dists - rhos[:, None]
    vals = np.where(offset <= 0.0, 1.0, np.exp(-np.maximum(offset, 0.0) / sigmas[:, None])).reshape(-1)
    keep = cols >= 0
    if exclude_self:
        keep &= cols != rows
    return rows[keep], cols[keep], vals[keep]


def fuzzy_graph(points: np.ndarray, n_neighbors: int) -> tuple[sparse.coo_matrix, np.ndarray, np.ndarray]:
    """Symmetrized fuzzy union P + P^T - P o P^T of the directed kNN memberships."""
    n = points.shape[0]
    dists, idx = knn(points, n_neighbors)
    dists[idx == np.arange(n)[:, None]] = 0.0
    sigmas, rhos = smooth_knn_dist(dists, n_neighbors)
    rows, cols, vals = membership_strengths(idx, dists, sigmas, rhos)
    directed = sparse.coo_matrix((vals, (rows, cols)), shape=(n, n)).tocsr()
    transpose = directed.transpose()
    graph = (directed + transpose - directed.multiply(transpose)).tocoo()
    graph.sum_duplicates()
    return graph, idx, dists


def make_epochs_per_sample(weights: np.ndarray, n_epochs: int) -> np.ndarray:
    result = -1.0 * np.ones(weights.shape[0], dtype=np.float64)
    n_samples = n_epochs * (weights / weights.max())
    result[n_samples > 0] = float(n_epochs) / n_samples[n_samples > 0]
    return result


def _edge_step(
    head_embedding: np.ndarray,
    tail_embedding: np.ndarray,
    h: np.ndarray,
    t: np.ndarray,
    n_neg: np.ndarray,
    a: float,
    b: float,
    alpha: float,
    rng: np.random.Generator,
    move_other: bool,
) -> None:
    """One attractive update per edge, then its negative samples, summed per vertex."""
    diff = head_embedding[h] - tail_embedding[t]
    dist2 = (diff**2).sum(axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        coeff = np.where(
            dist2 > 0.0,
            -2.0 * a * b * np.power(dist2, b - 1.0) / (a * np.power(dist2, b) + 1.0),
            0.0,
        )
    grad = alpha * np.clip(coeff[:, None] * diff, -GRAD_CLIP, GRAD_CLIP)
    delta = np.zeros_like(head_embedding)
    np.add.at(delta, h, grad)
    if move_other:
        np.add.at(delta, t, -grad)
    head_embedding += delta

    if n_neg.sum() == 0:
        return
    neg_head = np.repeat(h, n_neg)
    neg_tail = rng.integers(0, tail_embedding.shape[0], size=neg_head.shape[0])
    if move_other:
        keep = neg_tail != neg_head
        neg_head, neg_tail = neg_head[keep], neg_tail[keep]
    diff = head_embedding[neg_head] - tail_embedding[neg_tail]
    dist2 = (diff**2).sum(axis=1)
    coeff = 2.0 * b / ((0.001 + dist2) * (a * np.power(dist2, b) + 1.0))
    grad = np.where(
        (coeff > 0.0)[:, None],
        np.clip(coeff[:, None] * diff, -GRAD_CLIP, GRAD_CLIP),
        GRAD_CLIP,
    )
    delta = np.zeros_like(head_embedding)
    np.add.at(delta, neg_head, alpha * grad)
    head_embedding += delta


def optimize_layout(
    head_embedding: np.ndarray,
    tail_embedding: np.ndarray,
    head: np.ndarray,
    tail: np.ndarray,
    weights: np.ndarray,
    n_epochs: int,
    a: float,
    b: float,
    rng: np.random.Generator,
    initial_alpha: float = 1.0,
    negative_sample_rate: int = 5,
    move_other: bool = True,
) -> np.ndarray:
    """
    Negative-sampling SGD on the fuzzy cross entropy between graph and layout.

    The edges due in an epoch are shuffled and processed in chunks of about a
    quarter of the head vertices; updates inside a chunk are summed per vertex.
    The learning rate decays linearly to zero. With `move_other` the tail
    embedding must be the head embedding itself.
    """
    chunk = max(1, head_embedding.shape[0] // 4)
    epochs_per_sample = make_epochs_per_sample(weights, n_epochs)
    sampled = epochs_per_sample > 0
    head, tail, epochs_per_sample = head[sampled], tail[sampled], epochs_per_sample[sampled]
    epochs_per_negative = epochs_per_sample / negative_sample_rate
    next_sample = epochs_per_sample.copy()
    next_negative = epochs_per_negative.copy()

    for epoch in range(n_epochs):
        alpha = initial_alpha * (1.0 - epoch / n_epochs)
        active = np.flatnonzero(next_sample <= epoch)
        if active.size == 0:
            continue
        next_sample[active] += epochs_per_sample[active]
        n_neg = np.floor((epoch - next_negative[active]) / epochs_per_negative[active]).astype(np.int64)
        n_neg = np.maximum(n_neg, 0)
        next_negative[active] += n_neg * epochs_per_negative[active]

        order = rng.permutation(active.size)
        for start in range(0, active.size, chunk):
            pick = order[start : start + chunk]
            edges = active[pick]
            _edge_step(
                head_embedding,
                tail_embedding,
                head[edges],
                tail[edges],
                n_neg[pick],
                a,
                b,
                alpha,
                rng,
                move_other,
            )
    return head_embedding


class UmapReducer(Reducer):
    """Fuzzy-graph manifold layout with out-of-sample transform."""

    kind = "umap"

    def __init__(self, config: ReductionConfig | None = None):
        self.config = config or ReductionConfig()
        super().__init__(self.config.out_dim)
        self.a, self.b = find_ab_params(self.config.spread, self.config.min_dist)
        self.train_data_: np.ndarray | None = None
        self.embedding_: np.ndarray | None = None
        self.knn_indices_: np.ndarray | None = None
        self.graph_: sparse.coo_matrix | None = None

    @property
    def fitted(self) -> bool:
        return self.embedding_ is not None

    def fit_transform(self, points: np.ndarray) -> np.ndarray:
        points = np.asarray(points, dtype=np.float64)
        n = points.shape[0]
        k = self.config.n_neighbors
        if k >= n:
            raise ValueError(f"n_neighbors={k} needs more than {k} points, got {n}")

        t0 = time.perf_counter()
        timings = {}
        graph, idx, _ = fuzzy_graph(points, k)
        timings["graph_ms"] = round((time.perf_counter() - t0) * 1000, 1)

        rng = np.random.default_rng(self.config.seed)
        embedding = rng.uniform(-10.0, 10.0, size=(n, self.out_dim))
        layout_graph = graph.copy()
        layout_graph.data[layout_graph.data < layout_graph.data.max() / float(self.config.epochs)] = 0.0
        layout_graph.eliminate_zeros()

        t1 = time.perf_counter()
        embedding = optimize_layout(
            embedding,
            embedding,
            layout_graph.row,
            layout_graph.col,
            layout_graph.data,
            self.config.epochs,
            self.a,
            self.b,
            rng,
            initial_alpha=self.config.learning_rate,
            negative_sample_rate=self.config.negative_sample_rate,
            move_other=True,
        )
        timings["layout_ms"] = round((time.perf_counter() - t1) * 1000, 1)

        self.train_data_ = points
        self.embedding_ = embedding
        self.knn_indices_ = idx
        self.graph_ = graph
        logger.info(f"UMAP layout of {n} points, {graph.nnz} edges | timings: {timings}")
        return embedding.copy()

    def _transform(self, points: np.ndarray) -> np.ndarray:
        k = self.config.n_neighbors
        dists, idx = knn(self.train_data_, k, queries=points)
        sigmas, rhos = smooth_knn_dist(dists, k, local_connectivity=0.0)
        _, _, vals = membership_strengths(idx, dists, sigmas, rhos, exclude_self=False)
        weights = vals.reshape(idx.shape)
        norm = weights / weights.sum(axis=1, keepdims=True)
        init = np.einsum("nk,nkd->nd", norm, self.embedding_[idx])
        if self.config.transform_epochs == 0:
            return init

        rows = np.repeat(np.arange(points.shape[0]), k)
        flat = weights.reshape(-1)
        keep = flat >= flat.max() / float(self.config.transform_epochs)
        rng = np.random.default_rng(self.config.seed)
        return optimize_layout(
            init,
            self.embedding_,
            rows[keep],
            idx.reshape(-1)[keep],
            flat[keep],
            self.config.transform_epochs,
            self.a,
            self.b,
            rng,
            initial_alpha=self.config.learning_rate / 4.0,
            negative_sample_rate=self.config.negative_sample_rate,
            move_other=False,
        )

    def state(self) -> tuple[dict[str, Any], dict[str, np.ndarray]]:
        params = {"kind": self.kind, "out_dim": self.out_dim, "config": self.config.model_dump(), "a": self.a, "b": self.b}
        arrays = {
            "train_data": self.train_data_,
            "embedding": self.embedding_,
            "knn_indices": self.knn_indices_.astype(np.int32),
        }
        return params, arrays

    @classmethod
    def from_state(cls, params: dict[str, Any], arrays: dict[str, np.ndarray]) -> UmapReducer:
        reducer = cls(ReductionConfig(**params["config"]))
        reducer.a, reducer.b = float(params["a"]), float(params["b"])
        reducer.train_data_ = arrays["train_data"]
        reducer.embedding_ = arrays["embedding"]
        reducer.knn_indices_ = arrays["knn_indices"].astype(np.int64)
        return reducer


def umap_fit(points: np.ndarray, config: ReductionConfig | None = None) -> tuple[UmapReducer, np.ndarray]:
    reducer = UmapReducer(config)
    return reducer, reducer.fit_transform(points)


def umap_transform(reducer: Reducer, new_points: np.ndarray) -> np.ndarray:
    return reducer.transform(new_points)


_REDUCERS: dict[str, type[Reducer]] = {
    "none": IdentityReducer,
    "pca": PcaReducer,
    "umap": UmapReducer,
}


def make_reducer(config: ReductionConfig) -> Reducer:
    if config.kind == "umap":
        return UmapReducer(config)
    if config.kind == "pca":
        return PcaReducer(config.out_dim)
    return IdentityReducer()


def reducer_from_state(params: dict[str, Any], arrays: dict[str, np.ndarray]) -> Reducer:
    kind = params.get("kind")
    if kind not in _REDUCERS:
        raise ValueError(f"unknown reducer kind {kind!r}")
    return _REDUCERS[kind].from_state(params, arrays)
