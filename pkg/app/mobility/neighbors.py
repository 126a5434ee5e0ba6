"""Exact FAISS nearest-neighbour index over embedding vectors."""

from __future__ import annotations

import faiss
import numpy as np


class ExactKnnIndex:
    """
    Brute-force Euclidean index (IndexFlatL2); search returns true distances.
    """

    def __init__(self) -> None:
        self.index: faiss.IndexFlatL2 | None = None

    def add(self, vectors: np.ndarray) -> None:
        """
        Add vectors to the index.

        Args:
            vectors: Array of shape (N, dim); converted to contiguous float32.
        """
        vectors = np.ascontiguousarray(vectors, dtype=np.float32)
        if vectors.ndim != 2:
            raise ValueError(f"Expected a 2D array, got shape {vectors.shape}")
        if self.index is None:
            self.index = faiss.IndexFlatL2(vectors.shape[1])
        elif self.index.d != vectors.shape[1]:
            raise ValueError(f"Vector width {vectors.shape[1]} != index width {self.index.d}")
        self.index.add(vectors)

    def search(self, queries: np.ndarray, k: int) -> tuple[np.ndarray, np.ndarray]:
        """
        Find the k nearest indexed vectors of each query.

        Args:
            queries: Array of shape (M, dim).
            k: Number of neighbours.

        Returns:
            (distances, indices), both of shape (M, k), sorted by increasing distance.
        """
        if self.index is None or self.index.ntotal == 0:
            raise RuntimeError("Index is empty. Add vectors first.")
        if k > self.index.ntotal:
            raise ValueError(f"k={k} exceeds the {self.index.ntotal} indexed vectors")
        queries = np.ascontiguousarray(queries, dtype=np.float32)
        sq_dists, idxs = self.index.search(queries, k)
        return np.sqrt(np.maximum(sq_dists, 0.0)).astype(np.float64), idxs.astype(np.int64)


def knn(points: np.ndarray, k: int, queries: np.ndarray | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Exact kNN of `queries` (default: the points themselves, self included) among `points`."""
    index = ExactKnnIndex()
    index.add(points)
    return index.search(points if queries is None else queries, k)
