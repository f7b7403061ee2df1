"""Spatial distance matrices and neighborhood mask graphs.

The mask graph restricts the distance-alignment loss to spatial
neighborhoods; it can come from symmetrized k-NN or from k-means
co-membership. Neighbor search is brute force, which is exact and fast
enough at a few thousand spots.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateDataError
from .rng import PortableRng


@dataclass(frozen=True)
class MaskGraph:
    """Symmetric, self-loop-free edge set over n spots (pairs stored as i < j)."""

    n: int
    edges: frozenset[tuple[int, int]]

    def __post_init__(self):
        for i, j in self.edges:
            if not (0 <= i < j < self.n):
                raise ValueError(f"bad edge ({i}, {j}) for n={self.n}")

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    def to_matrix(self) -> np.ndarray:
        """Dense symmetric 0/1 float matrix with zero diagonal."""
        m = np.zeros((self.n, self.n))
        if self.edges:
            rows, cols = np.array(sorted(self.edges)).T
            m[rows, cols] = 1.0
            m[cols, rows] = 1.0
        return m

    def degrees(self) -> np.ndarray:
        deg = np.zeros(self.n, dtype=np.int64)
        for i, j in self.edges:
            deg[i] += 1
            deg[j] += 1
        return deg

    def sorted_edges(self) -> list[tuple[int, int]]:
        return sorted(self.edges)


def pairwise_distances(coords: np.ndarray) -> np.ndarray:
    """Euclidean distance matrix of row vectors: symmetric, zero diagonal."""
    coords = np.asarray(coords, dtype=np.float64)
    if not np.all(np.isfinite(coords)):
        raise ValueError("coordinates must be finite")
    if coords.ndim != 2:
        raise ValueError(f"coords must be 2-D, got shape {coords.shape}")
    diff = coords[:, None, :] - coords[None, :, :]
    d = np.sqrt(np.sum(diff * diff, axis=2))
    np.fill_diagonal(d, 0.0)
    return d


def _neighbor_order(dist_row: np.ndarray, self_index: int) -> np.ndarray:
    """Indices sorted by (distance, index), self excluded."""
    order = np.argsort(dist_row, kind="stable")
    return order[order != self_index]


def knn_mask(coords: np.ndarray, k: int) -> MaskGraph:
    """Symmetrized k-nearest-neighbor graph; distance ties go to the lower index."""
    coords = np.asarray(coords, dtype=np.float64)
    n = coords.shape[0]
    if not (1 <= k < n):
        raise ValueError(f"k={k} must satisfy 1 <= k < n={n}")
    d = pairwise_distances(coords)
    edges = set()
    for i in range(n):
        for j in _neighbor_order(d[i], i)[:k]:
            edges.add((min(i, int(j)), max(i, int(j))))
    return MaskGraph(n, frozenset(edges))


def kmeans_mask(coords: np.ndarray, k_clusters: int, seed: int) -> MaskGraph:
    """Connect all spot pairs sharing a Lloyd's-algorithm cluster.

    Seeding picks the first centroid uniformly from the seed, then repeatedly
    takes the point farthest from its nearest chosen centroid. Empty clusters
    are reseeded the same way. Iteration stops after 100 rounds or when the
    centroid shift drops below 1e-6.
    """
    coords = np.asarray(coords, dtype=np.float64)
    n = coords.shape[0]
    if not (1 <= k_clusters <= n):
        raise ValueError(f"k_clusters={k_clusters} must satisfy 1 <= k <= n={n}")
    rng = PortableRng(seed)
    chosen = [rng.choice(n)]
    while len(chosen) < k_clusters:
        d_near = np.min(
            np.linalg.norm(coords[:, None, :] - coords[chosen][None, :, :], axis=2), axis=1
        )
        chosen.append(int(np.argmax(d_near)))
    centroids = coords[chosen].copy()

    labels = np.zeros(n, dtype=np.int64)
    for _ in range(100):
        d_to_c = np.linalg.norm(coords[:, None, :] - centroids[None, :, :], axis=2)
        labels = np.argmin(d_to_c, axis=1)
        new_centroids = centroids.copy()
        for c in range(k_clusters):
            members = labels == c
            if not members.any():
                nearest = np.min(d_to_c, axis=1)
                new_centroids[c] = coords[int(np.argmax(nearest))]
            else:
                new_centroids[c] = coords[members].mean(axis=0)
        shift = float(np.max(np.linalg.norm(new_centroids - centroids, axis=1)))
        centroids = new_centroids
        if shift < 1e-6:
            break

    d_to_c = np.linalg.norm(coords[:, None, :] - centroids[None, :, :], axis=2)
    labels = np.argmin(d_to_c, axis=1)
    edges = set()
    for c in range(k_clusters):
        members = np.flatnonzero(labels == c)
        for a in range(len(members)):
            for b in range(a + 1, len(members)):
                edges.add((int(members[a]), int(members[b])))
    return MaskGraph(n, frozenset(edges))


def offdiagonal_distances(d: np.ndarray) -> np.ndarray:
    """The i < j entries of a symmetric distance matrix as a flat array."""
    n = d.shape[0]
    iu = np.triu_indices(n, k=1)
    values = d[iu]
    if values.size == 0:
        raise DegenerateDataError("need at least two points to form distances")
    return values
