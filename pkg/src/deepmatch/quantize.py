"""Prototype dictionary for approximate matching.

Atomic patch descriptors are 16 stacked unit 9-vectors. Clustering them with
k-means whose centroids are projected back onto that product of spheres after
every update gives prototypes that are valid patch descriptors themselves.
"""

from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, ClusterMixin
from sklearn.utils.validation import check_array, check_is_fitted

from ._validation import check_random_state
from .descriptor import DESCRIPTOR_DIM
from .pyramid import ATOMIC_SIZE, atomic_grid, extract_patches


def project_blocks(X, block=DESCRIPTOR_DIM):
    """Normalize every consecutive ``block``-sized slice of each row to unit length."""
    X = np.asarray(X, dtype=np.float64)
    blocks = X.reshape(len(X), -1, block)
    norms = np.linalg.norm(blocks, axis=2, keepdims=True)
    norms[norms == 0] = 1.0
    return (blocks / norms).reshape(X.shape)


class SphericalKMeans(ClusterMixin, BaseEstimator):
    """K-means over rows made of unit-norm blocks.

    Similarity is the mean block-wise dot product; centroids are re-projected
    block by block after each update. When ``n_clusters`` is at least the
    number of distinct rows, the distinct rows themselves become the
    centroids and quantization is lossless.

    Parameters
    ----------
    n_clusters : int
        Requested dictionary size; clamped to the number of samples.
    n_iter : int
        Number of assignment/update rounds.
    block_dim : int
        Length of each unit-norm block.
    random_state : int or numpy Generator
        Seed for the distance-weighted initialization.
    """

    def __init__(self, n_clusters=64, n_iter=20, block_dim=DESCRIPTOR_DIM, random_state=0):
        self.n_clusters = n_clusters
        self.n_iter = n_iter
        self.block_dim = block_dim
        self.random_state = random_state

    def _similarity(self, X, C):
        n_blocks = X.shape[1] // self.block_dim
        return (X @ C.T) / n_blocks

    def fit(self, X, y=None):
        X = check_array(X, dtype=np.float64)
        if self.n_clusters < 1:
            raise ValueError("n_clusters must be >= 1")
        if X.shape[1] % self.block_dim:
            raise ValueError(f"row length {X.shape[1]} is not a multiple of block_dim={self.block_dim}")
        rng = check_random_state(self.random_state)
        n = len(X)
        k = min(self.n_clusters, n)
        self.effective_size_ = k

        distinct, first, inverse = np.unique(X, axis=0, return_index=True, return_inverse=True)
        if len(distinct) <= k:
            order = np.argsort(first, kind="stable")
            rank = np.empty_like(order)
            rank[order] = np.arange(len(order))
            self.cluster_centers_ = X[first[order]].copy()
            # exact identity, not argmax: near-duplicates can tie at similarity 1
            self.labels_ = rank[inverse.ravel()]
            self.n_iter_ = 0
            return self

        centers = self._init_centers(X, k, rng)
        for it in range(self.n_iter):
            sim = self._similarity(X, centers)
            labels = np.argmax(sim, axis=1)
            best = sim[np.arange(n), labels]
            new = np.zeros_like(centers)
            np.add.at(new, labels, X)
            counts = np.bincount(labels, minlength=k)
            empty = np.flatnonzero(counts == 0)
            if len(empty):
                # re-seed from the worst-served samples, farthest first
                far = np.argsort(best, kind="stable")[: len(empty)]
                new[empty] = X[far]
            centers = project_blocks(new, self.block_dim)
        self.n_iter_ = self.n_iter
        self.cluster_centers_ = centers
        self.labels_ = self.predict(X)
        return self

    def _init_centers(self, X, k, rng):
        n = len(X)
        centers = np.empty((k, X.shape[1]))
        centers[0] = X[rng.integers(n)]
        n_blocks = X.shape[1] // self.block_dim
        # squared distance between rows of unit blocks: 2 * n_blocks * (1 - sim)
        d2 = np.maximum(2.0 * n_blocks * (1.0 - self._similarity(X, centers[:1])[:, 0]), 0.0)
        for j in range(1, k):
            total = d2.sum()
            if total <= 0:
                idx = rng.integers(n)
            else:
                idx = rng.choice(n, p=d2 / total)
            centers[j] = X[idx]
            d2 = np.minimum(d2, np.maximum(2.0 * n_blocks * (1.0 - self._similarity(X, centers[j:j + 1])[:, 0]), 0.0))
        return centers

    def predict(self, X):
        check_is_fitted(self, "cluster_centers_")
        X = check_array(X, dtype=np.float64)
        return np.argmax(self._similarity(X, self.cluster_centers_), axis=1)

    def transform(self, X):
        """Similarity of each row to each centroid."""
        check_is_fitted(self, "cluster_centers_")
        return self._similarity(check_array(X, dtype=np.float64), self.cluster_centers_)


@dataclass
class PrototypeDictionary:
    centroids: np.ndarray  # (D, 4, 4, 9) float32
    assignment: np.ndarray  # (n_atomic,) prototype index per atomic patch
    requested_size: int

    @property
    def size(self):
        return len(self.centroids)


def cluster_prototypes(field1, D, iters=20, seed=0):
    """Cluster the atomic patches of ``field1`` into at most ``D`` prototypes."""
    h, w = field1.shape[:2]
    grid = atomic_grid(w, h)
    if len(grid) == 0:
        raise ValueError("image has no atomic patch")
    patches = extract_patches(field1, grid).reshape(len(grid), -1)
    km = SphericalKMeans(n_clusters=D, n_iter=iters, random_state=seed).fit(patches)
    centroids = km.cluster_centers_.reshape(-1, ATOMIC_SIZE, ATOMIC_SIZE, DESCRIPTOR_DIM).astype(np.float32)
    return PrototypeDictionary(centroids=centroids, assignment=km.labels_.astype(np.int64), requested_size=D)
