"""Expression preprocessing: HVG selection, library-size log-normalization, PCA.

Mirrors the Seurat-style workflow: log-normalize against per-spot library
size, rank genes by sample variance of the normalized values, project onto
principal components with a deterministic sign convention.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DataFormatError, DegenerateDataError

DEFAULT_NORMALIZE_SCALE = 1e4


@dataclass
class ExpressionMatrix:
    """Dense spots x genes matrix with identifiers."""

    values: np.ndarray
    spot_ids: list[str]
    gene_ids: list[str]

    def __post_init__(self):
        self.values = np.ascontiguousarray(self.values, dtype=np.float64)
        if self.values.ndim != 2:
            raise DataFormatError(f"expression matrix must be 2-D, got shape {self.values.shape}")
        n, p = self.values.shape
        if len(self.spot_ids) != n or len(self.gene_ids) != p:
            raise DataFormatError(
                f"id lists ({len(self.spot_ids)} spots, {len(self.gene_ids)} genes) "
                f"do not match matrix shape {self.values.shape}"
            )

    @property
    def n_spots(self) -> int:
        return self.values.shape[0]

    @property
    def n_genes(self) -> int:
        return self.values.shape[1]

    def subset_genes(self, indices) -> "ExpressionMatrix":
        idx = np.asarray(indices, dtype=np.intp)
        return ExpressionMatrix(self.values[:, idx], list(self.spot_ids), [self.gene_ids[i] for i in idx])

    def subset_spots(self, indices) -> "ExpressionMatrix":
        idx = np.asarray(indices, dtype=np.intp)
        return ExpressionMatrix(self.values[idx, :], [self.spot_ids[i] for i in idx], list(self.gene_ids))


@dataclass
class PcaModel:
    """Mean vector plus top-k orthonormal components (rows) and their variances."""

    mean: np.ndarray
    components: np.ndarray
    explained_variance: np.ndarray
    rank_deficient: bool = False

    def transform(self, x: np.ndarray) -> np.ndarray:
        return (np.asarray(x, dtype=np.float64) - self.mean) @ self.components.T

    def inverse_transform(self, scores: np.ndarray) -> np.ndarray:
        return scores @ self.components + self.mean


def log_normalize(x: ExpressionMatrix, scale: float = DEFAULT_NORMALIZE_SCALE) -> ExpressionMatrix:
    """log(1 + scale * count / library_size), library size = per-spot total."""
    if scale <= 0:
        raise ValueError("scale must be positive")
    sums = x.values.sum(axis=1)
    zero = np.flatnonzero(sums <= 0)
    if zero.size:
        raise DegenerateDataError(f"zero library size for spot id {x.spot_ids[zero[0]]!r}")
    out = np.log1p(scale * x.values / sums[:, None])
    return ExpressionMatrix(out, list(x.spot_ids), list(x.gene_ids))


def select_hvg(x: ExpressionMatrix, n: int, scale: float = DEFAULT_NORMALIZE_SCALE) -> list[int]:
    """Indices (ascending) of the n genes with largest log-normalized variance.

    Ties go to the lower gene index.
    """
    if n <= 0:
        raise ValueError("number of genes to select must be positive")
    if n > x.n_genes:
        raise ValueError(f"requested {n} genes but matrix has {x.n_genes}")
    normalized = log_normalize(x, scale)
    variances = normalized.values.var(axis=0, ddof=1) if x.n_spots > 1 else np.zeros(x.n_genes)
    order = np.lexsort((np.arange(x.n_genes), -variances))
    return sorted(int(i) for i in order[:n])


def pca_fit_transform(x: np.ndarray, k: int) -> tuple[PcaModel, np.ndarray]:
    """Fit top-k principal components of a spots x features matrix.

    Sign convention: each component's largest-magnitude entry is nonnegative,
    so repeated fits of the same data give identical output. If k exceeds the
    rank of the centered matrix the trailing components carry zero variance
    and the model is flagged rank_deficient.
    """
    x = np.asarray(x, dtype=np.float64)
    n, p = x.shape
    if not (1 <= k <= min(n, p)):
        raise ValueError(f"k={k} must satisfy 1 <= k <= min{(n, p)}")
    mean = x.mean(axis=0)
    centered = x - mean
    _, singular, vt = np.linalg.svd(centered, full_matrices=False)
    components = vt[:k].copy()
    # deterministic sign: largest |entry| of each component made nonnegative
    pivot = np.argmax(np.abs(components), axis=1)
    signs = np.sign(components[np.arange(k), pivot])
    signs[signs == 0] = 1.0
    components *= signs[:, None]
    denom = max(n - 1, 1)
    explained = (singular[:k] ** 2) / denom
    tol = max(n, p) * np.finfo(np.float64).eps * (singular[0] if singular.size else 0.0)
    rank = int(np.sum(singular > tol))
    model = PcaModel(mean, components, explained, rank_deficient=rank < k)
    return model, centered @ components.T
