"""Spatial autocorrelation statistics and reconstruction error.

Moran's I and Geary's C use directed binary k-NN weights (w_ij = 1 iff j is
one of i's k nearest spots, distance ties to the lower index, no
symmetrization), so every row sums to k and W = n * k.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateDataError, ShapeMismatchError
from .spatial import pairwise_distances, _neighbor_order
from .vae import ModelParams, decode, encode

DEFAULT_NEIGHBORS = 5


def spatial_weights(coords: np.ndarray, k: int = DEFAULT_NEIGHBORS) -> np.ndarray:
    """Directed binary k-NN weight matrix: zero diagonal, row sums equal k."""
    coords = np.asarray(coords, dtype=np.float64)
    n = coords.shape[0]
    if not (1 <= k < n):
        raise ValueError(f"k={k} must satisfy 1 <= k < n={n}")
    d = pairwise_distances(coords)
    w = np.zeros((n, n))
    for i in range(n):
        w[i, _neighbor_order(d[i], i)[:k]] = 1.0
    return w


def _check_values(values: np.ndarray) -> tuple[np.ndarray, float]:
    values = np.asarray(values, dtype=np.float64).reshape(-1)
    if values.size < 2:
        raise ValueError("need at least two observations")
    centered = values - values.mean()
    denom = float(np.sum(centered * centered))
    if denom == 0.0:
        raise DegenerateDataError("zero variance: all values are equal")
    return centered, denom


def morans_i(values: np.ndarray, coords: np.ndarray, k: int = DEFAULT_NEIGHBORS) -> float:
    """Global spatial autocorrelation; near 1 for smooth fields, near -1 for
    alternating ones."""
    centered, denom = _check_values(values)
    w = spatial_weights(coords, k)
    n = centered.size
    total_w = w.sum()
    return float((n / total_w) * (centered @ w @ centered) / denom)


def gearys_c(values: np.ndarray, coords: np.ndarray, k: int = DEFAULT_NEIGHBORS) -> float:
    """Spatial autocorrelation on [0, 2]: 0 is perfect positive, 1 the random null."""
    centered, denom = _check_values(values)
    w = spatial_weights(coords, k)
    n = centered.size
    total_w = w.sum()
    gaps = centered[:, None] - centered[None, :]
    return float(((n - 1) / (2.0 * total_w)) * np.sum(w * gaps * gaps) / denom)


def reconstruction_mse(params: ModelParams, features: np.ndarray) -> float:
    """Mean over all entries of (decode(encoder mean) - features)^2; no sampling."""
    features = np.asarray(features, dtype=np.float64)
    if features.ndim != 2 or features.shape[1] != params.in_dim:
        raise ShapeMismatchError("reconstruction_mse", features.shape, (-1, params.in_dim))
    mu, _ = encode(params, features)
    recon = decode(params, mu)
    return float(np.mean((recon - features) ** 2))


@dataclass
class LatentAutocorrelation:
    """Per-latent-dimension I and C plus their means over non-constant dims."""

    morans_i_mean: float
    gearys_c_mean: float
    morans_i_per_dim: list[float | None]
    gearys_c_per_dim: list[float | None]
    n_excluded_dims: int


def latent_autocorrelation(
    params: ModelParams, features: np.ndarray, coords: np.ndarray, k: int = DEFAULT_NEIGHBORS
) -> LatentAutocorrelation:
    """I and C of each encoder-mean latent dimension over the spot coordinates.

    Constant dimensions carry no spatial signal and are excluded from the
    means (counted in n_excluded_dims); all dimensions constant is an error.
    """
    mu, _ = encode(params, np.asarray(features, dtype=np.float64))
    i_values: list[float | None] = []
    c_values: list[float | None] = []
    excluded = 0
    for dim in range(mu.shape[1]):
        column = mu[:, dim]
        if np.ptp(column) == 0.0:
            i_values.append(None)
            c_values.append(None)
            excluded += 1
            continue
        i_values.append(morans_i(column, coords, k))
        c_values.append(gearys_c(column, coords, k))
    kept_i = [v for v in i_values if v is not None]
    kept_c = [v for v in c_values if v is not None]
    if not kept_i:
        raise DegenerateDataError("every latent dimension is constant")
    return LatentAutocorrelation(
        morans_i_mean=float(np.mean(kept_i)),
        gearys_c_mean=float(np.mean(kept_c)),
        morans_i_per_dim=i_values,
        gearys_c_per_dim=c_values,
        n_excluded_dims=excluded,
    )
