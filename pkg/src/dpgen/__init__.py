"""Distance-preserving variational autoencoders for spatially annotated expression data.

The package trains a Gaussian VAE whose latent pairwise distances are
regularized toward lambda-scaled spatial pairwise distances, estimates the
resulting distortion constant together with its closed-form upper bound, and
evaluates latent spatial autocorrelation (Moran's I, Geary's C) alongside
reconstruction error. A synthetic-data harness stands in for slide data.
"""

__version__ = "0.1.0"

from .preprocess import ExpressionMatrix, PcaModel, log_normalize, pca_fit_transform, select_hvg
from .spatial import MaskGraph, kmeans_mask, knn_mask, pairwise_distances
from .synthetic import SynthConfig, generate, train_test_split_sections
from .train import TrainConfig, TrainHistory, evaluate, train
from .vae import ModelParams

__all__ = [
    "ExpressionMatrix",
    "MaskGraph",
    "ModelParams",
    "PcaModel",
    "SynthConfig",
    "TrainConfig",
    "TrainHistory",
    "evaluate",
    "generate",
    "kmeans_mask",
    "knn_mask",
    "log_normalize",
    "pairwise_distances",
    "pca_fit_transform",
    "select_hvg",
    "train",
    "train_test_split_sections",
]
