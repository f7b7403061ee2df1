"""Training loop for the regularized objective: beta-ELBO plus the
alpha-weighted masked distance-alignment loss, minimized with Adam.

Minibatching restricts the spatial distance matrix and the mask to the
batch's index subset. Early stopping watches the epoch training loss; the
returned parameters are the snapshot from the best epoch.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, asdict

import numpy as np

from . import autodiff as ad
from .distortion import masked_distortion_nodes
from .errors import TrainingDivergedError
from .metrics import LatentAutocorrelation, latent_autocorrelation, reconstruction_mse
from .preprocess import PcaModel
from .rng import PortableRng
from .spatial import knn_mask, pairwise_distances
from .vae import ModelParams, elbo_nodes, lambda_node, param_nodes

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


@dataclass
class TrainConfig:
    latent_dim: int = 4
    hidden_dim: int = 64
    pca_k: int = 256
    beta: float = 1e-2
    alpha: float = 50.0
    lr: float = 1e-3
    batch_size: int = 128
    max_epochs: int = 1000
    patience: int = 10
    min_improvement: float = 1e-2
    mask_k: int = 5
    seed: int = 0

    def __post_init__(self):
        positive = (
            ("latent_dim", self.latent_dim),
            ("hidden_dim", self.hidden_dim),
            ("pca_k", self.pca_k),
            ("lr", self.lr),
            ("batch_size", self.batch_size),
            ("max_epochs", self.max_epochs),
            ("mask_k", self.mask_k),
            ("min_improvement", self.min_improvement),
        )
        for name, value in positive:
            if value <= 0:
                raise ValueError(f"{name} must be positive, got {value}")
        if self.patience < 1:
            raise ValueError("patience must be at least 1")
        if self.beta < 0 or self.alpha < 0:
            raise ValueError("beta and alpha must be nonnegative")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "TrainConfig":
        return cls(**data)


@dataclass
class EpochRecord:
    epoch: int
    loss: float
    recon: float
    kl: float
    distortion: float
    lambda_value: float
    wall_time: float


@dataclass
class TrainHistory:
    records: list[EpochRecord] = field(default_factory=list)

    def append(self, record: EpochRecord) -> None:
        self.records.append(record)

    def __len__(self) -> int:
        return len(self.records)

    def best_epoch(self) -> EpochRecord:
        return min(self.records, key=lambda r: r.loss)


@dataclass
class AdamState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]

    @classmethod
    def zeros_like(cls, params: dict[str, np.ndarray]) -> "AdamState":
        return cls(
            m={k: np.zeros_like(v) for k, v in params.items()},
            v={k: np.zeros_like(v) for k, v in params.items()},
        )


def adam_step(
    params: dict[str, np.ndarray],
    grads: dict[str, np.ndarray],
    state: AdamState,
    lr: float,
    beta1: float = ADAM_BETA1,
    beta2: float = ADAM_BETA2,
    eps: float = ADAM_EPS,
    t: int = 1,
) -> None:
    """Standard bias-corrected Adam update, in place."""
    if t < 1:
        raise ValueError("step counter t starts at 1")
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise ValueError(f"gradient shape {g.shape} != param shape {p.shape} for {name}")
        state.m[name] = beta1 * state.m[name] + (1.0 - beta1) * g
        state.v[name] = beta2 * state.v[name] + (1.0 - beta2) * g * g
        m_hat = state.m[name] / (1.0 - beta1**t)
        v_hat = state.v[name] / (1.0 - beta2**t)
        p -= lr * m_hat / (np.sqrt(v_hat) + eps)


def _batch_slices(n: int, batch_size: int, perm: np.ndarray) -> list[np.ndarray]:
    return [perm[start : start + batch_size] for start in range(0, n, batch_size)]


def train(
    config: TrainConfig, features: np.ndarray, coords: np.ndarray
) -> tuple[ModelParams, TrainHistory]:
    """Fit the model to aligned (features, coordinates) rows.

    Per step the objective is recon + beta * kl + alpha * masked alignment
    over within-batch mask edges; gradients flow into every parameter
    including theta_lambda. With alpha = 0 the alignment subgraph is never
    built and training reduces to a plain beta-weighted VAE.
    """
    features = np.asarray(features, dtype=np.float64)
    coords = np.asarray(coords, dtype=np.float64)
    n = features.shape[0]
    if coords.shape[0] != n:
        raise ValueError(f"{n} feature rows but {coords.shape[0]} coordinate rows")

    rng = PortableRng(config.seed)
    params = ModelParams.initialize(features.shape[1], config.hidden_dim, config.latent_dim, rng.child(0))
    noise_rng = rng.child(1)
    shuffle_rng = rng.child(2)

    use_alignment = config.alpha > 0.0
    if use_alignment:
        d_s = pairwise_distances(coords)
        mask_full = knn_mask(coords, config.mask_k).to_matrix()

    state = AdamState.zeros_like(params.as_dict())
    history = TrainHistory()
    best_loss = np.inf
    best_params = params.copy()
    stale_epochs = 0
    t = 0
    started = time.perf_counter()

    for epoch in range(1, config.max_epochs + 1):
        perm = shuffle_rng.permutation(n)
        sums = np.zeros(4)  # loss, recon, kl, distortion weighted by batch size
        for step, batch in enumerate(_batch_slices(n, config.batch_size, perm)):
            b = batch.size
            nodes = param_nodes(params)
            eps = noise_rng.normal((b, config.latent_dim))
            loss, recon, kl, z = elbo_nodes(nodes, features[batch], config.beta, eps)
            dis_value = 0.0
            if use_alignment and b >= 2:
                dis = masked_distortion_nodes(
                    z,
                    d_s[np.ix_(batch, batch)],
                    mask_full[np.ix_(batch, batch)],
                    lambda_node(nodes),
                )
                loss = loss + ad.scale(dis, config.alpha)
                dis_value = float(dis.value)
            loss_value = float(loss.value)
            if not np.isfinite(loss_value):
                raise TrainingDivergedError(epoch, step, loss_value)
            grads = ad.gradients(loss, nodes)
            t += 1
            adam_step(params.as_dict(), grads, state, config.lr, t=t)
            sums += b * np.array([loss_value, float(recon.value), float(kl.value), dis_value])

        epoch_loss, epoch_recon, epoch_kl, epoch_dis = sums / n
        history.append(
            EpochRecord(
                epoch=epoch,
                loss=epoch_loss,
                recon=epoch_recon,
                kl=epoch_kl,
                distortion=epoch_dis,
                lambda_value=params.lambda_value,
                wall_time=time.perf_counter() - started,
            )
        )
        if epoch_loss < best_loss - config.min_improvement:
            best_loss = epoch_loss
            best_params = params.copy()
            stale_epochs = 0
        else:
            stale_epochs += 1
            if stale_epochs >= config.patience:
                break

    return best_params, history


@dataclass
class EvalMetrics:
    mse: float
    morans_i_mean: float
    gearys_c_mean: float
    morans_i_per_dim: list[float | None]
    gearys_c_per_dim: list[float | None]
    n_excluded_dims: int
    lambda_value: float

    def to_dict(self) -> dict:
        return asdict(self)


def evaluate(
    params: ModelParams,
    features: np.ndarray,
    coords: np.ndarray,
    k: int = 5,
    pca: PcaModel | None = None,
) -> EvalMetrics:
    """Reconstruction MSE plus latent spatial autocorrelation, encoder means only.

    ``features`` must come from the training pipeline; pass the training
    PcaModel to project gene-space data that has not been transformed yet.
    """
    features = np.asarray(features, dtype=np.float64)
    if pca is not None:
        features = pca.transform(features)
    autocorr: LatentAutocorrelation = latent_autocorrelation(params, features, coords, k)
    return EvalMetrics(
        mse=reconstruction_mse(params, features),
        morans_i_mean=autocorr.morans_i_mean,
        gearys_c_mean=autocorr.gearys_c_mean,
        morans_i_per_dim=autocorr.morans_i_per_dim,
        gearys_c_per_dim=autocorr.gearys_c_per_dim,
        n_excluded_dims=autocorr.n_excluded_dims,
        lambda_value=params.lambda_value,
    )
