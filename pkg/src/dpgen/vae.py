"""Gaussian VAE backbone: probabilistic encoder/decoder, closed-form KL, beta-ELBO.

Architecture: one hidden layer per side (Linear -> LeakyReLU -> Linear), the
encoder head emitting (mu, logvar) side by side. The likelihood is Gaussian
with fixed unit variance, so the reconstruction term is the batch-mean squared
L2 error with constants dropped. A scalar log-scale parameter theta_lambda
rides along with the network weights; exp(theta_lambda) is the positive scale
that aligns latent and spatial distance units.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Node
from .errors import ShapeMismatchError
from .rng import PortableRng

PARAM_ORDER = (
    "enc_w1",
    "enc_b1",
    "enc_w2",
    "enc_b2",
    "dec_w1",
    "dec_b1",
    "dec_w2",
    "dec_b2",
    "theta_lambda",
)


@dataclass
class ModelParams:
    """Encoder/decoder weights plus the learnable log distance scale."""

    enc_w1: np.ndarray
    enc_b1: np.ndarray
    enc_w2: np.ndarray
    enc_b2: np.ndarray
    dec_w1: np.ndarray
    dec_b1: np.ndarray
    dec_w2: np.ndarray
    dec_b2: np.ndarray
    theta_lambda: np.ndarray

    def __post_init__(self):
        for name in PARAM_ORDER:
            setattr(self, name, np.asarray(getattr(self, name), dtype=np.float64))
        if self.theta_lambda.shape != ():
            raise ShapeMismatchError("theta_lambda", self.theta_lambda.shape, ())

    @property
    def in_dim(self) -> int:
        return self.enc_w1.shape[0]

    @property
    def hidden_dim(self) -> int:
        return self.enc_w1.shape[1]

    @property
    def latent_dim(self) -> int:
        return self.enc_w2.shape[1] // 2

    @property
    def lambda_value(self) -> float:
        return float(np.exp(self.theta_lambda))

    def as_dict(self) -> dict[str, np.ndarray]:
        return {name: getattr(self, name) for name in PARAM_ORDER}

    def copy(self) -> "ModelParams":
        return ModelParams(**{name: getattr(self, name).copy() for name in PARAM_ORDER})

    @classmethod
    def from_dict(cls, arrays: dict[str, np.ndarray]) -> "ModelParams":
        return cls(**{name: arrays[name] for name in PARAM_ORDER})

    @classmethod
    def initialize(cls, in_dim: int, hidden_dim: int, latent_dim: int, rng: PortableRng) -> "ModelParams":
        """Uniform(-1/sqrt(fan_in), +1/sqrt(fan_in)) weights, zero biases, lambda = 1."""

        def layer(fan_in: int, fan_out: int) -> np.ndarray:
            bound = 1.0 / np.sqrt(fan_in)
            return (rng.random(fan_in * fan_out).reshape(fan_in, fan_out) * 2.0 - 1.0) * bound

        return cls(
            enc_w1=layer(in_dim, hidden_dim),
            enc_b1=np.zeros(hidden_dim),
            enc_w2=layer(hidden_dim, 2 * latent_dim),
            enc_b2=np.zeros(2 * latent_dim),
            dec_w1=layer(latent_dim, hidden_dim),
            dec_b1=np.zeros(hidden_dim),
            dec_w2=layer(hidden_dim, in_dim),
            dec_b2=np.zeros(in_dim),
            theta_lambda=np.float64(0.0),
        )


def param_nodes(params: ModelParams) -> dict[str, Node]:
    return {name: Node(arr) for name, arr in params.as_dict().items()}


def encode_nodes(nodes: dict[str, Node], y: Node) -> tuple[Node, Node]:
    latent = nodes["enc_w2"].shape[1] // 2
    hidden = ad.leaky_relu(ad.matmul(y, nodes["enc_w1"]) + nodes["enc_b1"])
    head = ad.matmul(hidden, nodes["enc_w2"]) + nodes["enc_b2"]
    return ad.columns(head, 0, latent), ad.columns(head, latent, 2 * latent)


def decode_nodes(nodes: dict[str, Node], z: Node) -> Node:
    hidden = ad.leaky_relu(ad.matmul(z, nodes["dec_w1"]) + nodes["dec_b1"])
    return ad.matmul(hidden, nodes["dec_w2"]) + nodes["dec_b2"]


def lambda_node(nodes: dict[str, Node]) -> Node:
    return ad.exp(nodes["theta_lambda"])


def reparameterize_nodes(mu: Node, logvar: Node, eps: np.ndarray) -> Node:
    """z = mu + exp(logvar / 2) * eps with eps a fixed noise constant."""
    if eps.shape != mu.shape:
        raise ShapeMismatchError("reparameterize", mu.shape, eps.shape)
    return mu + ad.exp(ad.scale(logvar, 0.5)) * eps


def kl_node(mu: Node, logvar: Node) -> Node:
    """Batch mean of the diagonal-Gaussian-to-standard-normal KL divergence."""
    b = mu.shape[0]
    if b == 0:
        return Node(0.0)
    inner = 1.0 + logvar - ad.exp(logvar) - ad.square(mu)
    return ad.scale(ad.total_sum(inner), -0.5 / b)


def elbo_nodes(
    nodes: dict[str, Node], y: np.ndarray, beta: float, eps: np.ndarray
) -> tuple[Node, Node, Node, Node]:
    """(loss, recon, kl, z) nodes for a batch with frozen reparameterization noise.

    The posterior sample node is returned so additional loss terms can share
    the same one-sample-per-datum draw.
    """
    y = np.asarray(y, dtype=np.float64)
    b = y.shape[0]
    mu, logvar = encode_nodes(nodes, Node(y))
    z = reparameterize_nodes(mu, logvar, eps)
    y_hat = decode_nodes(nodes, z)
    recon = ad.scale(ad.total_sum(ad.square(y_hat - y)), 1.0 / b) if b else Node(0.0)
    kl = kl_node(mu, logvar)
    loss = recon + ad.scale(kl, beta)
    return loss, recon, kl, z


# Plain-array entry points; each delegates to the graph builder so there is a
# single definition of every formula.


def encode(params: ModelParams, y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    y = np.asarray(y, dtype=np.float64)
    if y.ndim != 2 or y.shape[1] != params.in_dim:
        raise ShapeMismatchError("encode", y.shape, (y.shape[0] if y.ndim == 2 else -1, params.in_dim))
    mu, logvar = encode_nodes(param_nodes(params), Node(y))
    return mu.value, logvar.value


def decode(params: ModelParams, z: np.ndarray) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    if z.ndim != 2 or z.shape[1] != params.latent_dim:
        raise ShapeMismatchError("decode", z.shape, (z.shape[0] if z.ndim == 2 else -1, params.latent_dim))
    return decode_nodes(param_nodes(params), Node(z)).value


def reparameterize(mu: np.ndarray, logvar: np.ndarray, rng: PortableRng) -> np.ndarray:
    mu = np.asarray(mu, dtype=np.float64)
    logvar = np.asarray(logvar, dtype=np.float64)
    if mu.shape != logvar.shape:
        raise ShapeMismatchError("reparameterize", mu.shape, logvar.shape)
    return mu + np.exp(0.5 * logvar) * rng.normal(mu.shape)


def kl_diag_gaussian(mu: np.ndarray, logvar: np.ndarray) -> float:
    mu = np.asarray(mu, dtype=np.float64)
    logvar = np.asarray(logvar, dtype=np.float64)
    if mu.shape != logvar.shape:
        raise ShapeMismatchError("kl_diag_gaussian", mu.shape, logvar.shape)
    return float(kl_node(Node(mu), Node(logvar)).value)


def elbo_loss(
    params: ModelParams, y: np.ndarray, beta: float, rng: PortableRng
) -> tuple[float, float, float]:
    if beta < 0:
        raise ValueError("beta must be nonnegative")
    y = np.asarray(y, dtype=np.float64)
    eps = rng.normal((y.shape[0], params.latent_dim))
    loss, recon, kl, _ = elbo_nodes(param_nodes(params), y, beta, eps)
    return float(loss.value), float(recon.value), float(kl.value)


def posterior_sampler(params: ModelParams):
    """Closure drawing one posterior sample per row: (y, rng) -> z."""

    def sample(y: np.ndarray, rng: PortableRng) -> np.ndarray:
        mu, logvar = encode(params, y)
        return reparameterize(mu, logvar, rng)

    return sample
