"""Distance-alignment loss, its masked variant, and the distortion-bound estimators.

The loss penalizes the mean absolute gap between latent pairwise distances and
lambda-scaled spatial pairwise distances over ordered pairs i != j, normalized
by 1/B^2. The estimators quantify how well a stochastic encoder sandwiches
scaled spatial distances: quantile bracketing of the spatial distance
population (m1, m2), an empirical distortion constant from posterior samples,
and the closed-form upper bound that ties the constant to the loss value.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, asdict
from typing import Callable

import numpy as np

from . import autodiff as ad
from .autodiff import Node
from .errors import DegenerateDataError
from .rng import PortableRng
from .spatial import MaskGraph, pairwise_distances, offdiagonal_distances


# Ratios sitting exactly on the lower bound land a few ulps below 1 after two
# sqrt round trips; the guard only absorbs float dust, never statistics.
_RATIO_BOUNDARY_TOL = 1e-12


def complete_mask(n: int) -> np.ndarray:
    """All-pairs mask: ones with a zero diagonal."""
    m = np.ones((n, n))
    np.fill_diagonal(m, 0.0)
    return m


def _as_mask_matrix(mask, n: int) -> np.ndarray:
    if isinstance(mask, MaskGraph):
        if mask.n != n:
            raise ValueError(f"mask is over {mask.n} spots but batch has {n}")
        return mask.to_matrix()
    m = np.asarray(mask, dtype=np.float64)
    if m.shape != (n, n):
        raise ValueError(f"mask shape {m.shape} does not match batch size {n}")
    return m


def masked_distortion_nodes(z: Node, d_s: np.ndarray, mask: np.ndarray, lam: Node) -> Node:
    """Differentiable (1/B^2) * || G ⊙ D_z  -  lambda * G ⊙ D_s ||_1."""
    b = z.shape[0]
    if b < 2:
        raise DegenerateDataError("distortion loss needs at least two rows")
    d_z = ad.pairwise_dist(z)
    gap = ad.apply_mask(d_z - lam * d_s, mask)
    return ad.scale(ad.total_sum(ad.absolute(gap)), 1.0 / (b * b))


def masked_distortion_loss(z: np.ndarray, d_s: np.ndarray, mask, lam: float) -> float:
    """Masked alignment loss of a fixed latent batch; equals the unmasked loss
    on a complete mask entry for entry."""
    z = np.asarray(z, dtype=np.float64)
    if lam <= 0:
        raise ValueError("lambda must be positive")
    b = z.shape[0]
    if b < 2:
        raise DegenerateDataError("distortion loss needs at least two rows")
    d_s = np.asarray(d_s, dtype=np.float64)
    if d_s.shape != (b, b):
        raise ValueError(f"distance matrix shape {d_s.shape} does not match batch size {b}")
    m = _as_mask_matrix(mask, b)
    d_z = pairwise_distances(z)
    return float(np.abs(m * d_z - lam * (m * d_s)).sum() / (b * b))


def distortion_loss(z: np.ndarray, d_s: np.ndarray, lam: float) -> float:
    """(1/B^2) * sum over ordered pairs i != j of |d_Z(z_i, z_j) - lambda * d_S[i, j]|."""
    z = np.asarray(z, dtype=np.float64)
    return masked_distortion_loss(z, d_s, complete_mask(z.shape[0]), lam)


def estimate_m1_m2(d_s: np.ndarray, delta: float) -> tuple[float, float]:
    """Quantile bracket [m1, m2] holding at least 1 - delta of the off-diagonal
    distance population.

    m1 is the (delta/2)-quantile taken as a lower order statistic and m2 the
    (1 - delta/2)-quantile taken as an upper one, so the guarantee holds with
    the empirical plug-in rather than only in the limit.
    """
    if not (0.0 < delta < 1.0):
        raise ValueError("delta must lie in (0, 1)")
    values = np.sort(offdiagonal_distances(np.asarray(d_s, dtype=np.float64)))
    if values[-1] <= 0.0:
        raise DegenerateDataError("all pairwise distances are zero")
    m = values.size
    lo = int(math.floor((delta / 2.0) * (m - 1)))
    hi = int(math.ceil((1.0 - delta / 2.0) * (m - 1)))
    return float(values[lo]), float(values[hi])


def estimate_distortion_constant(
    sample_latent: Callable[[np.ndarray, PortableRng], np.ndarray],
    y: np.ndarray,
    d_s: np.ndarray,
    lam: float,
    epsilon: float,
    n_draws: int,
    rng: PortableRng,
) -> tuple[float, float]:
    """Empirical distortion constant of a stochastic encoder at scale lambda.

    Draws ``n_draws`` independent posterior samples of the whole batch,
    collects the ratios r = d_Z(z_i, z_j) / (lambda * d_S[i, j]) over pairs
    with positive spatial distance, and returns the smallest L whose bracket
    [1, L] holds a 1 - epsilon fraction of the ratios, together with the
    fraction actually achieved. When fewer than 1 - epsilon of the ratios
    reach 1 at all, the lower bound fails at this lambda and L is +inf.
    """
    if not (0.0 < epsilon < 1.0):
        raise ValueError("epsilon must lie in (0, 1)")
    if n_draws < 1:
        raise ValueError("need at least one posterior draw")
    if lam <= 0:
        raise ValueError("lambda must be positive")
    d_s = np.asarray(d_s, dtype=np.float64)
    iu = np.triu_indices(d_s.shape[0], k=1)
    spatial = d_s[iu]
    positive = spatial > 0.0
    if not positive.any():
        raise DegenerateDataError("all pairwise spatial distances are zero")
    ratios = []
    for draw in range(n_draws):
        z = np.asarray(sample_latent(y, rng.child(draw)), dtype=np.float64)
        latent = pairwise_distances(z)[iu]
        ratios.append(latent[positive] / (lam * spatial[positive]))
    r = np.concatenate(ratios)
    total = r.size
    need = int(math.ceil((1.0 - epsilon) * total))
    lower = 1.0 - _RATIO_BOUNDARY_TOL
    valid = np.sort(r[r >= lower])
    if valid.size < need:
        return math.inf, float(valid.size) / total
    l_hat = max(float(valid[need - 1]), 1.0)
    upper = l_hat * (1.0 + _RATIO_BOUNDARY_TOL)
    coverage = float(np.count_nonzero((r >= lower) & (r <= upper))) / total
    return l_hat, coverage


def theorem1_bound(
    l_dis: float, lam: float, m1: float, m2: float, epsilon: float, delta: float
) -> float:
    """Upper bound on the distortion constant: m2/m1 + l_dis / (lambda * m1 * epsilon * (1 - delta))."""
    if m1 <= 0:
        raise ValueError("m1 must be positive")
    if lam <= 0:
        raise ValueError("lambda must be positive")
    if not (0.0 < epsilon < 1.0 and 0.0 < delta < 1.0):
        raise ValueError("epsilon and delta must lie in (0, 1)")
    return m2 / m1 + l_dis / (lam * m1 * epsilon * (1.0 - delta))


def theorem1_bound_proof_form(
    l_dis: float, lam: float, m1: float, m2: float, epsilon: float, delta: float
) -> float:
    """Variant with denominator (epsilon - delta); +inf when epsilon <= delta.

    The derivation and the stated bound disagree on this factor; reports carry
    both so the discrepancy stays visible.
    """
    if m1 <= 0 or lam <= 0:
        raise ValueError("m1 and lambda must be positive")
    if epsilon <= delta:
        return math.inf
    return m2 / m1 + l_dis / (lam * m1 * (epsilon - delta))


@dataclass
class DistortionReport:
    """Everything the bound verifier measures for one checkpoint/dataset pair."""

    l_dis: float
    lam: float
    coverage: float
    l_hat: float
    l_bound: float
    l_bound_proof_form: float
    m1: float
    m2: float
    epsilon: float
    delta: float
    n_draws: int

    def __post_init__(self):
        if self.m1 > self.m2:
            raise ValueError(f"m1={self.m1} exceeds m2={self.m2}")
        if not (0.0 <= self.coverage <= 1.0):
            raise ValueError(f"coverage {self.coverage} outside [0, 1]")

    @property
    def lower_bound_holds(self) -> bool:
        return math.isfinite(self.l_hat)

    def to_dict(self) -> dict:
        out = asdict(self)
        # strict JSON has no Infinity; flag finiteness explicitly
        out["lower_bound_holds"] = self.lower_bound_holds
        for key in ("l_hat", "l_bound_proof_form"):
            if not math.isfinite(out[key]):
                out[key] = None
        return out


def build_report(
    sample_latent: Callable[[np.ndarray, PortableRng], np.ndarray],
    y: np.ndarray,
    coords: np.ndarray,
    lam: float,
    epsilon: float,
    delta: float,
    n_draws: int,
    rng: PortableRng,
) -> DistortionReport:
    """Measure the loss, the quantile bracket, the empirical constant, and the bound."""
    d_s = pairwise_distances(coords)
    losses = [
        distortion_loss(sample_latent(y, rng.child(1_000_000 + t)), d_s, lam)
        for t in range(n_draws)
    ]
    l_dis = float(np.mean(losses))
    m1, m2 = estimate_m1_m2(d_s, delta)
    l_hat, coverage = estimate_distortion_constant(sample_latent, y, d_s, lam, epsilon, n_draws, rng)
    return DistortionReport(
        l_dis=l_dis,
        lam=lam,
        coverage=coverage,
        l_hat=l_hat,
        l_bound=theorem1_bound(l_dis, lam, m1, m2, epsilon, delta),
        l_bound_proof_form=theorem1_bound_proof_form(l_dis, lam, m1, m2, epsilon, delta),
        m1=m1,
        m2=m2,
        epsilon=epsilon,
        delta=delta,
        n_draws=n_draws,
    )
