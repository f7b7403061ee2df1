"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run with `pytest tests/test_acceptance.py -s` to see the per-criterion lines
as they complete. The direction-of-effect and alpha-sweep experiments share
one trained grid (module-scoped fixture) on the benchmark synthetic dataset.
"""

import json
import math
import time

import numpy as np
import pytest

import dpgen.autodiff as ad
from dpgen.cli import main as cli_main
from dpgen.distortion import (
    complete_mask,
    distortion_loss,
    estimate_distortion_constant,
    estimate_m1_m2,
    masked_distortion_loss,
    masked_distortion_nodes,
    theorem1_bound,
)
from dpgen.metrics import gearys_c, morans_i
from dpgen.preprocess import log_normalize, pca_fit_transform, select_hvg
from dpgen.rng import PortableRng
from dpgen.spatial import knn_mask, pairwise_distances
from dpgen.synthetic import SynthConfig, generate, train_test_split_sections
from dpgen.train import TrainConfig, evaluate, train
from dpgen.vae import ModelParams, elbo_nodes, kl_diag_gaussian, lambda_node


def _report(number: int, name: str, passed: bool, detail: str = "") -> None:
    status = "PASS" if passed else "FAIL"
    suffix = f" ({detail})" if detail else ""
    print(f"ACCEPTANCE {number} {name}: {status}{suffix}", flush=True)
    assert passed, f"criterion {number} {name} failed{suffix}"


# -----------------------------------------------------------------------------
# 1. gradient correctness of the full regularized loss


def test_criterion_1_gradient_correctness():
    started = time.perf_counter()
    worst = 0.0
    base = PortableRng(1001)
    for trial in range(50):
        trial_rng = base.child(trial)
        b, in_dim, hidden, latent = 5, 4, 6, 2
        params = ModelParams.initialize(in_dim, hidden, latent, trial_rng.child(0))
        params.theta_lambda = np.float64(trial_rng.normal(1)[0] * 0.3)
        y = trial_rng.child(1).normal((b, in_dim))
        coords = trial_rng.child(2).random(2 * b).reshape(b, 2) * 4.0
        d_s = pairwise_distances(coords)
        mask = knn_mask(coords, 2).to_matrix()
        eps = trial_rng.child(3).normal((b, latent))
        alpha, beta = 50.0, 1e-2

        def full_loss(nodes):
            loss, _, _, z = elbo_nodes(nodes, y, beta, eps)
            dis = masked_distortion_nodes(z, d_s, mask, lambda_node(nodes))
            return loss + ad.scale(dis, alpha)

        worst = max(worst, ad.finite_difference_check(full_loss, params.as_dict(), h=1e-5))
    elapsed = time.perf_counter() - started
    _report(
        1,
        "gradient-correctness",
        worst <= 1e-5 and elapsed < 60.0,
        f"max rel err {worst:.2e}, {elapsed:.1f}s",
    )


# -----------------------------------------------------------------------------
# 2. closed-form KL vs Monte Carlo log-density ratio


def _mc_kl(mu, logvar, n_samples, seed):
    rng = np.random.default_rng(seed)
    sd = np.exp(0.5 * logvar)
    half = rng.standard_normal((n_samples // 2, mu.size))
    z = np.vstack([half, -half])  # antithetic pairs cancel the odd term
    x = mu + sd * z
    log_q = -0.5 * np.sum(z**2 + logvar + np.log(2 * np.pi), axis=1)
    log_p = -0.5 * np.sum(x**2 + np.log(2 * np.pi), axis=1)
    return float(np.mean(log_q - log_p))


def test_criterion_2_kl_oracle():
    started = time.perf_counter()
    rng = np.random.default_rng(2002)
    worst = 0.0
    for trial in range(20):
        d = int(rng.integers(1, 5))
        mu = rng.uniform(-1.0, 1.0, size=d)
        logvar = rng.uniform(-0.8, 0.8, size=d)
        closed = kl_diag_gaussian(mu[None, :], logvar[None, :])
        estimate = _mc_kl(mu, logvar, 100_000, seed=5000 + trial)
        worst = max(worst, abs(closed - estimate))
    elapsed = time.perf_counter() - started
    _report(2, "kl-oracle", worst <= 0.01 and elapsed < 60.0, f"max abs err {worst:.4f}, {elapsed:.1f}s")


# -----------------------------------------------------------------------------
# 3. alignment-loss exactness


def _loop_oracle(z, d_s, mask, lam):
    b = z.shape[0]
    total = 0.0
    for i in range(b):
        for j in range(b):
            if i != j and mask[i, j] != 0.0:
                total += abs(math.sqrt(((z[i] - z[j]) ** 2).sum()) - lam * d_s[i, j])
    return total / (b * b)


def test_criterion_3_distortion_exactness():
    worst = 0.0
    for seed in range(20):
        rng = np.random.default_rng(3000 + seed)
        b = int(rng.integers(4, 12))
        z = rng.normal(size=(b, 4))
        s = rng.normal(size=(b, 2))
        lam = float(rng.uniform(0.3, 2.5))
        d_s = pairwise_distances(s)
        mask = (rng.random((b, b)) > 0.4).astype(float)
        mask = np.triu(mask, 1)
        mask = mask + mask.T
        worst = max(worst, abs(distortion_loss(z, d_s, lam) - _loop_oracle(z, d_s, complete_mask(b), lam)))
        worst = max(worst, abs(masked_distortion_loss(z, d_s, mask, lam) - _loop_oracle(z, d_s, mask, lam)))

    iso_rng = PortableRng(3100)
    s = iso_rng.normal((9, 2))
    zero_loss = max(
        distortion_loss(np.hstack([lam * s, np.zeros((9, 2))]), pairwise_distances(s), lam)
        for lam in (0.5, 1.0, 2.0)
    )
    _report(
        3,
        "distortion-exactness",
        worst <= 1e-12 and zero_loss <= 1e-12,
        f"oracle gap {worst:.1e}, isometry loss {zero_loss:.1e}",
    )


# -----------------------------------------------------------------------------
# 4. Theorem-1 bound dominates the empirical constant


def test_criterion_4_theorem1_property():
    started = time.perf_counter()
    epsilon = delta = 0.05
    holds = 0
    base = PortableRng(4004)
    for trial in range(100):
        trial_rng = base.child(trial)
        s = trial_rng.normal((24, 2)) * 2.0
        d_s = pairwise_distances(s)
        lam = 0.5 + trial_rng.random(1)[0]
        c = 1.05 + 1.8 * trial_rng.random(1)[0]
        sigma = 0.05 * trial_rng.random(1)[0]

        def sampler(y, r, c=c, sigma=sigma, s=s, lam=lam):
            return c * lam * s + sigma * r.normal(s.shape)

        l_dis = float(
            np.mean([distortion_loss(sampler(s, trial_rng.child(10 + t)), d_s, lam) for t in range(4)])
        )
        m1, m2 = estimate_m1_m2(d_s, delta)
        l_hat, _ = estimate_distortion_constant(sampler, s, d_s, lam, epsilon, 4, trial_rng.child(1))
        if not math.isfinite(l_hat):
            holds += 1  # lower-bound coverage failed; nothing to dominate
        elif l_hat <= theorem1_bound(l_dis, lam, m1, m2, epsilon, delta):
            holds += 1
    elapsed = time.perf_counter() - started
    _report(4, "theorem1-property", holds >= 95 and elapsed < 300.0, f"{holds}/100, {elapsed:.1f}s")


# -----------------------------------------------------------------------------
# 5. metric oracles


def test_criterion_5_metric_oracles():
    coords = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [1.0, 1.0]])
    values = np.array([1.0, -1.0, -1.0, 1.0])
    chess_i = morans_i(values, coords, k=2)
    chess_c = gearys_c(values, coords, k=2)

    side = 20
    ys, xs = np.divmod(np.arange(side * side), side)
    grid = np.column_stack([xs, ys]).astype(float)
    field = (grid[:, 0] + grid[:, 1]) / 10.0
    rng = np.random.default_rng(5005)
    i_null, c_null = [], []
    for _ in range(200):
        perm = rng.permutation(field.size)
        i_null.append(morans_i(field[perm], grid, k=5))
        c_null.append(gearys_c(field[perm], grid, k=5))
    i_mean, c_mean = float(np.mean(i_null)), float(np.mean(c_null))
    expected_i = -1.0 / (side * side - 1)

    passed = (
        abs(chess_i - (-1.0)) <= 1e-10
        and abs(chess_c - 1.5) <= 1e-10
        and abs(c_mean - 1.0) <= 0.05
        and abs(i_mean - expected_i) <= 0.05
    )
    _report(
        5,
        "metric-oracles",
        passed,
        f"I={chess_i:.12f}, C={chess_c:.12f}, null I {i_mean:.4f}, null C {c_mean:.4f}",
    )


# -----------------------------------------------------------------------------
# 6 & 7. direction of effect and sweep shape on the benchmark dataset

SWEEP_ALPHAS = (0.0, 10.0, 25.0, 50.0, 100.0, 200.0)
SWEEP_SEEDS = (0, 1, 2, 3, 4)


@pytest.fixture(scope="module")
def alpha_grid():
    """Train/evaluate the full (alpha, seed) grid once; both criteria read it."""
    data_cfg = SynthConfig(grid_side=30, n_genes=200, n_patterns=3, smoothness=6.0, noise_sd=40.0, seed=7)
    x, coords = generate(data_cfg)
    (train_x, train_c), (test_x, test_c) = train_test_split_sections(x, coords, axis=1, fraction=0.5)
    hvg = select_hvg(train_x, 150)
    norm_train = log_normalize(train_x).subset_genes(hvg)
    pca, train_feats = pca_fit_transform(norm_train.values, 32)
    gene_index = {g: i for i, g in enumerate(test_x.gene_ids)}
    test_norm = log_normalize(test_x).subset_genes([gene_index[g] for g in norm_train.gene_ids])
    test_feats = pca.transform(test_norm.values)

    cells = {}
    for alpha in SWEEP_ALPHAS:
        for seed in SWEEP_SEEDS:
            config = TrainConfig(pca_k=32, alpha=alpha, seed=seed, batch_size=512, max_epochs=400)
            t0 = time.perf_counter()
            params, _ = train(config, train_feats, train_c)
            metrics = evaluate(params, test_feats, test_c, k=5)
            cells[(alpha, seed)] = {
                "mse": metrics.mse,
                "i": metrics.morans_i_mean,
                "c": metrics.gearys_c_mean,
                "seconds": time.perf_counter() - t0,
            }
    return cells


def _column(cells, alpha, key):
    return [cells[(alpha, seed)][key] for seed in SWEEP_SEEDS]


def test_criterion_6_direction_of_effect(alpha_grid):
    i0 = float(np.mean(_column(alpha_grid, 0.0, "i")))
    i50 = float(np.mean(_column(alpha_grid, 50.0, "i")))
    c0 = float(np.mean(_column(alpha_grid, 0.0, "c")))
    c50 = float(np.mean(_column(alpha_grid, 50.0, "c")))
    mse0 = float(np.mean(_column(alpha_grid, 0.0, "mse")))
    mse50 = float(np.mean(_column(alpha_grid, 50.0, "mse")))
    seconds = sum(alpha_grid[(a, s)]["seconds"] for a in (0.0, 50.0) for s in SWEEP_SEEDS)
    passed = i50 > i0 and c50 < c0 and mse50 <= 1.05 * mse0 and seconds < 900.0
    _report(
        6,
        "direction-of-effect",
        passed,
        f"I {i0:.4f}->{i50:.4f}, C {c0:.4f}->{c50:.4f}, MSE ratio {mse50 / mse0:.4f}, {seconds:.0f}s",
    )


def test_criterion_7_alpha_sweep_shape(alpha_grid):
    means = {a: float(np.mean(_column(alpha_grid, a, "i"))) for a in SWEEP_ALPHAS}
    i0 = means[0.0]
    best_alpha = max((a for a in SWEEP_ALPHAS if a > 0), key=lambda a: means[a])
    gain = means[best_alpha] - i0
    first_three = [means[a] for a in SWEEP_ALPHAS[:3]]
    monotone = first_three[0] <= first_three[1] <= first_three[2]
    seconds = sum(c["seconds"] for c in alpha_grid.values())
    passed = gain >= 0.05 and monotone and seconds < 2700.0
    series = " ".join(f"{a:g}:{means[a]:.4f}" for a in SWEEP_ALPHAS)
    _report(7, "alpha-sweep-shape", passed, f"best a={best_alpha:g} gain {gain:.4f}; {series}; {seconds:.0f}s")


# -----------------------------------------------------------------------------
# 8. byte-identical reruns


def test_criterion_8_reproducibility(tmp_path):
    conf = tmp_path / "synth.json"
    conf.write_text(
        json.dumps({"grid_side": 8, "n_genes": 30, "n_patterns": 2, "smoothness": 4.0, "noise_sd": 5.0, "seed": 13})
    )
    data = tmp_path / "data"
    assert cli_main(["synth", "--config", str(conf), "--out", str(data)]) == 0
    prep = tmp_path / "prep"
    assert (
        cli_main(
            [
                "preprocess",
                "--expr", str(data / "expression.csv"),
                "--coords", str(data / "coords.csv"),
                "--hvg", "20",
                "--pca", "6",
                "--out", str(prep),
            ]
        )
        == 0
    )
    train_args = [
        "train",
        "--features", str(prep / "features.bin"),
        "--coords", str(prep / "coords.csv"),
        "--alpha", "25",
        "--latent", "2",
        "--hidden", "8",
        "--pca-k", "6",
        "--mask-k", "4",
        "--max-epochs", "10",
        "--seed", "3",
        "--no-figures",
    ]
    runs = {}
    for tag in ("a", "b"):
        run_dir = tmp_path / f"run_{tag}"
        assert cli_main(train_args + ["--out", str(run_dir)]) == 0
        eval_dir = tmp_path / f"eval_{tag}"
        assert (
            cli_main(
                [
                    "evaluate",
                    "--checkpoint", str(run_dir / "checkpoint.bin"),
                    "--features", str(prep / "features.bin"),
                    "--coords", str(prep / "coords.csv"),
                    "--no-figures",
                    "--out", str(eval_dir),
                ]
            )
            == 0
        )
        runs[tag] = (
            (run_dir / "checkpoint.bin").read_bytes(),
            (eval_dir / "metrics.json").read_bytes(),
        )
    same_checkpoint = runs["a"][0] == runs["b"][0]
    same_metrics = runs["a"][1] == runs["b"][1]
    _report(
        8,
        "reproducibility",
        same_checkpoint and same_metrics,
        f"checkpoint identical={same_checkpoint}, metrics identical={same_metrics}",
    )
