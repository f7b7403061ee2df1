"""Figure rendering for the report paths.

Each function writes one PNG next to the delimited output it illustrates.
All rendering runs on the Agg backend so headless runs behave.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np


def save_history_figure(history, path) -> None:
    """Loss components and the distance scale across training epochs."""
    epochs = [r.epoch for r in history.records]
    fig, (ax_loss, ax_lambda) = plt.subplots(1, 2, figsize=(9, 3.2))
    ax_loss.plot(epochs, [r.loss for r in history.records], label="total", lw=1.5)
    ax_loss.plot(epochs, [r.recon for r in history.records], label="recon", lw=1.0)
    ax_loss.plot(epochs, [r.kl for r in history.records], label="kl", lw=1.0)
    ax_loss.plot(epochs, [r.distortion for r in history.records], label="alignment", lw=1.0)
    ax_loss.set_xlabel("epoch")
    ax_loss.set_ylabel("loss")
    ax_loss.legend(fontsize=8)
    ax_lambda.plot(epochs, [r.lambda_value for r in history.records], color="tab:red", lw=1.2)
    ax_lambda.set_xlabel("epoch")
    ax_lambda.set_ylabel("lambda")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def save_latent_figure(coords, mu, path) -> None:
    """Each latent dimension of the encoder mean over the spot coordinates."""
    coords = np.asarray(coords)
    mu = np.asarray(mu)
    d = mu.shape[1]
    ncols = min(d, 4)
    nrows = (d + ncols - 1) // ncols
    fig, axes = plt.subplots(nrows, ncols, figsize=(3.0 * ncols, 2.8 * nrows), squeeze=False)
    for dim in range(nrows * ncols):
        ax = axes[dim // ncols][dim % ncols]
        if dim >= d:
            ax.axis("off")
            continue
        sc = ax.scatter(coords[:, 0], coords[:, 1], c=mu[:, dim], s=8, cmap="viridis")
        ax.set_title(f"latent dim {dim}", fontsize=9)
        ax.set_aspect("equal")
        fig.colorbar(sc, ax=ax, shrink=0.8)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def save_sweep_figure(rows, path) -> None:
    """MSE and autocorrelation statistics against the regularization weight.

    ``rows`` are dicts with keys alpha, seed, mse, morans_i_mean, gearys_c_mean.
    """
    alphas = sorted({r["alpha"] for r in rows})

    def stats(key):
        means, sds = [], []
        for a in alphas:
            vals = [r[key] for r in rows if r["alpha"] == a]
            means.append(float(np.mean(vals)))
            sds.append(float(np.std(vals)))
        return np.array(means), np.array(sds)

    fig, (ax_mse, ax_auto) = plt.subplots(1, 2, figsize=(9, 3.2))
    mse_m, mse_s = stats("mse")
    ax_mse.errorbar(alphas, mse_m, yerr=mse_s, marker="o", capsize=3)
    ax_mse.set_xlabel("alpha")
    ax_mse.set_ylabel("test MSE")
    i_m, i_s = stats("morans_i_mean")
    c_m, c_s = stats("gearys_c_mean")
    ax_auto.errorbar(alphas, i_m, yerr=i_s, marker="o", capsize=3, label="Moran's I")
    ax_auto.errorbar(alphas, c_m, yerr=c_s, marker="s", capsize=3, label="Geary's C")
    ax_auto.set_xlabel("alpha")
    ax_auto.set_ylabel("statistic")
    ax_auto.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
