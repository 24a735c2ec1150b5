"""Figures written straight to files (Agg backend, no display needed)."""

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def _save(fig, path):
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)
    return path


def plot_band_energies(path, fractions, title="Haar energy by level"):
    fig, ax = plt.subplots(figsize=(5, 3.2))
    labels = ["scaling"] + [f"band {i}" for i in range(len(fractions) - 1)]
    ax.bar(labels, fractions, color="tab:blue")
    ax.set_yscale("log")
    ax.set_ylabel("energy fraction")
    ax.set_title(title)
    ax.tick_params(axis="x", rotation=45)
    return _save(fig, path)


def plot_history(path, history):
    it = [row["iter"] for row in history]
    fig, ax = plt.subplots(figsize=(5, 3.2))
    ax.plot(it, [row["train_nll"] for row in history], label="train")
    ax.plot(it, [row["val_nll"] for row in history], label="validation (EMA)")
    ax.set_xlabel("iteration")
    ax.set_ylabel("NLL per dim")
    ax.legend()
    return _save(fig, path)


def plot_norm_probe(path, probe):
    fig, axes = plt.subplots(1, 2, figsize=(9, 3.2), sharey=False)
    for ax, key, title in ((axes[0], "forward", "encoder"), (axes[1], "backward", "decoder")):
        mean, std = getattr(probe, key + "_mean"), getattr(probe, key + "_std")
        res = getattr(probe, key + "_res")
        idx = np.arange(len(mean))
        for r in np.unique(res):
            m = res == r
            ax.errorbar(idx[m], mean[m], yerr=std[m], marker="o", ms=3, capsize=2, label=f"resolution {r}")
        ax.set_xlabel("block")
        ax.set_ylabel("state norm")
        ax.set_title(title)
        ax.legend(fontsize=7)
    return _save(fig, path)


def plot_kl_cumsum(path, series):
    fig, ax = plt.subplots(figsize=(5, 3.2))
    ax.step(np.arange(1, len(series) + 1), series, where="post")
    ax.set_xlabel("latent layer")
    ax.set_ylabel("cumulative KL (nats)")
    return _save(fig, path)


def plot_samples(path, images, cols=8):
    n = len(images)
    rows = max(1, int(np.ceil(n / cols)))
    fig, axes = plt.subplots(rows, cols, figsize=(cols * 0.9, rows * 0.9), squeeze=False)
    for k, ax in enumerate(axes.flat):
        ax.axis("off")
        if k < n:
            ax.imshow(images[k], cmap="gray", interpolation="nearest")
    return _save(fig, path)


def plot_bridge_norms(path, summary):
    t = np.asarray(summary["times"])
    m, s = np.asarray(summary["norm_mean"]), np.asarray(summary["norm_std"])
    fig, ax = plt.subplots(figsize=(5, 3.2))
    ax.plot(t, m, drawstyle="steps-post")
    ax.fill_between(t, m - s, m + s, step="post", alpha=0.25)
    ax.set_xlabel("t")
    ax.set_ylabel("||Z_t||")
    return _save(fig, path)
