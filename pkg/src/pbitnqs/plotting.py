"""Figures written to files next to the CSV output."""
from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def plot_convergence(history, path, exact_energy=None, window=20, title=None):
    """Energy vs epoch with error band, running mean and the exact line."""
    e = history.energies()
    err = np.array([r.energy_stderr for r in history.records])
    epochs = np.arange(len(e))
    fig, ax = plt.subplots(figsize=(6, 4))
    if len(e):
        ax.fill_between(epochs, e - err, e + err, color="tab:blue", alpha=0.25, lw=0)
        ax.plot(epochs, e, color="tab:blue", lw=1, label="sampled energy")
        wm = history.windowed(window)
        if len(wm):
            ax.plot(np.arange(window - 1, len(e)), wm, color="navy", lw=1.5,
                    label=f"{window}-epoch mean")
    if exact_energy is not None:
        ax.axhline(exact_energy, color="k", ls="--", lw=1, label=f"exact  {exact_energy:.5f}")
    ax.set_xlabel("epoch")
    ax.set_ylabel("energy")
    if title:
        ax.set_title(title)
    ax.legend(frameon=False)
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
    return path


def plot_distribution(empirical, exact, path, title=None):
    """Sorted exact probabilities against the sampled ones."""
    order = np.argsort(exact)
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(np.asarray(exact)[order], "k-", lw=1, label="Boltzmann")
    ax.plot(np.asarray(empirical)[order], "r.", ms=2, label="sampled")
    ax.set_xlabel("state (sorted)")
    ax.set_ylabel("probability")
    if title:
        ax.set_title(title)
    ax.legend(frameon=False)
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
    return path
