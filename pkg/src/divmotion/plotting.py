"""Report figures rendered to image files."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def _save(fig, path):
    fig.tight_layout()
    fig.savefig(path, dpi=100, metadata={"Software": None})
    plt.close(fig)


def plot_training_curves(history: list, path) -> None:
    """Loss terms (log scale) and validation APD / ADE per epoch."""
    epochs = [r["epoch"] for r in history]
    terms = [k for k in history[0] if k not in ("epoch", "lr", "APD", "ADE", "seconds", "total")]
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(11, 4))
    for k in terms + ["total"]:
        vals = np.array([r[k] for r in history], dtype=float)
        if np.all(vals > 0):
            ax1.plot(epochs, vals, label=k, lw=2 if k == "total" else 1)
    ax1.set_yscale("log")
    ax1.set_xlabel("epoch")
    ax1.set_title("loss terms")
    ax1.legend(fontsize=7, ncol=2)
    ax2.plot(epochs, [r["APD"] for r in history], label="APD")
    ax2b = ax2.twinx()
    ax2b.plot(epochs, [r["ADE"] for r in history], color="tab:red", label="ADE")
    ax2.set_xlabel("epoch")
    ax2.set_ylabel("APD")
    ax2b.set_ylabel("ADE", color="tab:red")
    ax2.set_title("validation")
    _save(fig, path)


def plot_prior_curve(curve: list, path) -> None:
    fig, ax = plt.subplots(figsize=(5, 3.5))
    e = [r["epoch"] for r in curve]
    ax.plot(e, [r["train_nll"] for r in curve], label="train")
    ax.plot(e, [r["heldout_nll"] for r in curve], label="held-out")
    ax.set_xlabel("epoch")
    ax.set_ylabel("mean NLL")
    ax.legend()
    _save(fig, path)


def plot_eval(reports: list, path) -> None:
    """Grouped bars of the headline metrics and per-part APD, one group per model."""
    keys = ["APD", "ADE", "FDE", "MMADE", "MMFDE"]
    parts = sorted({k for r in reports for k in r.part_apd})
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(11, 4))
    width = 0.8 / max(1, len(reports))
    x = np.arange(len(keys))
    for i, r in enumerate(reports):
        ax1.bar(x + i * width, [getattr(r, k) for k in keys], width, label=r.model or f"model{i}")
    ax1.set_xticks(x + width * (len(reports) - 1) / 2, keys)
    ax1.set_title("metrics (m)")
    ax1.legend(fontsize=8)
    xp = np.arange(len(parts))
    for i, r in enumerate(reports):
        ax2.bar(xp + i * width, [r.part_apd.get(p, 0.0) for p in parts], width, label=r.model or f"model{i}")
    ax2.set_xticks(xp + width * (len(reports) - 1) / 2, parts)
    ax2.set_title("per-part APD (m)")
    _save(fig, path)
