"""Figures written next to the tabular outputs (Agg backend, PNG files)."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

# png metadata carries the matplotlib version; drop it so reruns are byte-identical
_SAVE_KW = {"dpi": 100, "metadata": {"Software": None}}


def roi_scatter(report, path, title: str | None = None):
    """Truth vs reconstructed ROI means with identity and regression lines."""
    x = np.array([row["truth_mean"] for row in report.rois])
    y = np.array([row["recon_mean"] for row in report.rois])
    fig, ax = plt.subplots(figsize=(5, 5))
    ax.scatter(x, y, s=10, alpha=0.6, color="tab:blue", label="ROI means")
    if x.size:
        lo = min(x.min(), y.min())
        hi = max(x.max(), y.max())
        ax.plot([lo, hi], [lo, hi], "k--", lw=1, label="identity")
        if report.slope is not None:
            xs = np.array([lo, hi])
            ax.plot(xs, report.slope * xs + report.intercept, color="tab:red", lw=1.5,
                    label=f"regression (r = {report.r:.4f})")
    ax.set_xlabel("true ROI mean")
    ax.set_ylabel(f"{report.method} ROI mean")
    ax.set_title(title or f"Regional uptake: {report.method}")
    ax.legend(loc="upper left", fontsize=8)
    fig.tight_layout()
    fig.savefig(path, **_SAVE_KW)
    plt.close(fig)


def loss_curve(history: list[dict], path):
    steps = [h["step"] for h in history]
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.semilogy(steps, [h["train_loss"] for h in history], lw=0.8, label="train (batch)")
    val = [(h["step"], h["val_loss"]) for h in history if h["val_loss"] is not None]
    if val:
        ax.semilogy(*zip(*val), "o-", color="tab:red", label="validation")
    ax.set_xlabel("step")
    ax.set_ylabel("MSE")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, **_SAVE_KW)
    plt.close(fig)


def image_panels(images: dict[str, np.ndarray], path, vmax: float | None = None):
    """Side-by-side grayscale panels sharing one intensity window."""
    n = len(images)
    fig, axes = plt.subplots(1, n, figsize=(3 * n, 3.2), squeeze=False)
    top = vmax if vmax is not None else max(float(np.max(v)) for v in images.values())
    for ax, (name, img) in zip(axes[0], images.items()):
        arr = np.asarray(img)
        ax.imshow(arr[:, :, 0] if arr.ndim == 3 else arr, cmap="gray", vmin=0, vmax=top)
        ax.set_title(name)
        ax.axis("off")
    fig.tight_layout()
    fig.savefig(path, **_SAVE_KW)
    plt.close(fig)


def timing_bars(table: dict[str, dict], path):
    methods = list(table)
    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.bar(methods, [table[m]["median_ms"] for m in methods], color="tab:gray")
    ax.set_yscale("log")
    ax.set_ylabel("median ms / slice")
    fig.tight_layout()
    fig.savefig(path, **_SAVE_KW)
    plt.close(fig)
