"""Matplotlib figures for the report and eval subcommands (Agg backend, files only)."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

STRATEGY_COLORS = {"hybrid": "tab:red", "rgb": "tab:orange", "pos": "tab:purple",
                   "random": "tab:gray", "fvs": "tab:blue"}


def _save(fig, path) -> None:
    fig.tight_layout()
    # fixed metadata keeps the PNG bytes reproducible
    fig.savefig(path, dpi=120, metadata={"Software": None})
    plt.close(fig)


def psnr_curves(curves: dict, path, metric: str = "PSNR (dB)") -> None:
    """``curves`` maps strategy -> (rounds, mean, std)."""
    fig, ax = plt.subplots(figsize=(6, 4))
    for name, (rounds, mean, std) in sorted(curves.items()):
        color = STRATEGY_COLORS.get(name)
        ax.plot(rounds, mean, marker="o", ms=3, label=name, color=color)
        if std is not None and np.any(np.asarray(std) > 0):
            ax.fill_between(rounds, np.asarray(mean) - std, np.asarray(mean) + std,
                            alpha=0.15, color=color)
    ax.set_xlabel("selection round")
    ax.set_ylabel(f"test {metric}")
    ax.grid(alpha=0.3)
    ax.legend()
    _save(fig, path)


def final_bars(table: list[dict], path, key: str = "final_psnr_mean",
               err: str = "final_psnr_std") -> None:
    fig, ax = plt.subplots(figsize=(5, 3.5))
    names = [r["strategy"] for r in table]
    vals = [r[key] for r in table]
    errs = [r[err] for r in table]
    ax.bar(names, vals, yerr=errs, capsize=4,
           color=[STRATEGY_COLORS.get(n, "tab:green") for n in names])
    lo = min(v - e for v, e in zip(vals, errs))
    hi = max(v + e for v, e in zip(vals, errs))
    pad = max(0.1, 0.2 * (hi - lo))
    ax.set_ylim(lo - pad, hi + pad)
    ax.set_ylabel("final test PSNR (dB)")
    ax.grid(axis="y", alpha=0.3)
    _save(fig, path)


def sparsification(curve, path, title: str = "") -> None:
    fig, ax = plt.subplots(figsize=(4.5, 3.5))
    ax.plot(curve.fractions_removed, curve.error_by_uncertainty, label="by uncertainty")
    ax.plot(curve.fractions_removed, curve.error_by_oracle, label="oracle", ls="--")
    ax.set_xlabel("fraction of pixels removed")
    ax.set_ylabel("normalized remaining error")
    if title:
        ax.set_title(title)
    ax.legend()
    ax.grid(alpha=0.3)
    _save(fig, path)


def uncertainty_scatter(uncertainty, error, path, srcc_value: float | None = None) -> None:
    fig, ax = plt.subplots(figsize=(4.5, 3.5))
    ax.scatter(uncertainty, error, s=14)
    ax.set_xlabel("mean predicted uncertainty")
    ax.set_ylabel("view MSE")
    if srcc_value is not None:
        ax.set_title(f"SRCC = {srcc_value:.3f}")
    ax.grid(alpha=0.3)
    _save(fig, path)


def view_panel(rendered, gt, uncertainty, path) -> None:
    fig, axes = plt.subplots(1, 3, figsize=(8, 3))
    for ax, img, title in zip(axes, (rendered, gt), ("rendered", "ground truth")):
        ax.imshow(np.clip(img, 0, 1))
        ax.set_title(title)
    im = axes[2].imshow(uncertainty, cmap="magma")
    axes[2].set_title("uncertainty")
    fig.colorbar(im, ax=axes[2], fraction=0.046)
    for ax in axes:
        ax.axis("off")
    _save(fig, path)
