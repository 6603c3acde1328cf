"""Figures written next to the CSV outputs (headless, Agg backend)."""
from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .errors import IoFailure  # noqa: E402


def _save(fig, path) -> Path:
    path = Path(path)
    try:
        fig.savefig(path, dpi=110, bbox_inches="tight", metadata={"Software": None})
    except OSError as e:
        raise IoFailure(f"cannot write figure {path}: {e}") from e
    finally:
        plt.close(fig)
    return path


def plot_losses(losses: dict, path) -> Path:
    """One panel per loss column against step, plus the generator total."""
    names = [k for k in losses if k != "step"]
    fig, axes = plt.subplots(2, (len(names) + 1) // 2, figsize=(12, 5), squeeze=False)
    for ax, name in zip(axes.ravel(), names):
        ax.plot(losses["step"], losses[name], lw=0.8)
        ax.set_title(name, fontsize=9)
        ax.tick_params(labelsize=7)
    for ax in axes.ravel()[len(names):]:
        ax.axis("off")
    fig.supxlabel("step", fontsize=9)
    return _save(fig, path)


def plot_ablation(rows: list[dict], path, key: str = "psnr_final") -> Path:
    """Per-variant bars of the median ``key`` with the individual seeds as dots."""
    variants = list(dict.fromkeys(r["variant"] for r in rows))
    vals = [[r[key] for r in rows if r["variant"] == v] for v in variants]
    med = [float(np.median(v)) for v in vals]
    fig, ax = plt.subplots(figsize=(6, 3.5))
    ax.bar(range(len(variants)), med, color="#8aa", width=0.6)
    for i, v in enumerate(vals):
        ax.plot([i] * len(v), v, "k.", ms=5)
    ax.set_xticks(range(len(variants)), variants, fontsize=8)
    ax.set_ylabel(f"validation {key}" if key.startswith("psnr") else key)
    lo = min(min(v) for v in vals)
    hi = max(max(v) for v in vals)
    pad = 0.1 * (hi - lo) if hi > lo else 1.0
    ax.set_ylim(lo - pad, hi + pad)
    return _save(fig, path)


def plot_basis(xs: np.ndarray, basis: np.ndarray, path, title: str = "") -> Path:
    fig, ax = plt.subplots(figsize=(6, 3))
    ax.plot(xs, basis, lw=0.9)
    ax.set_xlabel("x")
    ax.set_title(title, fontsize=9)
    return _save(fig, path)


def plot_kernels(kernels: np.ndarray, path) -> Path:
    m = kernels.shape[0]
    fig, axes = plt.subplots(1, m, figsize=(2 * m, 2), squeeze=False)
    for ax, k in zip(axes[0], kernels):
        ax.imshow(k, cmap="gray")
        ax.axis("off")
    return _save(fig, path)
