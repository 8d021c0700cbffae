"""Rendering of report figures next to the delimited outputs.

Every renderer takes already-emitted records, so the figures are always
reproducible from the line-delimited files alone.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def _save(fig, path: Path) -> Path:
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path


def render_loss_curves(reports: list[dict], path: str | Path) -> Path:
    """Loss components per epoch, with the phase boundary marked."""
    epochs = [r for r in reports if r.get("record") == "epoch"]
    fig, ax = plt.subplots(figsize=(7, 4.5))
    x = np.arange(len(epochs))
    for key, label in (("l_task", "task"), ("l_margin", "margin"),
                       ("l_rec", "recognition"), ("l_imp", "importance"),
                       ("l_total", "total")):
        y = np.array([r.get(key, np.nan) for r in epochs], dtype=float)
        if np.isfinite(y).any():
            ax.plot(x, y, label=label, linewidth=1.2)
    phase1 = sum(1 for r in epochs if r.get("phase") == 1)
    if 0 < phase1 < len(epochs):
        ax.axvline(phase1 - 0.5, color="gray", linestyle="--", linewidth=1,
                   label="phase boundary")
    ax.set_xlabel("epoch")
    ax.set_ylabel("loss")
    ax.legend(fontsize=8)
    ax.set_title("training losses")
    return _save(fig, Path(path))


def render_auc_curve(reports: list[dict], path: str | Path,
                     test_auc: float | None = None) -> Path:
    epochs = [r for r in reports if r.get("record") == "epoch"]
    fig, ax = plt.subplots(figsize=(7, 4.5))
    x = np.arange(len(epochs))
    y = np.array([r.get("auc_valid", np.nan) for r in epochs], dtype=float)
    ax.plot(x, y, label="validation", color="tab:blue", linewidth=1.2)
    if test_auc is not None:
        ax.axhline(test_auc, color="tab:red", linestyle=":", linewidth=1,
                   label=f"test = {test_auc:.3f}")
    ax.set_xlabel("epoch")
    ax.set_ylabel("ROC-AUC")
    ax.set_ylim(0.0, 1.0)
    ax.legend(fontsize=8)
    ax.set_title("ROC-AUC")
    return _save(fig, Path(path))


def render_attribution_histogram(records: list[dict], path: str | Path) -> Path:
    """Distribution of per-fragment aggregate attribution scores."""
    values = [s for r in records for s in r.get("fragment_scores", [])]
    fig, ax = plt.subplots(figsize=(6, 4))
    if values:
        ax.hist(values, bins=40, color="tab:purple", alpha=0.8)
    ax.axvline(0.0, color="black", linewidth=0.8)
    ax.set_xlabel("fragment attribution")
    ax.set_ylabel("count")
    ax.set_title("attribution scores")
    return _save(fig, Path(path))


def render_routing_usage(records: list[dict], path: str | Path) -> Path:
    """Mean routing score per expert for both banks."""
    r_pos = np.array([r["r_pos"] for r in records], dtype=float)
    r_neg = np.array([r["r_neg"] for r in records], dtype=float)
    k = r_pos.shape[1] if r_pos.size else 0
    fig, ax = plt.subplots(figsize=(6, 4))
    if k:
        xs = np.arange(k)
        width = 0.38
        ax.bar(xs - width / 2, r_pos.mean(axis=0), width,
               label="positive bank", color="tab:red", alpha=0.8)
        ax.bar(xs + width / 2, r_neg.mean(axis=0), width,
               label="negative bank", color="tab:blue", alpha=0.8)
        ax.set_xticks(xs)
    ax.set_xlabel("expert")
    ax.set_ylabel("mean routing score")
    ax.legend(fontsize=8)
    ax.set_title("expert usage")
    return _save(fig, Path(path))


def render_per_task_auc(task_names: list[str], per_task: np.ndarray,
                        path: str | Path) -> Path:
    fig, ax = plt.subplots(figsize=(max(6, 0.35 * len(task_names)), 4))
    xs = np.arange(len(task_names))
    ax.bar(xs, np.nan_to_num(per_task, nan=0.0), color="tab:green", alpha=0.8)
    ax.axhline(0.5, color="black", linewidth=0.8, linestyle="--")
    ax.set_xticks(xs)
    ax.set_xticklabels(task_names, rotation=90, fontsize=6)
    ax.set_ylabel("ROC-AUC")
    ax.set_ylim(0.0, 1.0)
    ax.set_title("per-task ROC-AUC")
    return _save(fig, Path(path))
