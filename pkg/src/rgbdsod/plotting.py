"""Figures written next to the JSON/CSV reports."""

from __future__ import annotations

from pathlib import Path
from typing import Mapping, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

RC = {
    "font.size": 9,
    "axes.labelsize": 9,
    "axes.titlesize": 10,
    "legend.fontsize": 8,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "figure.dpi": 100,
    "savefig.dpi": 120,
}
# PNG metadata otherwise embeds the matplotlib version string
_META = {"Software": None}


def _save(fig, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, bbox_inches="tight", metadata=_META)
    plt.close(fig)
    return path


def plot_pr_curves(curves: Mapping[str, tuple[np.ndarray, np.ndarray]], path: str | Path,
                   title: str = "Precision-recall") -> Path:
    """``curves`` maps a label to (precision, recall) arrays over thresholds 0..255."""
    with plt.rc_context(RC):
        fig, ax = plt.subplots(figsize=(4.0, 3.4))
        for label, (p, r) in curves.items():
            ax.plot(r, p, lw=1.4, label=label)
        ax.set_xlim(0, 1)
        ax.set_ylim(0, 1.02)
        ax.set_xlabel("Recall")
        ax.set_ylabel("Precision")
        ax.set_title(title)
        ax.grid(alpha=0.3, lw=0.5)
        if len(curves) > 1:
            ax.legend(loc="lower left", frameon=False)
        return _save(fig, path)


def plot_training_curves(records: Sequence[dict], path: str | Path) -> Path:
    steps = [r["step"] for r in records]
    with plt.rc_context(RC):
        fig, (ax, ax_lr) = plt.subplots(2, 1, figsize=(4.8, 4.2), sharex=True,
                                        gridspec_kw={"height_ratios": [3, 1]})
        for key, style in (("L", "-"), ("L_s", "--"), ("L_e", ":")):
            ax.plot(steps, [r[key] for r in records], style, lw=1.2, label=key)
        ax.set_yscale("log")
        ax.set_ylabel("loss")
        ax.legend(frameon=False)
        ax_lr.plot(steps, [r["lr"] for r in records], color="0.3", lw=1.0)
        ax_lr.set_yscale("log")
        ax_lr.set_ylabel("lr")
        ax_lr.set_xlabel("step")
        return _save(fig, path)


def plot_ablation(table: Mapping[str, Mapping[str, float]], path: str | Path) -> Path:
    names = list(table)
    x = np.arange(len(names))
    with plt.rc_context(RC):
        fig, axes = plt.subplots(1, 3, figsize=(9.0, 3.0))
        for ax, key, label in zip(axes, ("s_measure", "f_max", "mae"),
                                  ("S-measure", "F-max", "MAE")):
            ax.bar(x, [table[n][key] for n in names], color="0.55", width=0.7)
            ax.set_xticks(x)
            ax.set_xticklabels(names, rotation=45, ha="right")
            ax.set_title(label)
        fig.tight_layout()
        return _save(fig, path)
