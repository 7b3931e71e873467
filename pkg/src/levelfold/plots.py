"""Figures for the benchmark report."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def _grouped_bars(report, kind: str, title: str, path: Path) -> Path:
    names = [r.name for r in report.rows]
    variants = ("balanced", "linearized", "folded")
    x = np.arange(len(names))
    width = 0.27
    fig, ax = plt.subplots(figsize=(max(6, len(names) * 0.8), 3.6))
    for i, v in enumerate(variants):
        vals = [r.ratio(kind, v) for r in report.rows]
        heights = [np.nan if h is None else h for h in vals]
        ax.bar(x + (i - 1) * width, heights, width, label=v)
    ax.axhline(1.0, color="black", linewidth=0.8)
    ax.set_xticks(x)
    ax.set_xticklabels(names, rotation=35, ha="right")
    ax.set_ylabel("ratio to baseline")
    ax.set_title(title)
    ax.legend(fontsize="small")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def plot_ratios(report, out_dir: Path) -> list[Path]:
    out_dir = Path(out_dir)
    return [
        _grouped_bars(report, "static", "static instruction count", out_dir / "static_size.png"),
        _grouped_bars(report, "steps", "mean executed instructions", out_dir / "dynamic_steps.png"),
    ]
