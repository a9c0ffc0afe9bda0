"""Figures for the ``report`` command; PNG files only, no display needed."""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
from matplotlib.ticker import MaxNLocator  # noqa: E402
import numpy as np  # noqa: E402

from .evaluation import MetricsReport  # noqa: E402
from .taxonomy import DistributionReport  # noqa: E402


def _run_label(r: MetricsReport) -> str:
    return f"{r.model_id} ({r.quantization})" if r.quantization else (r.model_id or "run")


def _save(fig, path: Path) -> Path:
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def plot_distribution(report: DistributionReport, axis: str, path) -> Path:
    """Bar chart of item counts per question type or content label."""
    counts = getattr(report, axis)
    labels = list(counts)
    fig, ax = plt.subplots(figsize=(max(5.0, 0.7 * len(labels)), 3.5))
    bars = ax.bar(labels, [counts[k] for k in labels], color="#4c72b0")
    ax.bar_label(bars, fontsize=8)
    ax.set_ylabel("questions")
    ax.yaxis.set_major_locator(MaxNLocator(integer=True))
    ax.set_title(f"Questions by {'type' if axis == 'qtype' else 'content'} (n={report.n})")
    ax.tick_params(axis="x", rotation=45, labelsize=8)
    return _save(fig, Path(path))


def plot_metrics(reports: Sequence[MetricsReport], path) -> Path:
    """Grouped bars of the headline metrics, on the x100 scale."""
    names = ["hard_accuracy", "soft_accuracy", "mean_confidence"]
    x = np.arange(len(reports))
    width = 0.8 / len(names)
    fig, ax = plt.subplots(figsize=(max(5.0, 1.4 * len(reports)), 3.5))
    for i, name in enumerate(names):
        ax.bar(x + i * width, [100 * getattr(r, name) for r in reports], width, label=name.replace("_", " "))
    ax.set_xticks(x + width * (len(names) - 1) / 2, [_run_label(r) for r in reports],
                  rotation=30, ha="right", fontsize=8)
    ax.set_ylim(0, 100)
    ax.legend(fontsize=8)
    ax.set_title("Accuracy and confidence")
    return _save(fig, Path(path))


def plot_breakdown(reports: Sequence[MetricsReport], axis: str, path) -> Path:
    """Heatmap of soft accuracy per run and category; missing cells are blank."""
    labels = []
    for r in reports:
        for lab in r.breakdowns.get(axis, {}):
            if lab not in labels:
                labels.append(lab)
    grid = np.full((len(reports), len(labels)), np.nan)
    for i, r in enumerate(reports):
        for j, lab in enumerate(labels):
            sub = r.breakdowns.get(axis, {}).get(lab)
            if sub is not None:
                grid[i, j] = 100 * sub.soft_accuracy
    fig, ax = plt.subplots(figsize=(max(5.0, 0.8 * len(labels) + 2), 1.0 + 0.5 * len(reports)))
    im = ax.imshow(np.ma.masked_invalid(grid), vmin=0, vmax=100, cmap="viridis", aspect="auto")
    for (i, j), v in np.ndenumerate(grid):
        if not np.isnan(v):
            ax.text(j, i, f"{v:.1f}", ha="center", va="center", fontsize=7,
                    color="white" if v < 60 else "black")
    ax.set_xticks(range(len(labels)), labels, rotation=45, ha="right", fontsize=8)
    ax.set_yticks(range(len(reports)), [_run_label(r) for r in reports], fontsize=8)
    fig.colorbar(im, ax=ax, label="soft accuracy")
    return _save(fig, Path(path))


def render_figures(out_dir, reports: Sequence[MetricsReport] = (),
                   distribution: DistributionReport | None = None) -> list[Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    if distribution is not None:
        paths.append(plot_distribution(distribution, "qtype", out / "distribution_qtype.png"))
        paths.append(plot_distribution(distribution, "content", out / "distribution_content.png"))
    if reports:
        paths.append(plot_metrics(reports, out / "metrics.png"))
        for axis in ("qtype", "content"):
            if any(r.breakdowns.get(axis) for r in reports):
                paths.append(plot_breakdown(reports, axis, out / f"soft_accuracy_by_{axis}.png"))
    return paths
