"""Figure rendering for the reporting subcommands.

Each report path (metrics, stats, validate) writes a small matplotlib
figure next to its JSON/TSV output. Rendering is headless (Agg) and the
PNG metadata is pinned so identical runs produce identical bytes.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

_PNG_META = {"Software": "partlat"}


def _save(fig, path) -> None:
    fig.savefig(path, dpi=120, metadata=_PNG_META)
    plt.close(fig)


def render_metric_report(report: dict, path) -> None:
    """Bar chart of the four headline metrics."""
    names = ["chamfer", "emd", "voxel_iou", "fscore"]
    values = [report[n] for n in names]
    fig, ax = plt.subplots(figsize=(5.0, 3.2))
    bars = ax.bar(names, values, color=["#4878d0", "#ee854a", "#6acc64", "#d65f5f"])
    for bar, v in zip(bars, values):
        ax.annotate(f"{v:.4g}", (bar.get_x() + bar.get_width() / 2, bar.get_height()),
                    ha="center", va="bottom", fontsize=8)
    ax.set_ylabel("value")
    ax.set_title(f"geometry metrics (EMD mode: {report['emd_mode']})")
    fig.tight_layout()
    _save(fig, path)


def render_predicate_histogram(histogram: dict[str, int], path, title: str = "predicate histogram") -> None:
    names = sorted(histogram)
    counts = [histogram[n] for n in names]
    fig, ax = plt.subplots(figsize=(max(5.0, 0.45 * max(len(names), 1) + 2.0), 3.2))
    if names:
        ax.bar(names, counts, color="#4878d0")
        ax.tick_params(axis="x", rotation=60, labelsize=7)
    else:
        ax.text(0.5, 0.5, "no triplets", ha="center", va="center", transform=ax.transAxes)
    ax.set_ylabel("count")
    ax.set_title(title)
    fig.tight_layout()
    _save(fig, path)


def render_validation_summary(counts: dict[str, int], path) -> None:
    order = ["valid", "violated", "unchecked"]
    values = [counts.get(k, 0) for k in order]
    fig, ax = plt.subplots(figsize=(4.2, 3.0))
    ax.bar(order, values, color=["#6acc64", "#d65f5f", "#b8b8b8"])
    for x, v in zip(order, values):
        ax.annotate(str(v), (x, v), ha="center", va="bottom", fontsize=9)
    ax.set_ylabel("triplets")
    ax.set_title("validation outcome")
    fig.tight_layout()
    _save(fig, path)
