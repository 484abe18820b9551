"""Figure renderers: per-client relative-change bars and mean-vs-worst-k%
scatter charts with seed error bars.

Rendering is deterministic: a fixed hash salt, no date metadata, and a fixed
style, so regenerating from the same inputs reproduces the SVG byte for
byte. Inputs are read-only; nothing is recomputed beyond what the files
already carry.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

from .schema import SchemaError, load_pf_report, load_summary, summary_label

_BAR_COLOR = "#4878d0"
_POINT_COLORS = (
    "#4878d0", "#ee854a", "#6acc64", "#d65f5f", "#956cb4",
    "#8c613c", "#dc7ec0", "#797979", "#d5bb67", "#82c6e2",
)


@dataclass(frozen=True)
class FigureJob:
    inputs: tuple[str, ...]
    kind: str  # relchange_bars | mean_vs_worstk
    out_path: str
    image_format: str = "svg"  # svg | png

    def __post_init__(self) -> None:
        if self.kind not in ("relchange_bars", "mean_vs_worstk"):
            raise SchemaError(f"unknown figure kind {self.kind!r}")
        if self.image_format not in ("svg", "png"):
            raise SchemaError(f"unknown image format {self.image_format!r}")


def _save(fig, out_path: str, image_format: str) -> None:
    plt.rcParams["svg.hashsalt"] = "plotkit"
    metadata = {"Date": None} if image_format == "svg" else None
    tmp = out_path + ".tmp"
    fig.savefig(tmp, format=image_format, metadata=metadata, dpi=150)
    plt.close(fig)
    os.replace(tmp, out_path)


def plot_relchange(pf_report_path: str, out_path: str, image_format: str = "svg") -> dict:
    """One bar per client at its relative accuracy change, zero line drawn,
    weighted aggregate annotated. Returns exactly what was drawn."""
    report = load_pf_report(pf_report_path)
    entries = sorted(report["per_client"], key=lambda e: e["client_id"])
    ids = [e["client_id"] for e in entries]
    values = [e["rel_change"] for e in entries]
    aggregate = report["weighted_aggregate"]

    fig, ax = plt.subplots(figsize=(7.0, 4.0))
    ax.bar(range(len(ids)), values, color=_BAR_COLOR, width=0.7)
    ax.axhline(0.0, color="black", linewidth=0.8)
    ax.set_xticks(range(len(ids)))
    ax.set_xticklabels([str(i) for i in ids])
    ax.set_xlabel("client")
    ax.set_ylabel("relative accuracy change")
    ax.set_title(f"weighted aggregate: {aggregate:+.4%}")
    fig.tight_layout()
    _save(fig, out_path, image_format)
    return {"client_ids": ids, "values": values, "weighted_aggregate": aggregate}


def plot_mean_vs_worstk(
    summary_paths: list[str],
    out_path: str,
    image_format: str = "svg",
    k: str | None = None,
) -> dict:
    """Scatter of (mean accuracy, worst-k% accuracy) per run with seed
    error bars from the summaries' own mean/std aggregates."""
    if not summary_paths:
        raise SchemaError("at least one summary file is required")
    points = []
    for path in summary_paths:
        summary = load_summary(path)
        worst_k = summary["aggregate"]["worst_k"]
        key = k if k is not None else sorted(worst_k, key=float)[0]
        if key not in worst_k:
            raise SchemaError(f"missing key {key!r} in aggregate.worst_k of {path}")
        points.append(
            {
                "label": summary_label(summary, path),
                "x": summary["aggregate"]["mean_unweighted"]["mean"],
                "xerr": summary["aggregate"]["mean_unweighted"]["std"],
                "y": worst_k[key]["mean"],
                "yerr": worst_k[key]["std"],
                "k": key,
            }
        )

    fig, ax = plt.subplots(figsize=(5.5, 4.5))
    for i, pt in enumerate(points):
        color = _POINT_COLORS[i % len(_POINT_COLORS)]
        ax.errorbar(
            pt["x"], pt["y"], xerr=pt["xerr"], yerr=pt["yerr"],
            fmt="o", color=color, capsize=3, label=pt["label"],
        )
    ax.set_xlabel("mean accuracy")
    ax.set_ylabel(f"worst-{points[0]['k']}% accuracy")
    ax.legend(loc="lower right", fontsize=8)
    fig.tight_layout()
    _save(fig, out_path, image_format)
    return {"points": points}


def render(job: FigureJob) -> dict:
    if job.kind == "relchange_bars":
        if len(job.inputs) != 1:
            raise SchemaError("relchange_bars takes exactly one report")
        return plot_relchange(job.inputs[0], job.out_path, job.image_format)
    return plot_mean_vs_worstk(list(job.inputs), job.out_path, job.image_format)
