"""Figure rendering for the report-producing CLI paths.

Figures are drawn on explicit Figure objects (no pyplot state) and saved
through save_figure, which strips the encoder's Software tag so a rerun
with the same inputs writes a byte-identical PNG.
"""

from collections import defaultdict

import numpy as np
from matplotlib.backends.backend_agg import FigureCanvasAgg
from matplotlib.figure import Figure

from .errors import DataError

_METHOD_COLORS = {
    "adatest": "#1f77b4",
    "mero": "#ff7f0e",
    "triage": "#2ca02c",
}


def save_figure(fig: Figure, path) -> None:
    FigureCanvasAgg(fig)
    fig.savefig(path, format="png", dpi=100, metadata={"Software": None})


def coverage_figure(traces: dict) -> Figure:
    """Coverage-versus-iteration curves, one line per labelled trace.

    Each value is a sequence of rows carrying .iteration and .coverage_pct
    (TraceRow or anything shaped like it).
    """
    if not traces:
        raise DataError("no traces to plot")
    fig = Figure(figsize=(6.0, 4.0))
    ax = fig.add_subplot(111)
    for label, rows in traces.items():
        xs = [r.iteration for r in rows]
        ys = [r.coverage_pct for r in rows]
        ax.plot(xs, ys, marker="o", markersize=3, label=label)
    ax.set_xlabel("iteration")
    ax.set_ylabel("rare-node coverage (%)")
    ax.set_ylim(-2, 105)
    ax.grid(True, alpha=0.3)
    ax.legend(loc="lower right", fontsize=8)
    fig.tight_layout()
    return fig


def campaign_figure(reports) -> Figure:
    """Side-by-side summary of a detection campaign: test-set sizes on a
    log axis, trigger and Trojan coverage as grouped bars."""
    reports = list(reports)
    if not reports:
        raise DataError("no reports to plot")
    circuits = sorted({r.circuit for r in reports})
    methods = sorted({r.method for r in reports})
    by_key = {(r.circuit, r.method): r for r in reports}

    fig = Figure(figsize=(9.0, 4.0))
    ax_size, ax_cov = fig.subplots(1, 2)

    x = np.arange(len(circuits), dtype=np.float64)
    span = 0.8
    w = span / max(1, len(methods))
    for mi, method in enumerate(methods):
        offs = x - span / 2 + (mi + 0.5) * w
        sizes = [max(by_key[(c, method)].test_vector_count, 0.5)
                 if (c, method) in by_key else np.nan for c in circuits]
        color = _METHOD_COLORS.get(method)
        ax_size.bar(offs, sizes, width=w * 0.92, label=method, color=color)
        trig = [by_key[(c, method)].trigger_coverage_pct
                if (c, method) in by_key else np.nan for c in circuits]
        troj = [by_key[(c, method)].trojan_coverage_pct
                if (c, method) in by_key else np.nan for c in circuits]
        ax_cov.bar(offs, trig, width=w * 0.46, color=color, label=f"{method} trigger")
        ax_cov.bar(offs + w * 0.46, troj, width=w * 0.46, color=color, alpha=0.45,
                   label=f"{method} trojan")

    for ax in (ax_size, ax_cov):
        ax.set_xticks(x)
        ax.set_xticklabels(circuits)
        ax.grid(True, axis="y", alpha=0.3)
    ax_size.set_yscale("log")
    ax_size.set_ylabel("test vectors (mean)")
    ax_size.legend(fontsize=8)
    ax_cov.set_ylabel("coverage (%)")
    ax_cov.set_ylim(0, 105)
    ax_cov.legend(fontsize=7, ncols=2)
    fig.tight_layout()
    return fig


def per_trojan_table(reports) -> str:
    """Flat CSV of the per-Trojan rows across all reports."""
    lines = ["circuit,method,trojan,trigger_coverage_pct,detection_rate_pct,detected"]
    grouped = defaultdict(list)
    for r in reports:
        grouped[(r.circuit, r.method)] = r.per_trojan
    for (circuit, method), rows in grouped.items():
        for row in rows:
            lines.append(
                f"{circuit},{method},{row['id']},{row['trigger_coverage_pct']:.6g},"
                f"{row['detection_rate_pct']:.6g},{int(row['detected'])}"
            )
    return "\n".join(lines) + "\n"
