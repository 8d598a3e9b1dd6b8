"""Figure rendering for the report-producing commands.

Figures are written next to the CSV they illustrate and must be
byte-identical across reruns, so everything uses the Agg backend with
fixed sizes and no timestamps.
"""

from __future__ import annotations

import math

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt


def render_bounds_figure(rows, path: str, title: str) -> None:
    """Per-partition estimated mass with its exact value and bounds,
    partitions sorted by exact mass."""
    ranked = sorted(rows, key=lambda r: r.exact)
    xs = range(len(ranked))
    fig, ax = plt.subplots(figsize=(8, 5))
    ax.plot(xs, [math.exp(r.log_upper) for r in ranked], color="tab:red",
            lw=0.8, label="upper bound")
    ax.plot(xs, [math.exp(r.log_lower) for r in ranked], color="tab:green",
            lw=0.8, label="lower bound")
    ax.plot(xs, [r.exact for r in ranked], color="black", lw=1.0, label="exact")
    ax.scatter(xs, [r.freq for r in ranked], s=3, color="tab:blue",
               alpha=0.5, label="estimate")
    ax.set_yscale("log")
    ax.set_xlabel("partition (sorted by exact mass)")
    ax.set_ylabel("probability")
    ax.set_title(title)
    ax.legend(loc="lower right", fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def render_fit_figure(trace, path: str, title: str) -> None:
    """Loss components and temperature against the step index."""
    steps = [row.step for row in trace]
    fig, ax = plt.subplots(figsize=(8, 5))
    ax.plot(steps, [row.loss for row in trace], color="black", lw=0.8, label="loss")
    ax.plot(steps, [row.l1 for row in trace], color="tab:blue", lw=0.6, label="l1")
    ax.plot(steps, [row.l2 for row in trace], color="tab:orange", lw=0.6, label="l2")
    ax.set_xlabel("step")
    ax.set_ylabel("loss")
    ax2 = ax.twinx()
    ax2.plot(steps, [row.tau for row in trace], color="tab:green", lw=0.8,
             ls="--", label="tau")
    ax2.set_ylabel("temperature")
    lines, labels = ax.get_legend_handles_labels()
    lines2, labels2 = ax2.get_legend_handles_labels()
    ax.legend(lines + lines2, labels + labels2, loc="upper right", fontsize=8)
    ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
