"""Figure rendering for the report paths.

Each function takes the same row dicts that go into the corresponding CSV
and writes a PNG next to it. Rendering is headless (Agg).
"""

from __future__ import annotations

from pathlib import Path
from typing import Mapping, Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

__all__ = [
    "save_limit_figure",
    "save_sweep_figure",
    "save_trajectory_figure",
    "save_table_figure",
]

_CLASS_COLORS = {0: "tab:gray", 1: "tab:red"}


def save_limit_figure(rows: Sequence[Mapping[str, object]], path: str | Path) -> None:
    """Limit class-1 traffic share against class size, one line per beta."""
    fig, ax = plt.subplots(figsize=(6, 4))
    betas = sorted({float(r["beta"]) for r in rows})
    for beta in betas:
        pts = [
            (int(r["m1"]), float(r["limit_share"]))
            for r in rows
            if float(r["beta"]) == beta and r["limit_share"] != ""
        ]
        pts.sort()
        ax.plot([p[0] for p in pts], [p[1] for p in pts], marker="o", label=f"beta={beta:g}")
    ax.axhline(0.5, color="black", lw=0.8, ls=":")
    ax.set_xlabel("class-1 size M1")
    ax.set_ylabel("class-1 limit traffic share")
    ax.set_ylim(0, 1)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def save_sweep_figure(rows: Sequence[Mapping[str, object]], path: str | Path) -> None:
    """Mean CTR against class size with 95% error bars, one line per axis value."""
    fig, ax = plt.subplots(figsize=(6, 4))
    axis = str(rows[0]["axis"]) if rows else "axis"
    for value in sorted({float(r["axis_value"]) for r in rows}):
        cell = sorted(
            (int(r["m1"]), float(r["mean_ctr"]), float(r["ci_low"]), float(r["ci_high"]))
            for r in rows
            if float(r["axis_value"]) == value
        )
        m1s = [c[0] for c in cell]
        means = [c[1] for c in cell]
        err_low = [c[1] - c[2] for c in cell]
        err_high = [c[3] - c[1] for c in cell]
        ax.errorbar(m1s, means, yerr=[err_low, err_high], marker="o", capsize=3,
                    label=f"{axis}={value:g}")
    ax.axhline(0.5, color="black", lw=0.8, ls=":")
    ax.set_xlabel("class-1 size M1")
    ax.set_ylabel("mean class-1 CTR")
    ax.set_ylim(0, 1)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def save_trajectory_figure(
    rows: Sequence[tuple[int, int, int, int, int]], path: str | Path
) -> None:
    """Rank of every item over simulation steps; class-1 items highlighted."""
    fig, ax = plt.subplots(figsize=(7, 4))
    by_item: dict[int, tuple[int, list[int], list[int]]] = {}
    for step, item, cls, rank, _clicks in rows:
        entry = by_item.setdefault(item, (cls, [], []))
        entry[1].append(step)
        entry[2].append(rank)
    for item, (cls, steps, ranks) in sorted(by_item.items()):
        ax.plot(steps, ranks, color=_CLASS_COLORS[cls], lw=1.4 if cls else 0.9,
                alpha=0.95 if cls else 0.6)
    ax.invert_yaxis()
    ax.set_xlabel("user step")
    ax.set_ylabel("rank (1 = top)")
    handles = [plt.Line2D([], [], color=_CLASS_COLORS[c], label=f"class {c}") for c in (0, 1)]
    ax.legend(handles=handles, loc="best")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def save_table_figure(rows: Sequence[Mapping[str, object]], path: str | Path) -> None:
    """Grouped bars of mean class-1 share per condition, dynamic vs static."""
    fig, ax = plt.subplots(figsize=(6, 4))
    dynamic = [r for r in rows if r["dynamic"] in (True, "True")]
    static = [r for r in rows if r["dynamic"] in (False, "False")]
    for offset, group, label in ((-0.2, dynamic, "dynamic"), (0.2, static, "static")):
        xs = [i + offset for i in range(len(group))]
        ax.bar(xs, [float(r["mean_share"]) for r in group], width=0.4, label=label)
    labels = [f"{r['condition']}\nM1={r['m1']}" for r in dynamic] or [
        f"{r['condition']}\nM1={r['m1']}" for r in static
    ]
    ax.set_xticks(range(len(labels)))
    ax.set_xticklabels(labels)
    ax.axhline(0.5, color="black", lw=0.8, ls=":")
    ax.set_ylabel("mean class-1 traffic share")
    ax.set_ylim(0, 1)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
