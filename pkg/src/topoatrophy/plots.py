"""
Deterministic SVG figures.

Figures are drawn with matplotlib's object API (no pyplot state) and saved
with a fixed SVG hash salt, text kept as text and no date metadata, so the
same inputs give byte-identical files.
"""

from __future__ import annotations

import warnings

import matplotlib
import numpy as np
from matplotlib.figure import Figure

from .ph_core import PersistenceDiagram

__all__ = ["save_svg", "plot_subject_curves", "plot_group_curves", "plot_diagrams", "plot_slicewise", "plot_synth"]

_RC = {"svg.hashsalt": "topoatrophy", "svg.fonttype": "none", "path.simplify": False}
_AXES = ("sagittal", "coronal", "axial")


def save_svg(fig: Figure, target) -> None:
    with matplotlib.rc_context(_RC):
        fig.savefig(target, format="svg", metadata={"Date": None, "Creator": None})


def _axes_row(n: int = 3, width: float = 4.0, height: float = 3.2):
    with matplotlib.rc_context(_RC):
        fig = Figure(figsize=(width * n, height))
        axs = fig.subplots(1, n, squeeze=False)[0]
    return fig, axs


def plot_subject_curves(items, target) -> None:
    """One panel per axis with one line per ``(label, {axis: L1Curve})`` item."""
    fig, axs = _axes_row()
    for ax, name in zip(axs, _AXES):
        for label, curves in items:
            c = curves[name]
            ax.plot(c.positions, c.values, lw=1.0, label=label)
        ax.set_title(name)
        ax.set_xlabel("normalised slice position")
        ax.set_ylabel("landscape L1 (mm²)")
    if items and len(items) <= 12:
        axs[0].legend(fontsize=7)
    fig.tight_layout()
    save_svg(fig, target)


def plot_group_curves(groups: dict, positions, target) -> list:
    """
    Mean L1 curve per group with a +-1 SD band, one panel per axis.

    ``groups`` maps a group label to a ``(subjects, 3, grid)`` array. An
    empty group is left out and a group with one subject gets no band; both
    produce a warning, which is also returned.
    """
    notes = []
    fig, axs = _axes_row()
    for label in sorted(groups):
        arr = np.asarray(groups[label], dtype=float)
        if arr.size == 0:
            notes.append(f"group {label!r} is empty; omitted from the curve plot")
            continue
        mean = arr.mean(axis=0)
        sd = arr.std(axis=0, ddof=1) if len(arr) > 1 else None
        if sd is None:
            notes.append(f"group {label!r} has one subject; no SD band drawn")
        for k, ax in enumerate(axs):
            (line,) = ax.plot(positions, mean[k], lw=1.5, label=f"{label} (n={len(arr)})")
            if sd is not None:
                ax.fill_between(positions, mean[k] - sd[k], mean[k] + sd[k], color=line.get_color(), alpha=0.25, lw=0)
    for ax, name in zip(axs, _AXES):
        ax.set_title(name)
        ax.set_xlabel("normalised slice position")
        ax.set_ylabel("landscape L1 (mm²)")
    if any(np.asarray(v).size for v in groups.values()):
        axs[0].legend(fontsize=7)
    fig.tight_layout()
    save_svg(fig, target)
    for n in notes:
        warnings.warn(n, stacklevel=2)
    return notes


def plot_diagrams(items, target, title: str = "H2 persistence") -> None:
    """Birth/death scatter of ``(label, PersistenceDiagram)`` items with the diagonal."""
    with matplotlib.rc_context(_RC):
        fig = Figure(figsize=(5, 5))
        ax = fig.subplots()
    hi = 1.0
    for label, d in items:
        d: PersistenceDiagram
        if len(d):
            ax.scatter(d.births, d.deaths, s=8, label=label)
            hi = max(hi, float(np.max(d.pairs)))
    ax.plot([0, hi], [0, hi], color="0.5", lw=0.8)
    ax.set_xlabel("birth")
    ax.set_ylabel("death")
    ax.set_title(title)
    if items and len(items) <= 12:
        ax.legend(fontsize=7)
    fig.tight_layout()
    save_svg(fig, target)


def plot_slicewise(records, target) -> None:
    """Per-position Cohen's d per axis; Bonferroni-significant positions are marked."""
    fig, axs = _axes_row()
    for ax, name in zip(axs, _AXES):
        rows = [r for r in records if r["axis"] == name]
        pos = np.array([r["position"] for r in rows])
        d = np.array([r["cohens_d"] for r in rows], dtype=float)
        rej = np.array([r["reject"] for r in rows], dtype=bool)
        ax.plot(pos, d, lw=1.2)
        if rej.any():
            ax.scatter(pos[rej], d[rej], s=10, color="C3", zorder=3, label="p_adj <= alpha")
            ax.legend(fontsize=7)
        ax.axhline(0.0, color="0.5", lw=0.8)
        ax.set_title(name)
        ax.set_xlabel("normalised slice position")
        ax.set_ylabel("Cohen's d")
    fig.tight_layout()
    save_svg(fig, target)


def plot_synth(volume_loss, metrics: dict, target) -> None:
    """Each metric against relative volume loss, one panel per metric."""
    names = sorted(metrics)
    fig, axs = _axes_row(max(len(names), 1), width=3.6)
    x = np.asarray(volume_loss, dtype=float)
    for ax, name in zip(axs, names):
        ax.scatter(x, metrics[name], s=10)
        ax.set_xlabel("volume loss")
        ax.set_title(name)
    fig.tight_layout()
    save_svg(fig, target)
