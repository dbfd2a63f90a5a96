"""Figures written next to the CSV outputs."""

from __future__ import annotations

from pathlib import Path
from typing import Mapping, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

STYLE = {
    "figure.figsize": (6.4, 4.0),
    "figure.dpi": 110,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "legend.frameon": False,
    "legend.fontsize": 8,
}


def _save(fig, path: Path) -> Path:
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
    return path


def plot_levels(report, path: str | Path) -> Path:
    """Level of every subsystem per round: expansion rounds, then shrink rounds."""
    path = Path(path)
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        ids = sorted(report.v0)
        n1 = len(report.phase1)
        for i in ids:
            ys = [r[i] for r in report.phase1] + [r[i] for r in report.levels[1:]]
            ax.plot(range(len(ys)), ys, marker=".", lw=1, label=f"{i}")
        if report.levels:
            ax.axvline(n1 - 1, color="0.5", ls="--", lw=0.8)
        ax.set_xlabel("round")
        ax.set_ylabel("level")
        ax.set_title(f"{report.mode}: {report.verdict}")
        ax.legend(ncol=3, title="subsystem")
        return _save(fig, path)


def plot_sweep(rows: Sequence[Mapping], path: str | Path) -> Path:
    path = Path(path)
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        for method in ("traditional", "direct"):
            pts = [(r["gamma"], r["max_row_sum"]) for r in rows
                   if r["method"] == method and r["max_row_sum"] not in ("", None)]
            if pts:
                g, v = zip(*sorted(pts))
                ax.plot(g, v, marker="o", label=method)
        ax.axhline(0.0, color="k", lw=0.8)
        ax.set_xlabel("uniform level")
        ax.set_ylabel("max row sum")
        ax.legend()
        return _save(fig, path)


def plot_decay(grid: Sequence[float], alphas: Mapping[int, Sequence[float]], path: str | Path) -> Path:
    path = Path(path)
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        for i, a in sorted(alphas.items()):
            ax.plot(grid, a, marker=".", lw=1, label=str(i))
        ax.set_xlabel("level")
        ax.set_ylabel("self-decay rate")
        ax.legend(ncol=3, title="subsystem")
        return _save(fig, path)


def plot_trajectories(times: np.ndarray, V: np.ndarray, gammas: Sequence[float], path: str | Path,
                      ids: Sequence[int] = ()) -> Path:
    """V_i(t) for one trajectory against the envelope levels."""
    path = Path(path)
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        for k in range(V.shape[1]):
            line, = ax.plot(times, np.maximum(V[:, k], 1e-16), lw=1, label=str(ids[k]) if ids else None)
            ax.axhline(gammas[k], color=line.get_color(), ls=":", lw=0.7)
        ax.set_yscale("log")
        ax.set_ylim(bottom=1e-12)
        ax.set_xlabel("t")
        ax.set_ylabel("V_i(x_i(t))")
        if ids:
            ax.legend(ncol=3, title="subsystem")
        return _save(fig, path)


def plot_boundary(cloud: np.ndarray, level_pts: np.ndarray, path: str | Path, title: str = "") -> Path:
    path = Path(path)
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(4.6, 4.6))
        if len(cloud):
            ax.plot(cloud[:, 0], cloud[:, 1], ",", color="0.4", label="reverse-time boundary")
        ax.plot(level_pts[:, 0], level_pts[:, 1], "-", lw=1.2, label="unit level set")
        ax.set_aspect("equal")
        ax.set_title(title)
        ax.legend()
        return _save(fig, path)
