"""Figures for the report path.  Always rendered off-screen to files."""

from __future__ import annotations

import math
from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

golden_mean = (math.sqrt(5.0) - 1.0) / 2.0
fig_width = 5.0
fig_size = (fig_width, fig_width * golden_mean)

params = {
    "axes.labelsize": 10,
    "font.size": 9,
    "font.family": "serif",
    "mathtext.fontset": "stix",
    "legend.fontsize": 8,
    "legend.frameon": False,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "xtick.direction": "in",
    "ytick.direction": "in",
    "lines.linewidth": 1.2,
    "lines.markersize": 4,
    "figure.figsize": fig_size,
    "figure.dpi": 150,
    "savefig.bbox": "tight",
}


def _save(fig, path) -> Path:
    path = Path(path)
    fig.savefig(path)
    plt.close(fig)
    return path


def plot_idle_trace(trace, path, title: str | None = None) -> Path:
    """Fraction of idle servers against time."""
    with plt.rc_context(params):
        fig, ax = plt.subplots()
        ax.plot(trace.t, trace.idle_fraction, color="k")
        ax.set_xlabel("time")
        ax.set_ylabel("fraction of idle servers")
        ax.set_ylim(-0.02, 1.02)
        ax.set_xlim(0, trace.t[-1] if len(trace.t) else 1)
        if title:
            ax.set_title(title)
        return _save(fig, path)


def plot_growth(estimates: Sequence, fits: Sequence, path) -> Path:
    """Means against log N, one panel for indices (log scale) and one for times."""
    groups: dict[tuple, list] = {}
    for e in estimates:
        if math.isfinite(e.mean):
            groups.setdefault((e.policy or e.model, e.statistic), []).append(e)
    fit_by = {(f.policy or f.model, f.statistic): f for f in fits}
    with plt.rc_context(params):
        fig, (ax_nu, ax_t) = plt.subplots(1, 2, figsize=(2 * fig_width, fig_width * golden_mean))
        for (label, stat), pts in sorted(groups.items()):
            pts = sorted(pts, key=lambda e: e.N)
            x = np.log([p.N for p in pts])
            y = np.array([p.mean for p in pts])
            f = fit_by.get((label, stat))
            if stat.lower().startswith("t"):
                ax, yy = ax_t, y
            elif np.all(y > 0):
                ax, yy = ax_nu, np.log(y)
            else:
                continue
            name = f"{label} {stat}" + (f" ({f.slope:.3f})" if f else "")
            line, = ax.plot(x, yy, "o", label=name)
            if f:
                ax.plot(x, f.intercept + f.slope * x, "-", color=line.get_color(), alpha=0.6)
        ax_nu.set_xlabel(r"$\log N$")
        ax_nu.set_ylabel(r"$\log$ mean index")
        ax_t.set_xlabel(r"$\log N$")
        ax_t.set_ylabel("mean time")
        for ax in (ax_nu, ax_t):
            if ax.lines:
                ax.legend(loc="upper left")
        return _save(fig, path)


def plot_law(xs, values, path, xlabel: str = "x", ylabel: str = "value") -> Path:
    with plt.rc_context(params):
        fig, ax = plt.subplots()
        ax.plot(xs, values, color="k")
        ax.set_xlabel(xlabel)
        ax.set_ylabel(ylabel)
        return _save(fig, path)
