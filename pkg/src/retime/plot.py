"""Deterministic SVG line plots, each paired with the plotted series as CSV."""
from __future__ import annotations

from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .io import write_columns  # noqa: E402
from .reparam import ReparamResult  # noqa: E402

FIGSIZE = (6.4, 4.0)
KINDS = ("state_t", "state_tau", "t_tau", "dtdtau", "dtdtau_log")

_RC = {
    "svg.hashsalt": "retime",
    "svg.fonttype": "path",
    "path.simplify": False,
}


def line_plot(stem: Path, x, ys: Sequence, labels: Sequence[str], xlabel: str, ylabel: str,
              logy: bool = False, title: str = "") -> tuple[Path, Path]:
    """Write ``stem.svg`` and ``stem.csv`` (columns ``xlabel`` then one per label)."""
    x = np.asarray(x, dtype=float)
    ys = [np.asarray(y, dtype=float) for y in ys]
    if any(y.shape != x.shape for y in ys):
        raise ValueError("every series must match the abscissa length")
    if logy and any(np.any(y <= 0) for y in ys):
        raise ValueError("log-scale plot needs strictly positive values")
    stem = Path(stem)
    stem.parent.mkdir(parents=True, exist_ok=True)
    csv_path, svg_path = stem.with_suffix(".csv"), stem.with_suffix(".svg")
    write_columns(csv_path, [xlabel, *labels], np.column_stack([x, *ys]))
    with plt.rc_context(_RC):
        fig, ax = plt.subplots(figsize=FIGSIZE)
        for y, lab in zip(ys, labels):
            ax.plot(x, y, label=lab, linewidth=1.2)
        if logy:
            ax.set_yscale("log")
        ax.set_xlabel(xlabel)
        ax.set_ylabel(ylabel)
        if title:
            ax.set_title(title)
        if len(ys) > 1:
            ax.legend(fontsize="small")
        fig.tight_layout()
        fig.savefig(svg_path, format="svg", metadata={"Date": None})
        plt.close(fig)
    return svg_path, csv_path


def plot_result(stem: Path, res: ReparamResult, kind: str) -> tuple[Path, Path]:
    """One of the standard views of a reparameterization (see ``KINDS``)."""
    labels = [f"y{i + 1}" for i in range(res.dim)]
    tau, t = res.tau_grid, res.t_of_tau
    if kind == "state_t":
        return line_plot(stem, t, res.y_of_tau.T, labels, "t", "y")
    if kind == "state_tau":
        return line_plot(stem, tau, res.y_of_tau.T, labels, "tau", "y")
    if kind == "t_tau":
        return line_plot(stem, tau, [t], ["t"], "tau", "t")
    if kind in ("dtdtau", "dtdtau_log"):
        alpha = np.gradient(t, tau)
        return line_plot(stem, tau, [alpha], ["dt/dtau"], "tau", "dt/dtau", logy=kind == "dtdtau_log")
    raise ValueError(f"unknown plot kind {kind!r}; choose from {KINDS}")
