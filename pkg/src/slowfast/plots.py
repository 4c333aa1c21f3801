"""Static SVG plot emission. Numeric truth lives in the CSVs; plots are a
convenience, written directly with the Agg backend (no display server)."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

REFERENCE_GID = "reference-slope"


def emit_plot(series, kind: str, path, xlabel: str = "", ylabel: str = "",
              reference_slope=None, bins: int = 60):
    """Write one SVG with the given series.

    ``series`` is a list of (x, y, label); for histograms y is ignored.
    ``kind`` is line | loglog | histogram. On loglog plots an optional
    reference line of the given slope is drawn and tagged with a stable
    SVG gid so tooling can find it.
    """
    if not series:
        raise ValueError("no series to plot")
    for s in series:
        if len(s[0]) == 0:
            raise ValueError("empty series")
    fig, ax = plt.subplots(figsize=(6.4, 4.4))
    try:
        if kind == "line":
            for x, y, label in series:
                ax.plot(x, y, label=label, lw=1.0)
        elif kind == "loglog":
            for x, y, label in series:
                ax.loglog(x, y, "o-", label=label)
            if reference_slope is not None:
                x0, y0, _ = series[0]
                x0 = np.asarray(x0, dtype=float)
                anchor = np.asarray(y0, dtype=float)[-1]
                ref = anchor * (x0 / x0[-1]) ** reference_slope
                line, = ax.loglog(x0, ref, "k--",
                                  label=f"slope {reference_slope:g}")
                line.set_gid(REFERENCE_GID)
        elif kind == "histogram":
            for x, _, label in series:
                ax.hist(np.asarray(x, dtype=float), bins=bins, density=True,
                        histtype="step", label=label)
        else:
            raise ValueError(f"unknown plot kind {kind!r}")
        ax.set_xlabel(xlabel)
        ax.set_ylabel(ylabel)
        if any(s[2] for s in series):
            ax.legend(fontsize=8)
        fig.savefig(path, format="svg", bbox_inches="tight")
    finally:
        plt.close(fig)
    return path
