"""
Matplotlib helpers for the report figures.

All figures are written as static SVG. The data behind every figure is
embedded in the SVG ``Description`` metadata as CSV so that a plot can be
re-read without the run directory.
"""

import io
import math

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

LAYER_COLORS = ["#1b9e77", "#d95f02", "#7570b3", "#e7298a", "#66a61e", "#e6ab02", "#a6761d", "#666666"]


def get_plot(width=7, height=None):
    """
    Figure and axes with report defaults.

    Args:
        width:
            Width in inches. Defaults to 7in.
        height:
            Height in inches. Defaults to width * golden ratio.
    """
    golden_ratio = (math.sqrt(5) - 1.0) / 2.0
    if not height:
        height = width * golden_ratio
    fig, ax = plt.subplots(figsize=(width, height), facecolor="w")
    ax.tick_params(labelsize=9)
    ax.grid(alpha=0.25, linewidth=0.6)
    for side in ("top", "right"):
        ax.spines[side].set_visible(False)
    return fig, ax


def band(ax, x, mean, half=None, label=None, color=None, linestyle="-", alpha=0.2):
    """Line with an optional shaded +-half band."""
    (line,) = ax.plot(x, mean, label=label, color=color, linestyle=linestyle, linewidth=1.5)
    if half is not None:
        lo = [m - h for m, h in zip(mean, half)]
        hi = [m + h for m, h in zip(mean, half)]
        ax.fill_between(x, lo, hi, color=line.get_color(), alpha=alpha, linewidth=0)
    return line


def table_csv(columns):
    """Render {name: list} as CSV text."""
    names = list(columns)
    buf = io.StringIO()
    buf.write(",".join(names) + "\n")
    for row in zip(*(columns[n] for n in names)):
        buf.write(",".join("" if v is None else str(v) for v in row) + "\n")
    return buf.getvalue()


def save_svg(fig, path, title, data=None):
    meta = {"Title": title}
    if data is not None:
        meta["Description"] = data
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata=meta)
    plt.close(fig)
    return path
