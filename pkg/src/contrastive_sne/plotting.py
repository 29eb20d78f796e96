"""Static SVG figures: embedding scatters, training curves and class heatmaps.

Figures go through matplotlib's SVG backend with a fixed hash salt, no date
metadata and text kept as ``<text>`` elements, so the same input always gives
the same bytes. Each scatter marker is emitted as one ``<use>`` element.
"""

from __future__ import annotations

import csv
import os

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

PLOT_KINDS = ("scatter2d", "line", "heatmap")

STYLE = {
    "figure.figsize": (4.0, 4.0),
    "font.family": "DejaVu Sans",
    "font.size": 9,
    "axes.linewidth": 0.6,
    "axes.titlesize": 10,
    "lines.linewidth": 1.2,
    "xtick.direction": "in",
    "ytick.direction": "in",
    "svg.fonttype": "none",
    "svg.hashsalt": "contrastive-sne",
    "path.simplify": False,
}


class PlotError(ValueError):
    """Input that cannot be turned into a figure; nothing is written."""


def _save(fig, out_path) -> None:
    fig.savefig(out_path, format="svg", metadata={"Date": None})
    plt.close(fig)


def scatter2d(points, labels, out_path, title: str = "") -> None:
    """Scatter of 2-D points colored by integer label.

    One-dimensional points are drawn against their label so clusters that
    occupy disjoint intervals show up as separate rows.
    """
    P = np.asarray(points, dtype=float)
    if P.ndim == 1:
        P = P[:, None]
    labels = np.zeros(len(P), dtype=int) if labels is None else np.asarray(labels, dtype=int)
    if len(P) == 0:
        raise PlotError("no points to plot")
    if P.shape[1] not in (1, 2):
        raise PlotError("scatter2d takes one or two coordinates per row")
    y = P[:, 1] if P.shape[1] == 2 else labels.astype(float)
    with matplotlib.rc_context(STYLE):
        fig, ax = plt.subplots()
        ax.scatter(P[:, 0], y, c=labels, cmap="tab10", vmin=0, vmax=9, s=10, linewidths=0)
        if P.shape[1] == 2:
            ax.set_aspect("equal", adjustable="datalim")
        else:
            ax.set_ylabel("label")
        ax.set_title(title)
        _save(fig, out_path)


def line(x, series: dict, out_path, xlabel: str = "", ylabel: str = "", title: str = "") -> None:
    x = np.asarray(x, dtype=float)
    if len(x) == 0 or not series:
        raise PlotError("no data to plot")
    with matplotlib.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(5.0, 3.2))
        for name, ys in series.items():
            ax.plot(x, np.asarray(ys, dtype=float), label=name)
        ax.set_xlabel(xlabel)
        ax.set_ylabel(ylabel)
        ax.set_title(title)
        if len(series) > 1:
            ax.legend(frameon=False)
        fig.tight_layout()
        _save(fig, out_path)


def heatmap(H, out_path, row_labels=None, col_labels=None, title: str = "",
            vmin: float = -1.0, vmax: float = 1.0) -> None:
    """Colored grid with the value printed in every cell."""
    H = np.asarray(H, dtype=float)
    if H.ndim != 2 or H.size == 0:
        raise PlotError("heatmap needs a non-empty matrix")
    rows, cols = H.shape
    row_labels = row_labels or [str(i) for i in range(rows)]
    col_labels = col_labels or [str(j) for j in range(cols)]
    with matplotlib.rc_context(STYLE):
        fig, ax = plt.subplots()
        im = ax.imshow(H, cmap="RdBu_r", vmin=vmin, vmax=vmax)
        for i in range(rows):
            for j in range(cols):
                color = "white" if abs(H[i, j]) > 0.6 * max(abs(vmin), abs(vmax)) else "black"
                ax.text(j, i, f"{H[i, j]:.2f}", ha="center", va="center", fontsize=8, color=color)
        ax.set_xticks(range(cols), col_labels)
        ax.set_yticks(range(rows), row_labels)
        ax.set_title(title)
        fig.colorbar(im, ax=ax, fraction=0.046, pad=0.04)
        _save(fig, out_path)


# --------------------------------------------------------------------------
# CSV front end
# --------------------------------------------------------------------------


def read_table(path) -> tuple[list[str], list[list[str]]]:
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(fh) if r]
    if len(rows) < 2:
        raise PlotError(f"{path}: no data rows")
    return rows[0], rows[1:]


def plot_csv(csv_path, kind: str, out_path, title: str = "") -> None:
    """Render ``csv_path`` as ``kind``; the output file is only created on success.

    scatter2d: numeric feature columns plus an optional ``label`` column.
    line: the first column is x, every other column is one series.
    heatmap: first column holds row names, the header holds column names.
    """
    if kind not in PLOT_KINDS:
        raise PlotError(f"unknown plot kind {kind!r}; expected one of {PLOT_KINDS}")
    header, rows = read_table(csv_path)
    try:
        if kind == "scatter2d":
            label_col = header.index("label") if "label" in header else None
            feat = [i for i in range(len(header)) if i != label_col][:2]
            pts = np.array([[float(r[i]) for i in feat] for r in rows])
            labels = None if label_col is None else [int(r[label_col]) for r in rows]
            draw = lambda p: scatter2d(pts, labels, p, title)  # noqa: E731
        elif kind == "line":
            x = [float(r[0]) for r in rows]
            series = {h: [float(r[i]) for r in rows] for i, h in enumerate(header) if i > 0}
            draw = lambda p: line(x, series, p, xlabel=header[0], title=title)  # noqa: E731
        else:
            H = np.array([[float(v) for v in r[1:]] for r in rows])
            draw = lambda p: heatmap(H, p, [r[0] for r in rows], header[1:], title)  # noqa: E731
    except (ValueError, IndexError) as exc:
        raise PlotError(f"{csv_path}: malformed {kind} table ({exc})") from exc
    tmp = f"{out_path}.partial"
    try:
        draw(tmp)
        os.replace(tmp, out_path)
    finally:
        if os.path.exists(tmp):
            os.remove(tmp)
