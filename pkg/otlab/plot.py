"""Deterministic SVG line plots of result tables and PNG heatmaps of grid files."""
from __future__ import annotations

import csv
import logging
import math
from pathlib import Path
from typing import Sequence

import matplotlib
import numpy as np
from matplotlib.figure import Figure
from PIL import Image
from scipy import stats

from .color import COLORMAPS, Colormap, get_colormap
from .errors import OTLabError
from .kernels import FloatArray
from .measures import load_grid_weights

logger = logging.getLogger(__name__)

SVG_SALT = "otlab"
MIN_RENDER_PIXELS = 256


def read_columns(path: str | Path, names: Sequence[str]) -> dict[str, FloatArray]:
    """The named numeric columns of a CSV table (empty arrays for an empty body)."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        missing = [n for n in names if n not in header]
        if missing:
            raise OTLabError(
                "missing-column", f"Unknown column: {', '.join(missing)}. Available: {', '.join(header)}"
            )
        rows = list(reader)
    out: dict[str, FloatArray] = {}
    for name in names:
        try:
            out[name] = np.array([float(r[name]) for r in rows], dtype=np.float64)
        except ValueError as exc:
            raise OTLabError("missing-column", f"column {name} is not numeric") from exc
    return out


def log_slope(x: FloatArray, y: FloatArray) -> float:
    """Least-squares slope of log y against log x over positive pairs."""
    keep = (x > 0) & (y > 0) & np.isfinite(x) & np.isfinite(y)
    if keep.sum() < 2 or np.ptp(np.log(x[keep])) == 0.0:
        return math.nan
    return float(stats.linregress(np.log(x[keep]), np.log(y[keep])).slope)


def plot_csv(
    path: str | Path,
    x: str,
    ys: Sequence[str],
    out: str | Path,
    log: bool = False,
    colormap: Colormap = COLORMAPS["series"],
) -> Path:
    """Line plot of ``ys`` against ``x``; log mode annotates the fitted slope of each series."""
    if not ys:
        raise OTLabError("missing-column", "at least one y column is needed")
    cols = read_columns(path, [x, *ys])
    xv = cols[x]
    if xv.size == 0:
        logger.warning("%s has no rows; writing empty axes", path)
    fig = Figure(figsize=(6.0, 4.0))
    ax = fig.add_subplot()
    order = np.argsort(xv, kind="stable")
    for name, color in zip(ys, colormap.series(len(ys))):
        yv = cols[name]
        label = name
        if log and xv.size:
            slope = log_slope(xv, yv)
            if math.isfinite(slope):
                label = f"{name} (slope {slope:.3f})"
        ax.plot(xv[order], yv[order], marker="o", markersize=3, color=color, label=label)
    if log:
        ax.set_xscale("log")
        ax.set_yscale("log")
    ax.set_xlabel(x)
    ax.set_ylabel(ys[0] if len(ys) == 1 else "value")
    if xv.size:
        ax.legend(loc="best", fontsize="small")
    ax.grid(True, which="both", alpha=0.3)
    target = Path(out)
    with matplotlib.rc_context({"svg.hashsalt": SVG_SALT, "svg.fonttype": "path"}):
        fig.savefig(target, format="svg", metadata={"Date": None})
    logger.info("wrote %s", target)
    return target


def heatmap(weights: FloatArray, colormap: Colormap) -> Image.Image:
    """RGB image of 1D or 2D cell weights, second axis pointing up."""
    w = np.asarray(weights, dtype=np.float64)
    if w.ndim == 1:
        w = w[:, None]
    if w.ndim != 2:
        raise OTLabError("parameter-out-of-range", f"can only render 1D or 2D grids, got {w.ndim}D")
    rgb = colormap.apply(w.T[::-1])
    image = Image.fromarray(rgb)
    scale = max(1, math.ceil(MIN_RENDER_PIXELS / max(image.size)))
    size = (image.width * scale, max(image.height * scale, 16))
    if size != image.size:
        image = image.resize(size, Image.Resampling.NEAREST)
    return image


def render_grid(path: str | Path, out: str | Path, colormap: str = "heat") -> Path:
    """Render a saved grid measure or transport density as a PNG."""
    _, weights = load_grid_weights(path)
    target = Path(out)
    heatmap(weights, get_colormap(colormap)).save(target, format="PNG")
    logger.info("wrote %s", target)
    return target
