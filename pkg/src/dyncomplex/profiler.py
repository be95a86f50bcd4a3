"""Spatial complexity maps and above-threshold histograms of navigation runs."""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ._validation import DyncomplexError

__all__ = [
    "DensityMap",
    "ThresholdHistogram",
    "build_map",
    "build_histogram",
    "merge_maps",
    "render_figures",
    "region_means",
]


@dataclass
class DensityMap:
    """Per-cell sample count, mean score and max score over a square arena.

    ``sums`` is kept so partial maps can be merged exactly.
    """

    cells: int
    side_m: float
    counts: np.ndarray
    sums: np.ndarray
    maxima: np.ndarray

    @property
    def means(self):
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(self.counts > 0, self.sums / np.maximum(self.counts, 1), np.nan)

    @property
    def edges(self):
        return np.linspace(-self.side_m / 2, self.side_m / 2, self.cells + 1)

    def to_csv(self, path):
        """One row per non-empty cell: ix, iy, x_center, y_center, count, mean, max."""
        centres = 0.5 * (self.edges[:-1] + self.edges[1:])
        means = self.means
        with open(path, "w") as fh:
            fh.write("ix,iy,x_center,y_center,count,mean_score,max_score\n")
            for iy in range(self.cells):
                for ix in range(self.cells):
                    n = int(self.counts[iy, ix])
                    if n:
                        fh.write(
                            f"{ix},{iy},{centres[ix]!r},{centres[iy]!r},{n},"
                            f"{float(means[iy, ix])!r},{float(self.maxima[iy, ix])!r}\n"
                        )

    def to_json(self, path):
        means = self.means
        payload = {
            "cells": self.cells,
            "side_m": self.side_m,
            "counts": self.counts.tolist(),
            "mean_score": [[None if np.isnan(v) else float(v) for v in row] for row in means],
            "max_score": [[None if self.counts[i, j] == 0 else float(v) for j, v in enumerate(row)]
                          for i, row in enumerate(self.maxima)],
        }
        Path(path).write_text(json.dumps(payload, indent=1))


@dataclass
class ThresholdHistogram:
    threshold: float
    edges: np.ndarray
    counts: np.ndarray

    @property
    def total(self):
        return int(self.counts.sum())

    def to_csv(self, path):
        with open(path, "w") as fh:
            fh.write("bin_low,bin_high,count\n")
            for lo, hi, c in zip(self.edges[:-1], self.edges[1:], self.counts):
                fh.write(f"{float(lo)!r},{float(hi)!r},{int(c)}\n")

    def to_json(self, path):
        Path(path).write_text(json.dumps(
            {"threshold": self.threshold, "edges": [float(e) for e in self.edges],
             "counts": [int(c) for c in self.counts], "total": self.total},
            indent=1,
        ))


def _valid(traj, include_warmup):
    mask = np.ones(len(traj), dtype=bool) if include_warmup else ~traj.warmup
    return traj.x[mask], traj.y[mask], traj.score[mask]


def build_map(traj, cells=20, side_m=1.0, include_warmup=False):
    """Bin post-warm-up samples by position into a ``cells x cells`` grid.

    Arrays are indexed ``[iy, ix]``; positions on the outer boundary fall in
    the last cell.
    """
    if int(cells) != cells or cells <= 0:
        raise DyncomplexError(f"cells must be a positive integer, got {cells}")
    if len(traj) == 0:
        raise DyncomplexError("trajectory is empty")
    x, y, s = _valid(traj, include_warmup)
    return _fold(x, y, s, int(cells), float(side_m))


def _fold(x, y, s, cells, side_m):
    half = side_m / 2.0
    ix = np.clip(np.floor((x + half) / side_m * cells).astype(np.int64), 0, cells - 1)
    iy = np.clip(np.floor((y + half) / side_m * cells).astype(np.int64), 0, cells - 1)
    flat = iy * cells + ix
    counts = np.bincount(flat, minlength=cells * cells).reshape(cells, cells)
    sums = np.bincount(flat, weights=s, minlength=cells * cells).reshape(cells, cells)
    maxima = np.full(cells * cells, -np.inf)
    np.maximum.at(maxima, flat, s)
    maxima = np.where(counts.ravel() > 0, maxima, 0.0).reshape(cells, cells)
    return DensityMap(cells, side_m, counts, sums, maxima)


def merge_maps(a, b):
    """Combine maps built from disjoint sample sets of the same grid."""
    if a.cells != b.cells or a.side_m != b.side_m:
        raise DyncomplexError("cannot merge maps with different grids")
    return DensityMap(a.cells, a.side_m, a.counts + b.counts, a.sums + b.sums,
                      np.maximum(a.maxima, b.maxima))


def build_histogram(traj, threshold=100.0, bins=None, bin_width=20.0, include_warmup=False):
    """Histogram of the scores above ``threshold``.

    Default bins are ``bin_width`` wide starting at the threshold and reach
    past the largest score.
    """
    if threshold < 0:
        raise DyncomplexError(f"threshold must be >= 0, got {threshold}")
    _, _, s = _valid(traj, include_warmup)
    above = s[s > threshold]
    if bins is None:
        top = max(float(above.max()) if above.size else threshold, threshold)
        n = max(1, int(np.floor((top - threshold) / bin_width)) + 1)
        edges = threshold + bin_width * np.arange(n + 1)
    elif np.ndim(bins) == 0:
        top = float(above.max()) if above.size else threshold + bin_width
        edges = np.linspace(threshold, max(top, threshold + 1e-9), int(bins) + 1)
    else:
        edges = np.asarray(bins, dtype=np.float64)
    counts, _ = np.histogram(above, bins=edges)
    # np.histogram drops values beyond the last edge; keep the invariant
    # sum(counts) == number of samples above threshold
    counts[-1] += int(np.count_nonzero(above > edges[-1]))
    counts[0] += int(np.count_nonzero(above < edges[0]))
    return ThresholdHistogram(float(threshold), edges, counts)


def region_means(traj, side_m=1.0, band_m=0.15, include_warmup=False):
    """Mean score within ``band_m`` of any wall and within ``band_m`` of the centre."""
    x, y, s = _valid(traj, include_warmup)
    to_wall = side_m / 2.0 - np.maximum(np.abs(x), np.abs(y))
    near = s[to_wall <= band_m]
    centre = s[np.hypot(x, y) <= band_m]
    nan = float("nan")
    return (float(near.mean()) if near.size else nan, float(centre.mean()) if centre.size else nan,
            int(near.size), int(centre.size))


def render_figures(dmap, hist, out_dir, prefix="profile", title=None):
    """Write the map as scaled circles, the histogram as bars, plus CSVs.

    Circle radius grows with the square root of the cell mean score
    (area proportional to score). Returns the written paths.
    """
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        probe = out / f".{prefix}.write-test"
        probe.write_text("")
        probe.unlink()
    except OSError as exc:
        raise DyncomplexError(f"cannot write to {out}: {exc}") from None

    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    paths = {}
    paths["map_csv"] = out / f"{prefix}_map.csv"
    dmap.to_csv(paths["map_csv"])
    paths["hist_csv"] = out / f"{prefix}_hist.csv"
    hist.to_csv(paths["hist_csv"])

    centres = 0.5 * (dmap.edges[:-1] + dmap.edges[1:])
    xs, ys = np.meshgrid(centres, centres)
    means = np.nan_to_num(dmap.means, nan=0.0)
    radii = circle_radii(means, dmap.side_m / dmap.cells)
    fig, ax = plt.subplots(figsize=(5, 5))
    from matplotlib.collections import PatchCollection
    from matplotlib.patches import Circle

    circles = [Circle((x, y), r) for x, y, r in zip(xs.ravel(), ys.ravel(), radii.ravel()) if r > 0]
    ax.add_collection(PatchCollection(circles, facecolor="tab:blue", edgecolor="none", alpha=0.6))
    h = dmap.side_m / 2
    ax.plot([-h, h, h, -h, -h], [-h, -h, h, h, -h], color="k", lw=1)
    ax.set_xlim(-h * 1.05, h * 1.05)
    ax.set_ylim(-h * 1.05, h * 1.05)
    ax.set_aspect("equal")
    ax.set_xlabel("x (m)")
    ax.set_ylabel("y (m)")
    if title:
        ax.set_title(title)
    paths["map_png"] = out / f"{prefix}_map.png"
    fig.savefig(paths["map_png"], dpi=100, metadata={"Software": None})
    plt.close(fig)

    fig, ax = plt.subplots(figsize=(5, 3.5))
    lefts = hist.edges[:-1]
    ax.bar(lefts, hist.counts, width=np.diff(hist.edges), align="edge", color="tab:orange",
           edgecolor="k")
    ax.set_xlim(hist.edges[0], hist.edges[-1])
    ax.set_xlabel(f"score (> {hist.threshold:g})")
    ax.set_ylabel("count")
    paths["hist_png"] = out / f"{prefix}_hist.png"
    fig.savefig(paths["hist_png"], dpi=100, metadata={"Software": None})
    plt.close(fig)
    return paths


def circle_radii(means, cell_size):
    """Radius per cell: ``0.5 * cell_size * sqrt(mean / max_mean)``."""
    means = np.asarray(means, dtype=np.float64)
    peak = means.max() if means.size else 0.0
    if peak <= 0:
        return np.zeros_like(means)
    return 0.5 * cell_size * np.sqrt(np.clip(means, 0.0, None) / peak)
