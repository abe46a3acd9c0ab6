"""Reconstruction-loss cartography over input or latent planes.

A grid scan evaluates the model's self-reconstruction loss at every node of
a rectangular lattice, then extracts the connected sub-epsilon regions (the
"red zones" of a contour plot). Regions whose distance to the training data
exceeds a threshold are out-of-bounds findings: places where the detector
reconstructs well despite never having seen data.

Grid node coordinates are computed as min + (k * span) / (n - 1), which
makes nested refinement exact: doubling the resolution to 2n-1 nodes
reproduces the coarse nodes bit for bit.
"""

from __future__ import annotations

import json
from collections import deque
from dataclasses import dataclass

import numpy as np

from . import numlin
from .anomaly import sample_scores
from .errors import InputDomainError, NumericalError
from .models import (
    AutoencoderModel,
    PcaModel,
    decode_batch,
    encode_batch,
    model_input_dim,
    pca_decode,
    pca_encode,
)

SPACES = ("input2d", "latent2d")


@dataclass
class Region:
    """A 4-connected set of grid cells whose loss is below epsilon."""

    cells: list[tuple[int, int]]
    representative: tuple[int, int]  # (i, j) of the minimal-loss cell
    representative_point: tuple[float, float]
    representative_loss: float
    min_dist_to_train: float
    contains_training_data: bool

    def out_of_bounds(self, far_threshold: float) -> bool:
        return self.min_dist_to_train > far_threshold


@dataclass
class AuditGrid:
    """Loss lattice plus the regions extracted from it."""

    space: str
    bounds: tuple[float, float, float, float]  # xmin, xmax, ymin, ymax
    xs: np.ndarray  # (nx,)
    ys: np.ndarray  # (ny,)
    losses: np.ndarray  # (ny, nx); losses[i, j] belongs to (xs[j], ys[i])
    epsilon: float
    far_threshold: float
    regions: list[Region]
    train_points: np.ndarray  # (m, 2) in the grid's space

    @property
    def resolution(self) -> tuple[int, int]:
        return self.xs.shape[0], self.ys.shape[0]

    def out_of_bounds_regions(self) -> list[Region]:
        return [r for r in self.regions if r.out_of_bounds(self.far_threshold)]


def grid_axis(lo: float, hi: float, n: int) -> np.ndarray:
    """n nodes from lo to hi; refinement to 2n-1 nodes is bit-exact."""
    if n < 2:
        raise InputDomainError(f"resolution must be >= 2 nodes per axis, got {n}")
    if not lo < hi:
        raise InputDomainError(f"bounds must be increasing, got ({lo}, {hi})")
    span = hi - lo
    return np.array([lo + (k * span) / (n - 1) for k in range(n)])


def inflate_bounds(points: np.ndarray, factor: float) -> tuple[float, float, float, float]:
    """Bounding box of 2-D points scaled about its center; degenerate sides
    get a half-extent of 1."""
    pts = numlin.as_matrix(points, "points")
    if pts.shape[1] != 2:
        raise InputDomainError("bounds inflation needs 2-D points")
    lo = pts.min(axis=0)
    hi = pts.max(axis=0)
    center = (lo + hi) / 2.0
    half = (hi - lo) / 2.0
    half = np.where(half > 0.0, half * factor, 1.0)
    return (
        float(center[0] - half[0]),
        float(center[0] + half[0]),
        float(center[1] - half[1]),
        float(center[1] + half[1]),
    )


def rms_far_threshold(points: np.ndarray, multiple: float = 3.0) -> float:
    """multiple times the RMS distance of points from their centroid."""
    pts = numlin.as_matrix(points, "points")
    center = pts.mean(axis=0)
    rms = float(np.sqrt(np.mean(np.sum((pts - center) ** 2, axis=1))))
    return multiple * rms


def _grid_nodes(xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
    """All (x, y) nodes as rows, row-major over (i, j)."""
    nx, ny = xs.shape[0], ys.shape[0]
    pts = np.empty((ny * nx, 2))
    pts[:, 0] = np.tile(xs, ny)
    pts[:, 1] = np.repeat(ys, nx)
    return pts


def scan_input_space(
    model,
    x_train,
    bounds: tuple[float, float, float, float] | None = None,
    resolution: tuple[int, int] = (200, 200),
    epsilon: float = 0.1,
    far_threshold: float | None = None,
) -> AuditGrid:
    """Loss lattice over the 2-D input plane.

    Works for any model with a 2-D input (PCA or autoencoder). Default
    bounds are the training bounding box inflated 4x; the default far
    threshold is 3x the RMS spread of the training points.
    """
    xm = numlin.as_matrix(x_train, "training data")
    if model_input_dim(model) != 2 or xm.shape[1] != 2:
        raise InputDomainError("input-space audits need a 2-D model and 2-D data")
    if bounds is None:
        bounds = inflate_bounds(xm, 4.0)
    if far_threshold is None:
        far_threshold = rms_far_threshold(xm)
    xs = grid_axis(bounds[0], bounds[1], resolution[0])
    ys = grid_axis(bounds[2], bounds[3], resolution[1])
    nodes = _grid_nodes(xs, ys)
    losses = sample_scores(model, nodes).reshape(ys.shape[0], xs.shape[0])
    if not np.all(np.isfinite(losses)):
        raise NumericalError("grid scan produced non-finite losses")
    regions = extract_regions(losses, xs, ys, epsilon, xm, far_threshold)
    return AuditGrid(
        space="input2d",
        bounds=bounds,
        xs=xs,
        ys=ys,
        losses=losses,
        epsilon=epsilon,
        far_threshold=far_threshold,
        regions=regions,
        train_points=xm,
    )


def _decode(model, z: np.ndarray) -> np.ndarray:
    if isinstance(model, PcaModel):
        return pca_decode(model, z)
    return decode_batch(model, z)


def _encode(model, x: np.ndarray) -> np.ndarray:
    if isinstance(model, PcaModel):
        return pca_encode(model, x)
    return encode_batch(model, x)


def scan_latent_space(
    model,
    x_train,
    bounds: tuple[float, float, float, float] | None = None,
    resolution: tuple[int, int] = (200, 200),
    epsilon: float = 0.1,
    far_threshold: float | None = None,
) -> AuditGrid:
    """Loss lattice over the 2-D latent plane.

    Each node z is decoded to an artificial sample h(z), and the recorded
    loss is that sample's own anomaly score (decode, re-encode, decode).
    Distances and markers live in latent coordinates: the training points
    of the grid are the encodings of x_train. Default bounds inflate the
    encodings' bounding box 2x.
    """
    xm = numlin.as_matrix(x_train, "training data")
    if not isinstance(model, (PcaModel, AutoencoderModel)):
        raise InputDomainError(f"unsupported model type {type(model)!r}")
    if model.latent_dim != 2:
        raise InputDomainError(
            f"latent-space audits need latent_dim == 2, got {model.latent_dim}"
        )
    if xm.shape[1] != model_input_dim(model):
        raise InputDomainError(
            f"data has {xm.shape[1]} features, model expects {model_input_dim(model)}"
        )
    encodings = _encode(model, xm)
    if bounds is None:
        bounds = inflate_bounds(encodings, 2.0)
    if far_threshold is None:
        far_threshold = rms_far_threshold(encodings)
    xs = grid_axis(bounds[0], bounds[1], resolution[0])
    ys = grid_axis(bounds[2], bounds[3], resolution[1])
    nodes = _grid_nodes(xs, ys)
    decoded = _decode(model, nodes)
    losses = sample_scores(model, decoded).reshape(ys.shape[0], xs.shape[0])
    if not np.all(np.isfinite(losses)):
        raise NumericalError("latent grid scan produced non-finite losses")
    regions = extract_regions(losses, xs, ys, epsilon, encodings, far_threshold)
    return AuditGrid(
        space="latent2d",
        bounds=bounds,
        xs=xs,
        ys=ys,
        losses=losses,
        epsilon=epsilon,
        far_threshold=far_threshold,
        regions=regions,
        train_points=encodings,
    )


def extract_regions(
    losses: np.ndarray,
    xs: np.ndarray,
    ys: np.ndarray,
    epsilon: float,
    train_points: np.ndarray,
    far_threshold: float,
) -> list[Region]:
    """4-connected components of sub-epsilon cells, annotated with distances.

    A region's min_dist_to_train is the smallest distance from any of its
    cells' coordinates to any training point; contains_training_data is set
    when some training point's nearest grid node belongs to the region.
    Regions are ordered by their first-visited cell in row-major order.
    """
    ny, nx = losses.shape
    below = losses < epsilon
    labels = -np.ones((ny, nx), dtype=np.int64)
    regions: list[Region] = []

    # map each training point to its nearest grid node
    occupied: set[tuple[int, int]] = set()
    if train_points.shape[0]:
        dx = xs[1] - xs[0] if nx > 1 else 1.0
        dy = ys[1] - ys[0] if ny > 1 else 1.0
        j_idx = np.clip(np.rint((train_points[:, 0] - xs[0]) / dx), 0, nx - 1).astype(int)
        i_idx = np.clip(np.rint((train_points[:, 1] - ys[0]) / dy), 0, ny - 1).astype(int)
        occupied = set(zip(i_idx.tolist(), j_idx.tolist()))

    label = 0
    for i0 in range(ny):
        for j0 in range(nx):
            if not below[i0, j0] or labels[i0, j0] >= 0:
                continue
            cells: list[tuple[int, int]] = []
            queue = deque([(i0, j0)])
            labels[i0, j0] = label
            while queue:
                i, j = queue.popleft()
                cells.append((i, j))
                for ni, nj in ((i - 1, j), (i + 1, j), (i, j - 1), (i, j + 1)):
                    if 0 <= ni < ny and 0 <= nj < nx and below[ni, nj] and labels[ni, nj] < 0:
                        labels[ni, nj] = label
                        queue.append((ni, nj))
            regions.append(_annotate_region(cells, losses, xs, ys, train_points, occupied))
            label += 1
    return regions


def _annotate_region(
    cells: list[tuple[int, int]],
    losses: np.ndarray,
    xs: np.ndarray,
    ys: np.ndarray,
    train_points: np.ndarray,
    occupied: set[tuple[int, int]],
) -> Region:
    best = min(cells, key=lambda c: (losses[c[0], c[1]], c))
    coords = np.array([[xs[j], ys[i]] for i, j in cells])
    min_dist = float("inf")
    for lo in range(0, coords.shape[0], 4096):
        chunk = coords[lo : lo + 4096]
        d2 = (
            np.sum(chunk * chunk, axis=1)[:, None]
            - 2.0 * chunk @ train_points.T
            + np.sum(train_points * train_points, axis=1)[None, :]
        )
        min_dist = min(min_dist, float(np.sqrt(max(float(d2.min()), 0.0))))
    contains = any(c in occupied for c in cells)
    return Region(
        cells=cells,
        representative=best,
        representative_point=(float(xs[best[1]]), float(ys[best[0]])),
        representative_loss=float(losses[best[0], best[1]]),
        min_dist_to_train=min_dist,
        contains_training_data=contains,
    )


def representative_input(grid: AuditGrid, model, region: Region) -> np.ndarray:
    """The input-space sample a region's representative stands for."""
    p = np.array(region.representative_point)
    if grid.space == "input2d":
        return p
    return _decode(model, p)


def has_out_of_bounds_region(grid: AuditGrid) -> bool:
    return len(grid.out_of_bounds_regions()) > 0


# --- exports ----------------------------------------------------------------


def write_grid_csv(grid: AuditGrid, path) -> None:
    """Row-major x,y,loss lines with full-precision decimals."""
    with open(path, "w", newline="", encoding="utf-8") as f:
        f.write("x,y,loss\n")
        ny, nx = grid.losses.shape
        for i in range(ny):
            for j in range(nx):
                f.write(
                    f"{repr(float(grid.xs[j]))},{repr(float(grid.ys[i]))},"
                    f"{repr(float(grid.losses[i, j]))}\n"
                )


def audit_report(grid: AuditGrid, model_ref: str = "", seed: int | None = None) -> dict:
    """JSON-ready description of the audit outcome."""
    return {
        "space": grid.space,
        "bounds": list(grid.bounds),
        "resolution": list(grid.resolution),
        "epsilon": grid.epsilon,
        "far_threshold": grid.far_threshold,
        "model_file": model_ref,
        "seed": seed,
        "out_of_bounds_found": has_out_of_bounds_region(grid),
        "regions": [
            {
                "cells": [list(c) for c in r.cells],
                "cell_count": len(r.cells),
                "representative": {
                    "i": r.representative[0],
                    "j": r.representative[1],
                    "x": r.representative_point[0],
                    "y": r.representative_point[1],
                    "loss": r.representative_loss,
                },
                "min_dist_to_train": r.min_dist_to_train,
                "contains_training_data": r.contains_training_data,
                "out_of_bounds": r.out_of_bounds(grid.far_threshold),
            }
            for r in grid.regions
        ],
    }


def write_audit_report(grid: AuditGrid, path, model_ref: str = "", seed: int | None = None) -> None:
    with open(path, "w", encoding="utf-8") as f:
        json.dump(audit_report(grid, model_ref, seed), f, sort_keys=True, indent=1)
        f.write("\n")


# --- rendering ----------------------------------------------------------------

_SUB_EPSILON_COLOR = "#ff0000"
_LOW_COLOR = (255, 255, 204)
_HIGH_COLOR = (16, 36, 100)
_LOG_FLOOR = 1e-16


def _cell_color(loss: float, lo: float, hi: float, epsilon: float) -> str:
    if loss < epsilon:
        return _SUB_EPSILON_COLOR
    top = np.log10(hi + _LOG_FLOOR)
    bottom = np.log10(lo + _LOG_FLOOR)
    t = 0.0 if top == bottom else (np.log10(loss + _LOG_FLOOR) - bottom) / (top - bottom)
    t = min(max(float(t), 0.0), 1.0)
    rgb = [round(a + (b - a) * t) for a, b in zip(_LOW_COLOR, _HIGH_COLOR)]
    return f"#{rgb[0]:02x}{rgb[1]:02x}{rgb[2]:02x}"


def render_heatmap(grid: AuditGrid, path, cell_px: float | None = None) -> None:
    """SVG heatmap: log-scaled colors, red sub-epsilon cells, data markers.

    Output bytes depend only on the grid contents, so identical grids give
    identical files.
    """
    nx, ny = grid.resolution
    if cell_px is None:
        cell_px = max(1.0, 600.0 / max(nx, ny))
    width = nx * cell_px
    height = ny * cell_px
    lo = float(grid.losses.min())
    hi = float(grid.losses.max())
    parts = [
        '<?xml version="1.0" encoding="UTF-8"?>\n',
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width:.2f}" '
        f'height="{height:.2f}" viewBox="0 0 {width:.2f} {height:.2f}">\n',
    ]
    for i in range(ny):
        y = (ny - 1 - i) * cell_px
        for j in range(nx):
            color = _cell_color(float(grid.losses[i, j]), lo, hi, grid.epsilon)
            parts.append(
                f'<rect x="{j * cell_px:.2f}" y="{y:.2f}" width="{cell_px:.2f}" '
                f'height="{cell_px:.2f}" fill="{color}"/>\n'
            )
    xmin, xmax, ymin, ymax = grid.bounds
    for px, py in grid.train_points:
        cx = (px - xmin) / (xmax - xmin) * width
        cy = height - (py - ymin) / (ymax - ymin) * height
        if 0.0 <= cx <= width and 0.0 <= cy <= height:
            parts.append(f'<circle cx="{cx:.2f}" cy="{cy:.2f}" r="1.5" fill="#000000"/>\n')
    parts.append("</svg>\n")
    with open(path, "w", encoding="utf-8") as f:
        f.write("".join(parts))
