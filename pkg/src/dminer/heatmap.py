"""Center-heatmap target rendering.

Each annotated instance contributes an isotropic Gaussian bump on its
category channel, peaking at exactly 1.0 on the instance's downsampled
center cell. Overlapping bumps on the same channel merge by per-pixel max,
so peaks survive and the map stays in [0, 1].
"""

from __future__ import annotations

import math
from typing import Iterable

import numpy as np

from .core import Annotation, BBox, Grid
from .errors import CenterOutOfGridError, InvalidSizeError

# Gaussian support is cut at 3 sigma; the smallest kept value is
# exp(-9/2) ~ 1.11e-2, so dropped tails are all below 1.1e-2.
TRUNCATION_SIGMAS = 3.0


def downsample_center(bbox: BBox, grid: Grid) -> tuple[int, int]:
    """Map a box center to its output-grid cell, (px, py) = floor(c / stride).

    Raises:
        CenterOutOfGridError: if the cell falls outside the output grid.
    """
    px = math.floor(bbox.cx / grid.stride)
    py = math.floor(bbox.cy / grid.stride)
    if not (0 <= px < grid.out_width and 0 <= py < grid.out_height):
        raise CenterOutOfGridError(
            f"center ({bbox.cx}, {bbox.cy}) maps to cell ({px}, {py}) outside "
            f"{grid.out_height}x{grid.out_width} grid"
        )
    return px, py


def gaussian_radius(w_cells: float, h_cells: float, min_overlap: float = 0.7) -> float:
    """Largest center displacement (in cells) keeping IoU >= min_overlap.

    Solves the three standard corner-displacement quadratics and returns the
    smallest root, which is positive for all positive sizes and overlaps in
    (0, 1).
    """
    if not (np.isfinite(w_cells) and np.isfinite(h_cells)) or w_cells <= 0 or h_cells <= 0:
        raise InvalidSizeError(f"box size must be positive, got w={w_cells}, h={h_cells}")
    if not 0.0 < min_overlap < 1.0:
        raise ValueError(f"min_overlap must lie in (0, 1), got {min_overlap}")
    w, h, o = float(w_cells), float(h_cells), float(min_overlap)

    a1 = 1.0
    b1 = h + w
    c1 = w * h * (1.0 - o) / (1.0 + o)
    sq1 = math.sqrt(b1 * b1 - 4.0 * a1 * c1)
    r1 = (b1 - sq1) / (2.0 * a1)

    a2 = 4.0
    b2 = 2.0 * (h + w)
    c2 = (1.0 - o) * w * h
    sq2 = math.sqrt(b2 * b2 - 4.0 * a2 * c2)
    r2 = (b2 - sq2) / (2.0 * a2)

    a3 = 4.0 * o
    b3 = -2.0 * o * (h + w)
    c3 = (o - 1.0) * w * h
    sq3 = math.sqrt(b3 * b3 - 4.0 * a3 * c3)
    r3 = (b3 + sq3) / (2.0 * a3)

    return min(r1, r2, r3)


def gaussian_sigma(w_cells: float, h_cells: float, min_overlap: float = 0.7) -> float:
    """Size-adaptive Gaussian sigma: one third of the displacement radius."""
    return gaussian_radius(w_cells, h_cells, min_overlap) / 3.0


def render_target(
    annotations: Iterable[Annotation],
    grid: Grid,
    num_categories: int,
    min_overlap: float = 0.7,
) -> np.ndarray:
    """Render the (out_height, out_width, num_categories) target heatmap.

    For every annotation, writes exp(-((x - px)^2 + (y - py)^2) / (2 sigma^2))
    on the annotation's channel inside a radial 3-sigma window, merging with
    whatever is already there by per-pixel max. The result is independent of
    annotation order and the center cell holds exactly 1.0.

    Raises:
        CategoryOutOfRangeError-like ValueError: category >= num_categories.
        CenterOutOfGridError: an annotation's center cell is off-grid.
    """
    if num_categories < 1:
        raise ValueError(f"num_categories must be >= 1, got {num_categories}")
    out = np.zeros((grid.out_height, grid.out_width, num_categories), dtype=np.float64)
    for ann in annotations:
        if ann.category >= num_categories:
            raise ValueError(
                f"annotation category {ann.category} >= num_categories {num_categories}"
            )
        px, py = downsample_center(ann.bbox, grid)
        sigma = gaussian_sigma(ann.bbox.w / grid.stride, ann.bbox.h / grid.stride, min_overlap)
        reach = TRUNCATION_SIGMAS * sigma
        y0 = max(0, math.ceil(py - reach))
        y1 = min(grid.out_height - 1, math.floor(py + reach))
        x0 = max(0, math.ceil(px - reach))
        x1 = min(grid.out_width - 1, math.floor(px + reach))
        if y0 > y1 or x0 > x1:
            continue  # cannot happen for an in-grid center, kept for safety
        ys = np.arange(y0, y1 + 1, dtype=np.float64)
        xs = np.arange(x0, x1 + 1, dtype=np.float64)
        d2 = (ys[:, None] - py) ** 2 + (xs[None, :] - px) ** 2
        patch = np.where(
            d2 <= reach * reach,
            np.exp(-d2 / (2.0 * sigma * sigma)),
            0.0,
        )
        region = out[y0 : y1 + 1, x0 : x1 + 1, ann.category]
        np.maximum(region, patch, out=region)
    return out


def labeled_centers(target: np.ndarray) -> list[tuple[int, int]]:
    """Cells holding an exact 1.0 peak on any channel, in (y, x) scan order.

    Rendering writes exp(0) = 1.0 at each annotated center, so the exact
    comparison recovers precisely the labeled centers.
    """
    peak = np.any(target == 1.0, axis=2)
    return [(int(y), int(x)) for y, x in np.argwhere(peak)]
