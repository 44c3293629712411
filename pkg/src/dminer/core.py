"""Shared geometric primitives and numeric helpers.

Conventions used across the package:

* Dense maps (features, heatmaps) are float64 numpy arrays laid out
  ``(row, column, channel)``, i.e. indexed ``[y, x, c]``.
* Boxes are center-form ``(cx, cy, w, h)`` in input-image pixels.
* Grid positions are ``(y, x)`` integer pairs on the downsampled grid.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import (
    InvalidSizeError,
    NonFiniteLossError,
    ZeroVectorError,
)

ALLOWED_STRIDES = (1, 2, 4, 8, 16)


@dataclass(frozen=True)
class Grid:
    """Input-resolution extent plus the output stride.

    The output (downsampled) grid has ``out_height x out_width`` cells with
    ``out_height = floor(height / stride)``.
    """

    height: int
    width: int
    stride: int

    def __post_init__(self):
        if self.stride not in ALLOWED_STRIDES:
            raise ValueError(f"stride must be one of {ALLOWED_STRIDES}, got {self.stride}")
        if self.height < self.stride or self.width < self.stride:
            raise ValueError(
                f"grid {self.height}x{self.width} has no cells at stride {self.stride}"
            )

    @property
    def out_height(self) -> int:
        return self.height // self.stride

    @property
    def out_width(self) -> int:
        return self.width // self.stride


@dataclass(frozen=True)
class BBox:
    """Center-form box in input pixels. Width and height must be positive."""

    cx: float
    cy: float
    w: float
    h: float

    def __post_init__(self):
        for name in ("cx", "cy", "w", "h"):
            if not np.isfinite(getattr(self, name)):
                raise InvalidSizeError(f"bbox field {name} is not finite")
        if self.w <= 0 or self.h <= 0:
            raise InvalidSizeError(f"bbox sides must be positive, got w={self.w}, h={self.h}")

    def corners(self) -> tuple[float, float, float, float]:
        """Return (x1, y1, x2, y2)."""
        hw, hh = self.w / 2.0, self.h / 2.0
        return (self.cx - hw, self.cy - hh, self.cx + hw, self.cy + hh)


@dataclass(frozen=True)
class Annotation:
    """A single labeled instance: a box plus a dense category index."""

    bbox: BBox
    category: int

    def __post_init__(self):
        if self.category < 0:
            raise ValueError(f"category must be non-negative, got {self.category}")


def as_feature_map(arr: np.ndarray, name: str = "array") -> np.ndarray:
    """Validate a (H, W, C) float64 map: 3-D, finite. Returns a float64 view/copy."""
    a = np.asarray(arr, dtype=np.float64)
    if a.ndim != 3:
        raise ValueError(f"{name} must be 3-D (y, x, channel), got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError(f"{name} contains non-finite values")
    return a


def as_heatmap(arr: np.ndarray, name: str = "heatmap") -> np.ndarray:
    """Validate a (H, W, C) map whose values lie in [0, 1]."""
    a = as_feature_map(arr, name)
    if a.size and (a.min() < 0.0 or a.max() > 1.0):
        raise ValueError(f"{name} values must lie in [0, 1]")
    return a


def l2_normalize(v: np.ndarray) -> np.ndarray:
    """Return v / ||v||_2.

    Raises:
        ZeroVectorError: if the norm is exactly zero.
    """
    v = np.asarray(v, dtype=np.float64)
    norm = float(np.linalg.norm(v))
    if norm == 0.0:
        raise ZeroVectorError("cannot normalize a zero vector")
    return v / norm


def l2_normalize_rows(mat: np.ndarray) -> np.ndarray:
    """Row-wise l2_normalize for a 2-D array; any zero row raises ZeroVectorError."""
    mat = np.asarray(mat, dtype=np.float64)
    if mat.ndim != 2:
        raise ValueError(f"expected a 2-D array, got shape {mat.shape}")
    norms = np.linalg.norm(mat, axis=1)
    if np.any(norms == 0.0):
        bad = int(np.flatnonzero(norms == 0.0)[0])
        raise ZeroVectorError(f"row {bad} has zero norm")
    return mat / norms[:, None]


def iou(a: BBox, b: BBox) -> float:
    """Intersection over union of two center-form boxes."""
    ax1, ay1, ax2, ay2 = a.corners()
    bx1, by1, bx2, by2 = b.corners()
    iw = min(ax2, bx2) - max(ax1, bx1)
    ih = min(ay2, by2) - max(ay1, by1)
    if iw <= 0.0 or ih <= 0.0:
        return 0.0
    inter = iw * ih
    union = a.w * a.h + b.w * b.h - inter
    return inter / union


def finite_diff_grad(
    f: Callable[[np.ndarray], float], x: np.ndarray, h: float = 1e-4
) -> np.ndarray:
    """Central finite-difference gradient of a scalar function.

    Evaluates (f(x + h e_i) - f(x - h e_i)) / (2 h) for every coordinate,
    entirely in float64. This is the reference oracle the analytic gradients
    in this package are checked against, so it must stay independent of them.

    Args:
        f: scalar function of an array with x's shape.
        x: point at which to differentiate (not modified).
        h: step size.

    Returns:
        Array of x's shape holding the estimated gradient.

    Raises:
        NonFiniteLossError: if any evaluation of f is NaN or infinite.
    """
    x = np.asarray(x, dtype=np.float64)
    if h <= 0:
        raise ValueError(f"h must be positive, got {h}")
    grad = np.zeros_like(x)
    for idx in np.ndindex(x.shape):
        xp = x.copy()
        xp[idx] = x[idx] + h
        fp = float(f(xp))
        xp[idx] = x[idx] - h
        fm = float(f(xp))
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise NonFiniteLossError(f"non-finite loss at coordinate {idx}")
        grad[idx] = (fp - fm) / (2.0 * h)
    return grad
