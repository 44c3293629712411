"""Detector-facing adapters for mined heatmaps.

Anchor-based heads consume one pooled pseudo map per anchor size, produced by
centered average pooling with a kernel matched to the anchor. Multi-level
heads get a fixed per-level group-count schedule.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import as_heatmap
from .errors import InvalidLevelConfigError

DEFAULT_ANCHOR_SIZES = (32, 64, 128, 256, 512)
DEFAULT_KERNEL_SIZES = (1, 3, 5, 7, 9)


@dataclass(frozen=True)
class AnchorSpec:
    """Anchor sizes paired one-to-one with odd, ascending pooling kernels."""

    anchor_sizes: tuple[int, ...] = DEFAULT_ANCHOR_SIZES
    kernel_sizes: tuple[int, ...] = DEFAULT_KERNEL_SIZES

    def __post_init__(self):
        if len(self.anchor_sizes) != len(self.kernel_sizes) or not self.anchor_sizes:
            raise ValueError("anchor_sizes and kernel_sizes must pair up non-empty")
        if any(s <= 0 for s in self.anchor_sizes):
            raise ValueError("anchor sizes must be positive")
        if any(k < 1 or k % 2 == 0 for k in self.kernel_sizes):
            raise ValueError("kernel sizes must be odd and >= 1")
        if list(self.kernel_sizes) != sorted(self.kernel_sizes):
            raise ValueError("kernel sizes must be ascending")


@dataclass(frozen=True)
class FpnLevelConfig:
    """Group sizes per pyramid level, positive and non-increasing."""

    m_per_level: tuple[int, ...]

    def __post_init__(self):
        if not self.m_per_level:
            raise InvalidLevelConfigError("m_per_level must be non-empty")
        if any(m <= 0 for m in self.m_per_level):
            raise InvalidLevelConfigError(f"group sizes must be positive, got {self.m_per_level}")
        if any(a < b for a, b in zip(self.m_per_level, self.m_per_level[1:])):
            raise InvalidLevelConfigError(
                f"group sizes must be non-increasing, got {self.m_per_level}"
            )

    @property
    def num_levels(self) -> int:
        return len(self.m_per_level)


def default_fpn_config() -> FpnLevelConfig:
    """Mining on the three finest levels with groups of 96, 64 and 32."""
    return FpnLevelConfig(m_per_level=(96, 64, 32))


def average_pool2d(heatmap: np.ndarray, kernel: int) -> np.ndarray:
    """Centered k x k mean per channel, renormalized by the in-bounds count.

    Border windows average only the cells that exist (no zero padding), so a
    constant map stays constant. k = 1 returns the input unchanged.
    """
    hm = as_heatmap(heatmap, "heatmap")
    if kernel < 1 or kernel % 2 == 0:
        raise ValueError(f"kernel must be odd and >= 1, got {kernel}")
    if kernel == 1:
        return hm.copy()
    h, w, _ = hm.shape
    r = kernel // 2

    # Summed-area tables give every clipped-window sum in O(1).
    integral = np.zeros((h + 1, w + 1, hm.shape[2]), dtype=np.float64)
    integral[1:, 1:, :] = hm.cumsum(axis=0).cumsum(axis=1)
    ys = np.arange(h)
    xs = np.arange(w)
    y0 = np.clip(ys - r, 0, h)
    y1 = np.clip(ys + r + 1, 0, h)
    x0 = np.clip(xs - r, 0, w)
    x1 = np.clip(xs + r + 1, 0, w)

    sums = (
        integral[y1[:, None], x1[None, :], :]
        - integral[y0[:, None], x1[None, :], :]
        - integral[y1[:, None], x0[None, :], :]
        + integral[y0[:, None], x0[None, :], :]
    )
    counts = (y1 - y0)[:, None] * (x1 - x0)[None, :]
    # table differences can stray an ulp outside the input's [0, 1] range
    return np.clip(sums / counts[:, :, None], 0.0, 1.0)


def anchor_pseudo_pool(pseudo: np.ndarray, spec: AnchorSpec = AnchorSpec()) -> dict[int, np.ndarray]:
    """One pooled pseudo heatmap per anchor size.

    Returns:
        Mapping anchor_size -> pooled (H, W, C) map, kernels applied per
        spec's pairing. Pooled values stay in [0, 1] and never exceed the
        input's maximum (each output cell is a mean of input cells).
    """
    hm = as_heatmap(pseudo, "pseudo")
    return {
        size: average_pool2d(hm, kernel)
        for size, kernel in zip(spec.anchor_sizes, spec.kernel_sizes)
    }
