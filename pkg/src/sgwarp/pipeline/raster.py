"""Stage I stand-in: paint a parsing straight from a pose."""

from __future__ import annotations

import warnings

import numpy as np
from scipy.ndimage import gaussian_filter

from ..geometry import WarpGrid
from ..tensor_core import ImageTensor, PoseKeypoints, SegmentationMap
from ..warp import bilinear_sample
from .config import PartSpec, PipelineConfig


def segment_distance(xs: np.ndarray, ys: np.ndarray, a, b) -> np.ndarray:
    """Distance from every ``(xs, ys)`` to the segment ``a -> b``."""
    ax, ay = float(a[0]), float(a[1])
    vx, vy = float(b[0]) - ax, float(b[1]) - ay
    px, py = xs - ax, ys - ay
    den = vx * vx + vy * vy
    t = np.zeros_like(xs) if den == 0 else np.clip((px * vx + py * vy) / den, 0.0, 1.0)
    dx = px - t * vx
    dy = py - t * vy
    return np.sqrt(dx * dx + dy * dy)


def capsule_mask(part: PartSpec, pose: PoseKeypoints, height: int, width: int) -> np.ndarray:
    ys, xs = np.mgrid[0:height, 0:width].astype(np.float64)
    a, b = pose.xy[part.joints[0]], pose.xy[part.joints[1]]
    return segment_distance(xs, ys, a, b) <= part.half_width


def rasterize_parsing(pose: PoseKeypoints, cfg: PipelineConfig, height: int | None = None,
                      width: int | None = None) -> SegmentationMap:
    """Paint each configured part as a capsule, later parts on top, background 0.

    Parts with an invisible endpoint are skipped with a ``RuntimeWarning``.
    """
    height = cfg.height if height is None else height
    width = cfg.width if width is None else width
    labels = np.zeros((height, width), dtype=np.int64)
    for part in cfg.parts:
        if not all(pose.visible[j] for j in part.joints):
            warnings.warn(f"part {part.label} skipped: joint(s) {part.joints} not visible", RuntimeWarning,
                          stacklevel=2)
            continue
        labels[capsule_mask(part, pose, height, width)] = part.label
    return SegmentationMap(labels)


# Binary masks are blurred slightly before resampling so that a rotated
# staircase edge lands on the continuous boundary rather than on its steps.
MASK_SMOOTHING = 1.0


def warp_mask(mask: np.ndarray, grid: WarpGrid, border: str = "zeros") -> np.ndarray:
    """Soft occupancy of a binary mask pulled through a backward grid, in [0, 1].

    An identity grid returns the mask itself (as 0/1 floats) untouched.
    """
    m = np.asarray(mask, dtype=np.float64)
    if grid.is_identity():
        return m
    soft = np.clip(gaussian_filter(m, MASK_SMOOTHING, mode="constant"), 0.0, 1.0)
    return bilinear_sample(ImageTensor(soft), grid, border).data[:, :, 0]
