"""Image and parsing similarity scores."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ImageTooSmallError, ShapeMismatchError, SgwarpError
from .tensor_core import ImageTensor, SegmentationMap


@dataclass(frozen=True)
class SsimConfig:
    window: int = 11
    sigma: float = 1.5
    k1: float = 0.01
    k2: float = 0.03
    dynamic_range: float = 1.0

    def __post_init__(self):
        if self.window < 3 or self.window % 2 == 0:
            raise SgwarpError("SSIM window must be odd and at least 3")
        if self.k1 <= 0 or self.k2 <= 0 or self.sigma <= 0 or self.dynamic_range <= 0:
            raise SgwarpError("SSIM constants must be positive")

    @property
    def c1(self) -> float:
        return (self.k1 * self.dynamic_range) ** 2

    @property
    def c2(self) -> float:
        return (self.k2 * self.dynamic_range) ** 2


def gaussian_taps(size: int, sigma: float) -> np.ndarray:
    x = np.arange(size, dtype=np.float64) - (size - 1) / 2.0
    g = np.exp(-(x ** 2) / (2.0 * sigma ** 2))
    return g / g.sum()


def _filter_valid(a: np.ndarray, taps: np.ndarray) -> np.ndarray:
    # separable 'valid' correlation over the first two axes, fixed summation order
    k = len(taps)
    h, w = a.shape[0] - k + 1, a.shape[1] - k + 1
    rows = taps[0] * a[0:h]
    for i in range(1, k):
        rows = rows + taps[i] * a[i:i + h]
    out = taps[0] * rows[:, 0:w]
    for i in range(1, k):
        out = out + taps[i] * rows[:, i:i + w]
    return out


def _local_stats(a: ImageTensor, b: ImageTensor, cfg: SsimConfig):
    if a.shape != b.shape:
        raise ShapeMismatchError(f"shapes differ: {a.shape} vs {b.shape}")
    if a.height < cfg.window or a.width < cfg.window:
        raise ImageTooSmallError(f"SSIM needs images of at least {cfg.window} x {cfg.window}")
    taps = gaussian_taps(cfg.window, cfg.sigma)
    x, y = a.data, b.data
    mu_x = _filter_valid(x, taps)
    mu_y = _filter_valid(y, taps)
    var_x = _filter_valid(x * x, taps) - mu_x * mu_x
    var_y = _filter_valid(y * y, taps) - mu_y * mu_y
    cov = _filter_valid(x * y, taps) - mu_x * mu_y
    return mu_x, mu_y, var_x, var_y, cov


def ssim_map(a: ImageTensor, b: ImageTensor, cfg: SsimConfig = SsimConfig()) -> np.ndarray:
    """Local SSIM at every valid window position, per channel."""
    mu_x, mu_y, var_x, var_y, cov = _local_stats(a, b, cfg)
    # written so that swapping a and b gives bitwise identical values
    num = (2.0 * (mu_x * mu_y) + cfg.c1) * (2.0 * cov + cfg.c2)
    den = (mu_x * mu_x + mu_y * mu_y + cfg.c1) * (var_x + var_y + cfg.c2)
    return num / den


def ssim(a: ImageTensor, b: ImageTensor, cfg: SsimConfig = SsimConfig()) -> float:
    """Mean local SSIM over Gaussian windows, averaged over channels."""
    m = ssim_map(a, b, cfg)
    return float(np.mean(m.reshape(-1, m.shape[2]).mean(axis=0)))


def contrast_structure(a: ImageTensor, b: ImageTensor, cfg: SsimConfig = SsimConfig()) -> float:
    """Mean of the contrast-structure factor of SSIM (no luminance term)."""
    _, _, var_x, var_y, cov = _local_stats(a, b, cfg)
    m = (2.0 * cov + cfg.c2) / (var_x + var_y + cfg.c2)
    return float(np.mean(m.reshape(-1, m.shape[2]).mean(axis=0)))


def mean_iou(a: SegmentationMap, b: SegmentationMap, labels) -> float:
    """Mean intersection-over-union over ``labels``.

    Labels absent from both maps are skipped; if every label is absent
    the maps agree trivially and 1.0 is returned.
    """
    labels = list(labels)
    if not labels:
        raise SgwarpError("mean_iou needs a non-empty label subset")
    if a.shape != b.shape:
        raise ShapeMismatchError(f"shapes differ: {a.shape} vs {b.shape}")
    scores = []
    for label in labels:
        ma = a.labels == label
        mb = b.labels == label
        union = np.count_nonzero(ma | mb)
        if union == 0:
            continue
        scores.append(np.count_nonzero(ma & mb) / union)
    return float(np.mean(scores)) if scores else 1.0


def mask_iou(a: np.ndarray, b: np.ndarray) -> float:
    union = np.count_nonzero(a | b)
    return 1.0 if union == 0 else np.count_nonzero(a & b) / union
