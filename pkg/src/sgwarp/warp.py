"""Bilinear grid sampling and the soft-gated warping block.

The block computes ``phi + gate * sample(residual, grid)``: the residual
features are warped first, then gated elementwise and added back onto the
identity path.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ShapeMismatchError, SgwarpError
from .geometry import WarpGrid
from .imageio import pack_container, unpack_container
from .tensor_core import ImageTensor

GATE_MAGIC = b"SWGATE1\n"
BORDERS = ("zeros", "clamp")


@dataclass(frozen=True, eq=False)
class GateMap:
    """Soft gate values in ``[0, 1]``, one channel or one per feature channel."""

    values: np.ndarray

    def __post_init__(self):
        v = np.array(self.values, dtype=np.float64)
        if v.ndim == 2:
            v = v[:, :, None]
        if v.ndim != 3:
            raise ShapeMismatchError(f"gate must be H x W x C, got {v.shape}")
        if not np.all(np.isfinite(v)) or v.min(initial=0.0) < 0.0 or v.max(initial=0.0) > 1.0:
            raise SgwarpError("gate values must lie in [0, 1]; use GateMap.clamped to clip")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @classmethod
    def clamped(cls, values) -> "GateMap":
        v = np.nan_to_num(np.asarray(values, dtype=np.float64), nan=0.0)
        return cls(np.clip(v, 0.0, 1.0))

    @classmethod
    def constant(cls, height: int, width: int, value: float, channels: int = 1) -> "GateMap":
        return cls(np.full((height, width, channels), float(value)))

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def channels(self) -> int:
        return self.values.shape[2]

    def to_bytes(self) -> bytes:
        return pack_container(GATE_MAGIC, self.values.shape, self.values)

    @classmethod
    def from_bytes(cls, blob: bytes) -> "GateMap":
        return cls.clamped(unpack_container(blob, GATE_MAGIC))


@dataclass(frozen=True)
class SamplerGradients:
    """Partials of a bilinear sample.

    ``input_index[y, x, k]`` is the ``(x, y)`` source pixel of corner ``k``
    (order 00, 10, 01, 11) and ``input_weight[y, x, k]`` its weight; corners
    outside the image under the zeros rule carry weight 0.
    ``grid_gradient[y, x, c]`` is ``(d out / d src_x, d out / d src_y)``.
    """

    input_index: np.ndarray
    input_weight: np.ndarray
    grid_gradient: np.ndarray

    def input_vjp(self, upstream: np.ndarray, height: int, width: int) -> np.ndarray:
        """Pull an output-shaped cotangent back onto the source features."""
        up = np.asarray(upstream, dtype=np.float64)
        out = np.zeros((height, width, up.shape[2]))
        ix = self.input_index[..., 0].ravel()
        iy = self.input_index[..., 1].ravel()
        contrib = (self.input_weight[..., None] * up[:, :, None, :]).reshape(-1, up.shape[2])
        np.add.at(out, (iy, ix), contrib)
        return out


def _check_border(border: str) -> None:
    if border not in BORDERS:
        raise SgwarpError(f"border must be one of {BORDERS}, got {border!r}")


def _corners(features: np.ndarray, grid: WarpGrid, border: str, with_index: bool = False):
    h, w = features.shape[:2]
    flat = features.reshape(h * w, -1)
    x = grid.coords[..., 0]
    y = grid.coords[..., 1]
    x0f = np.floor(x)
    y0f = np.floor(y)
    fx = x - x0f
    fy = y - y0f
    x0 = x0f.astype(np.int64)
    y0 = y0f.astype(np.int64)
    values, indices, valid = [], [], []
    for dx, dy in ((0, 0), (1, 0), (0, 1), (1, 1)):
        ix = x0 + dx
        iy = y0 + dy
        cx = np.clip(ix, 0, w - 1)
        cy = np.clip(iy, 0, h - 1)
        v = np.take(flat, cy * w + cx, axis=0)
        if border == "zeros":
            inside = (ix == cx) & (iy == cy)
            if not inside.all():
                v[~inside] = 0.0
        else:
            inside = np.ones_like(ix, dtype=bool)
        values.append(v)
        if with_index:
            indices.append(np.stack([cx, cy], axis=-1))
            valid.append(inside)
    return fx, fy, values, indices, valid


def bilinear_sample(features: ImageTensor, grid: WarpGrid, border: str = "zeros") -> ImageTensor:
    """``out[y, x] = features`` interpolated at ``grid.coords[y, x]``.

    ``border="zeros"`` reads zeros outside the image, ``"clamp"`` repeats
    the edge pixels.
    """
    _check_border(border)
    if features.height == 0 or features.width == 0:
        raise SgwarpError("cannot sample an empty feature map")
    fx, fy, (v00, v10, v01, v11), _, _ = _corners(features.data, grid, border)
    fx = fx[..., None]
    fy = fy[..., None]
    gx = 1.0 - fx
    gy = 1.0 - fy
    out = (gx * gy) * v00 + (fx * gy) * v10 + (gx * fy) * v01 + (fx * fy) * v11
    return ImageTensor(out)


def bilinear_sample_with_grad(features: ImageTensor, grid: WarpGrid, border: str = "zeros"):
    """:func:`bilinear_sample` plus its analytic partials.

    On lattice lines the grid derivative is one-sided, taken from the cell
    whose lower-left corner is ``floor(coord)``.
    """
    _check_border(border)
    out = bilinear_sample(features, grid, border)
    fx, fy, (v00, v10, v01, v11), idx, valid = _corners(features.data, grid, border, with_index=True)
    gx, gy = 1.0 - fx, 1.0 - fy
    weights = np.stack([gx * gy, fx * gy, gx * fy, fx * fy], axis=-1)
    weights = np.where(np.stack(valid, axis=-1), weights, 0.0)
    fx, fy = fx[..., None], fy[..., None]
    d_dx = (1.0 - fy) * (v10 - v00) + fy * (v11 - v01)
    d_dy = (1.0 - fx) * (v01 - v00) + fx * (v11 - v10)
    grads = SamplerGradients(
        input_index=np.stack(idx, axis=2),
        input_weight=weights,
        grid_gradient=np.stack([d_dx, d_dy], axis=-1),
    )
    return out, grads


def warping_block(phi: ImageTensor, residual: ImageTensor, grid: WarpGrid, gate: GateMap,
                  border: str = "zeros") -> ImageTensor:
    """``phi + gate * bilinear_sample(residual, grid)``."""
    if phi.shape != residual.shape:
        raise ShapeMismatchError(f"phi {phi.shape} and residual {residual.shape} differ")
    if (grid.height, grid.width) != (phi.height, phi.width):
        raise ShapeMismatchError("grid size must match the feature map")
    if (gate.height, gate.width) != (phi.height, phi.width) or gate.channels not in (1, phi.channels):
        raise ShapeMismatchError("gate must match the feature map and have 1 or C channels")
    warped = bilinear_sample(residual, grid, border)
    return ImageTensor(phi.data + gate.values * warped.data)


def gate_from_overlap(warped_part_mask: ImageTensor, target_part_mask: ImageTensor) -> GateMap:
    """Gate that opens where the warped source part lands on the target part."""
    if warped_part_mask.shape != target_part_mask.shape:
        raise ShapeMismatchError("masks must have equal shapes")
    for m in (warped_part_mask, target_part_mask):
        if m.data.min(initial=0.0) < 0.0 or m.data.max(initial=0.0) > 1.0:
            raise SgwarpError("mask values must lie in [0, 1]")
    return GateMap(warped_part_mask.data * target_part_mask.data)
