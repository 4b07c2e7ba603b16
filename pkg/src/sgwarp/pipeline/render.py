"""Stage II stand-in: per-part warping and region-wise compositing.

Transforms are estimated in the backward direction (target part onto
condition part) because a gather grid needs, for each output pixel, the
place in the condition image to read from. Each part is rendered as

    phi      = constant canvas of the part's mean condition colour
    residual = (condition image - mean) restricted to the condition part
    out      = phi + gate * warp(residual)

and the output takes, at every pixel, the rendering of the part the target
parsing assigns there. Where the gate is closed the part's mean colour
shows through, which is also how holes get filled.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import SgwarpError, ShapeMismatchError
from ..geometry import (
    AffineParams,
    PartTransform,
    TpsParams,
    WarpGrid,
    estimate_part_transform,
    match_parts,
    pixel_scale,
    transform_grid,
    transforms_from_dict,
    transforms_to_dict,
)
from ..metrics import mask_iou, mean_iou
from ..tensor_core import ImageTensor, PoseKeypoints, SegmentationMap
from ..warp import GateMap, bilinear_sample, gate_from_overlap, warping_block
from .config import PipelineConfig
from .fixtures import SynthFixture
from .raster import rasterize_parsing, warp_mask


@dataclass(frozen=True, eq=False)
class PartDiagnostics:
    """What happened to one target label during rendering.

    ``status`` is ``"matched"``, ``"background"`` (identity, never
    estimated) or ``"missing"`` (label absent from the condition parsing,
    filled with the global mean colour). ``backward`` maps target pixels to
    condition pixels; ``forward`` is its inverse.
    """

    label: int
    status: str
    backward: AffineParams = field(default_factory=AffineParams.identity)
    tps: TpsParams = field(default_factory=TpsParams.identity)
    residual: float = 0.0
    warning: str | None = None
    iou: float | None = None

    @property
    def forward(self) -> AffineParams:
        return self.backward.inverse()

    def to_dict(self, height: int, width: int) -> dict:
        fwd = self.forward
        disp = np.abs(np.asarray(self.tps.target_displacements) * pixel_scale(height, width))
        out = {
            "label": self.label,
            "status": self.status,
            "backward": transforms_to_dict(self.backward, self.tps),
            "forward_affine": fwd.to_list(),
            "rotation_degrees": fwd.rotation_degrees,
            "tps_max_displacement_px": float(disp.max()) if disp.size else 0.0,
            "chamfer_residual": self.residual,
            "iou": self.iou,
        }
        if self.warning:
            out["warning"] = self.warning
        return out


@dataclass(frozen=True, eq=False)
class RenderResult:
    image: ImageTensor
    parsing: SegmentationMap
    warped_parsing: SegmentationMap
    parts: dict
    omitted: tuple
    part_labels: tuple

    @property
    def mean_iou(self) -> float:
        """Mean IoU of the warped condition parts against the target parsing."""
        return mean_iou(self.warped_parsing, self.parsing, self.part_labels)

    def diagnostics(self) -> dict:
        h, w = self.parsing.shape
        return {
            "parts": [self.parts[k].to_dict(h, w) for k in sorted(self.parts)],
            "omitted": list(self.omitted),
            "mean_iou": self.mean_iou,
        }


def estimate_transforms(condition_parsing: SegmentationMap, target_parsing: SegmentationMap,
                        cfg: PipelineConfig | None = None) -> tuple[dict, list]:
    """Backward (target -> condition) transform per label present in both parsings."""
    cfg = cfg or PipelineConfig()
    matched = match_parts(target_parsing, condition_parsing, landmarks=cfg.landmarks)
    out = {}
    for c in matched.correspondences:
        out[c.label] = estimate_part_transform(c, tps_grid_shape=cfg.tps_grid, regularization=cfg.tps_lambda)
    return out, list(matched.omitted)


def _gate(cfg: PipelineConfig, src_mask: np.ndarray, grid: WarpGrid, target_mask: np.ndarray) -> GateMap:
    if cfg.gate_mode == "constant":
        return GateMap.constant(target_mask.shape[0], target_mask.shape[1], cfg.gate_constant)
    if grid.is_identity():
        warped = src_mask.astype(np.float64)
    else:
        warped = bilinear_sample(ImageTensor(src_mask.astype(np.float64)), grid, cfg.border).data[:, :, 0]
    return gate_from_overlap(ImageTensor(warped), ImageTensor(target_mask.astype(np.float64)))


def render(condition_image: ImageTensor, condition_parsing: SegmentationMap, cfg: PipelineConfig | None = None,
           target_pose: PoseKeypoints | None = None, target_parsing: SegmentationMap | None = None,
           transforms: dict | None = None) -> RenderResult:
    """Render the condition person in the target layout.

    The target layout comes from ``target_parsing`` if given, otherwise it
    is rasterized from ``target_pose``. ``transforms`` (label ->
    :class:`PartTransform`, backward) skips estimation; labels it lacks are
    treated as unmoved.
    """
    cfg = cfg or PipelineConfig()
    if target_parsing is None:
        if target_pose is None:
            raise ValueError("render needs a target pose or a target parsing")
        target_parsing = rasterize_parsing(target_pose, cfg, *condition_parsing.shape)
    if condition_image.data.shape[:2] != condition_parsing.shape or target_parsing.shape != condition_parsing.shape:
        raise ShapeMismatchError("condition image, condition parsing and target parsing must share H x W")

    h, w = target_parsing.shape
    img = condition_image.data
    if transforms is None:
        transforms, omitted = estimate_transforms(condition_parsing, target_parsing, cfg)
    else:
        transforms = dict(transforms)
        present = set(condition_parsing.present_labels()) ^ set(target_parsing.present_labels())
        omitted = sorted(present - {0})
    grids = {label: transform_grid(t.affine, t.tps, h, w) for label, t in transforms.items()}
    global_mean = img.reshape(-1, img.shape[2]).mean(axis=0)

    out = np.empty_like(img)
    parts = {}
    for label in target_parsing.present_labels():
        target_mask = target_parsing.mask(label)
        src_mask = condition_parsing.mask(label)
        if not src_mask.any():
            out[target_mask] = global_mean
            parts[label] = PartDiagnostics(label, "missing", warning="absent from condition; filled with mean colour")
            continue
        if label in transforms:
            t, grid = transforms[label], grids[label]
            status = "matched"
        else:
            t = PartTransform(AffineParams.identity(), TpsParams.identity(*cfg.tps_grid, cfg.tps_lambda))
            grid = WarpGrid.identity(h, w)
            status = "background"
        mean = img[src_mask].mean(axis=0)
        phi = ImageTensor.full(h, w, mean)
        residual = ImageTensor((img - mean) * src_mask[:, :, None])
        block = warping_block(phi, residual, grid, _gate(cfg, src_mask, grid, target_mask), cfg.border)
        out[target_mask] = block.data[target_mask]
        parts[label] = PartDiagnostics(label, status, t.affine, t.tps, t.residual, t.warning)

    warped = warp_parsing(condition_parsing, grids, cfg)
    for label, d in parts.items():
        if d.status == "matched":
            parts[label] = PartDiagnostics(d.label, d.status, d.backward, d.tps, d.residual, d.warning,
                                           mask_iou(warped.mask(label), target_parsing.mask(label)))
    return RenderResult(ImageTensor(out), target_parsing, warped, parts, tuple(omitted), tuple(cfg.part_labels))


def warp_parsing(condition_parsing: SegmentationMap, grids: dict, cfg: PipelineConfig | None = None) -> SegmentationMap:
    """Pull every condition part through its backward grid and repaint.

    ``grids`` maps label -> :class:`WarpGrid`. Parts are painted in
    configured order (later on top), matching the rasterizer, wherever
    their warped occupancy reaches 1/2.
    """
    cfg = cfg or PipelineConfig()
    labels = np.zeros(condition_parsing.shape, dtype=np.int64)
    order = [p.label for p in cfg.parts if p.label in grids]
    order += sorted(l for l in grids if l not in order)
    for label in order:
        labels[warp_mask(condition_parsing.mask(label), grids[label], cfg.border) >= 0.5] = label
    return SegmentationMap(labels)


def render_fixture(fixture: SynthFixture, cfg: PipelineConfig | None = None) -> RenderResult:
    """Render a fixture's condition image into its target parsing."""
    return render(fixture.condition_image, fixture.condition_parsing, cfg, target_parsing=fixture.target_parsing)


def transforms_document(transforms: dict, omitted=(), height: int | None = None, width: int | None = None) -> dict:
    """JSON form of backward per-part transforms."""
    doc = {
        "direction": "target_to_condition",
        "parts": {str(k): transforms_to_dict(t.affine, t.tps) for k, t in sorted(transforms.items())},
        "omitted": list(omitted),
    }
    if height is not None:
        doc["height"], doc["width"] = int(height), int(width)
    warnings = {str(k): t.warning for k, t in sorted(transforms.items()) if t.warning}
    if warnings:
        doc["warnings"] = warnings
    return doc


def read_transforms_document(doc: dict) -> dict:
    """Backward per-part transforms from :func:`transforms_document` output.

    Documents marked ``"direction": "condition_to_target"`` (fixture ground
    truth) are inverted; only their affine part can be, so a non-identity
    TPS there is an error.
    """
    if "parts" in doc:
        items = {int(k): v for k, v in doc["parts"].items()}
    elif "affine" in doc:
        items = {0: doc}
    else:
        raise SgwarpError("transforms document needs 'parts' or 'affine'")
    direction = doc.get("direction", "target_to_condition")
    if direction not in ("target_to_condition", "condition_to_target"):
        raise SgwarpError(f"unknown transform direction {direction!r}")
    out = {}
    for label, d in items.items():
        affine, tps = transforms_from_dict(d)
        if direction == "condition_to_target":
            if not tps.is_identity():
                raise SgwarpError(f"cannot invert the TPS of part {label}; store backward transforms instead")
            affine = affine.inverse()
        out[label] = PartTransform(affine, tps)
    return out
