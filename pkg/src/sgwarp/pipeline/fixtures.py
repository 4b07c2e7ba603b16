"""Seeded synthetic person fixtures with known per-part rigid motion.

A fixture is a canonical stick figure, articulated twice: once for the
condition pose and once more (scaled by ``motion``) for the target pose.
Each part moves rigidly, so the ground truth per part is an exact rigid
transform taking the condition segment onto the target segment.

The condition and target images are painted from the same per-part
texture fields, the target one through the inverse ground-truth motion,
so the target image is what a perfect part-wise warp would produce.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.ndimage import gaussian_filter

from ..geometry import AffineParams, TpsParams, affine_grid, transforms_from_dict, transforms_to_dict
from ..imageio import read_image, read_segmentation, write_image, write_segmentation
from ..metrics import mask_iou
from ..tensor_core import ImageTensor, PoseKeypoints, SegmentationMap, load_pose, save_pose
from ..warp import bilinear_sample
from .config import PipelineConfig
from .raster import rasterize_parsing, warp_mask

# (x, y) on a 224 x 256 reference canvas, rescaled to the configured size;, JOINT_NAMES order
CANONICAL_JOINTS = np.array([
    [112.0, 24.0],   # nose
    [112.0, 52.0],   # neck
    [76.0, 78.0],    # r_shoulder
    [60.0, 105.7],   # r_elbow
    [44.0, 133.4],   # r_wrist
    [148.0, 78.0],   # l_shoulder
    [164.0, 105.7],  # l_elbow
    [180.0, 133.4],  # l_wrist
    [90.0, 150.0],   # r_hip
    [84.2, 191.6],   # r_knee
    [78.3, 233.2],   # r_ankle
    [134.0, 150.0],  # l_hip
    [139.8, 191.6],  # l_knee
    [145.7, 233.2],  # l_ankle
    [104.0, 18.0],   # r_eye
    [120.0, 18.0],   # l_eye
    [96.0, 24.0],    # r_ear
    [128.0, 24.0],   # l_ear
])
CANONICAL_SIZE = (256, 224)

FACE = [0, 14, 15, 16, 17]
R_ARM = [3, 4]
L_ARM = [6, 7]
CHEST = [1, 2, 5] + R_ARM + L_ARM + FACE
R_LEG = [9, 10]
L_LEG = [12, 13]
PELVIS = [8, 11] + R_LEG + L_LEG

# amplitude (degrees or pixels) of each articulation, before the motion scale
AMPLITUDES = {
    "chest": 6.0,
    "face": 12.0,
    "r_arm": 20.0,
    "l_arm": 20.0,
    "pelvis": 6.0,
    "r_leg": 12.0,
    "l_leg": 12.0,
    "shift": 6.0,
}

# label -> base RGB
PALETTE = {
    0: (0.86, 0.86, 0.82),
    5: (0.78, 0.22, 0.20),
    9: (0.18, 0.26, 0.55),
    13: (0.93, 0.76, 0.62),
    14: (0.88, 0.66, 0.52),
    15: (0.84, 0.62, 0.48),
    16: (0.30, 0.38, 0.62),
    17: (0.26, 0.34, 0.58),
}
NOISE_AMPLITUDE = 0.06
NOISE_SMOOTHING = 2.0


def _rotate(xy: np.ndarray, idx, center, degrees: float) -> None:
    th = math.radians(degrees)
    r = np.array([[math.cos(th), -math.sin(th)], [math.sin(th), math.cos(th)]])
    c = np.asarray(center, dtype=np.float64).copy()
    xy[idx] = (xy[idx] - c) @ r.T + c


def articulate(xy: np.ndarray, params: dict) -> np.ndarray:
    """Apply the kinematic tree: torso pieces first, then limbs about their joints."""
    out = np.array(xy, dtype=np.float64)
    _rotate(out, CHEST, 0.5 * (out[2] + out[5]), params.get("chest", 0.0))
    _rotate(out, FACE, out[1], params.get("face", 0.0))
    _rotate(out, R_ARM, out[2], params.get("r_arm", 0.0))
    _rotate(out, L_ARM, out[5], params.get("l_arm", 0.0))
    _rotate(out, PELVIS, 0.5 * (out[8] + out[11]), params.get("pelvis", 0.0))
    _rotate(out, R_LEG, out[8], params.get("r_leg", 0.0))
    _rotate(out, L_LEG, out[11], params.get("l_leg", 0.0))
    out += np.asarray(params.get("shift", (0.0, 0.0)))
    return out


def _outward(vec: np.ndarray, right: bool) -> float:
    dx, dy = vec
    return math.degrees(math.atan2(-dx if right else dx, dy))


def _plausible(xy: np.ndarray, cfg: PipelineConfig) -> bool:
    arms = (_outward(xy[4] - xy[2], True), _outward(xy[7] - xy[5], False))
    legs = (_outward(xy[10] - xy[8], True), _outward(xy[13] - xy[11], False))
    if not all(10.0 <= a <= 60.0 for a in arms) or not all(-5.0 <= a <= 25.0 for a in legs):
        return False
    up = xy[0] - xy[1]
    if abs(math.degrees(math.atan2(up[0], -up[1]))) > 20.0:
        return False
    margin = 2.0
    for part in cfg.parts:
        a, b = xy[part.joints[0]], xy[part.joints[1]]
        lo = np.minimum(a, b) - part.half_width
        hi = np.maximum(a, b) + part.half_width
        if lo.min() < margin or hi[0] > cfg.width - 1 - margin or hi[1] > cfg.height - 1 - margin:
            return False
    return True


def _sample_params(rng: np.random.Generator, scale: float) -> dict:
    params = {k: scale * rng.uniform(-a, a) for k, a in AMPLITUDES.items() if k != "shift"}
    params["shift"] = tuple(scale * rng.uniform(-AMPLITUDES["shift"], AMPLITUDES["shift"], size=2))
    return params


def _draw_pose(rng, base: np.ndarray, scale: float, cfg: PipelineConfig, tries: int = 200) -> np.ndarray:
    if scale == 0:
        return base.copy()
    for _ in range(tries):
        xy = articulate(base, _sample_params(rng, scale))
        if _plausible(xy, cfg):
            return xy
    return base.copy()


def segment_transform(a0, b0, a1, b1) -> AffineParams:
    """Rigid map taking segment ``a0 -> b0`` onto ``a1 -> b1`` (equal lengths assumed)."""
    v0 = np.asarray(b0, float) - np.asarray(a0, float)
    v1 = np.asarray(b1, float) - np.asarray(a1, float)
    th = math.atan2(v1[1], v1[0]) - math.atan2(v0[1], v0[0])
    r = np.array([[math.cos(th), -math.sin(th)], [math.sin(th), math.cos(th)]])
    return AffineParams.from_matrix(r, np.asarray(a1, float) - r @ np.asarray(a0, float))


@dataclass(frozen=True, eq=False)
class SynthFixture:
    """Condition/target pair; ``ground_truth`` maps label -> (affine, tps) from condition to target."""

    seed: int
    motion: float
    condition_image: ImageTensor
    target_image: ImageTensor
    condition_pose: PoseKeypoints
    target_pose: PoseKeypoints
    condition_parsing: SegmentationMap
    target_parsing: SegmentationMap
    ground_truth: dict

    def save(self, directory) -> None:
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        write_image(self.condition_image, d / "condition.png")
        write_image(self.target_image, d / "target.png")
        write_segmentation(self.condition_parsing, d / "condition_parsing.png")
        write_segmentation(self.target_parsing, d / "target_parsing.png")
        save_pose(self.condition_pose, d / "condition_pose.json")
        save_pose(self.target_pose, d / "target_pose.json")
        gt = {
            "direction": "condition_to_target",
            "parts": {str(k): transforms_to_dict(a, t) for k, (a, t) in sorted(self.ground_truth.items())},
        }
        (d / "ground_truth.json").write_text(json.dumps(gt, indent=1))
        meta = {"seed": self.seed, "motion": self.motion}
        (d / "fixture.json").write_text(json.dumps(meta, indent=1))

    @classmethod
    def load(cls, directory) -> "SynthFixture":
        d = Path(directory)
        meta = json.loads((d / "fixture.json").read_text()) if (d / "fixture.json").exists() else {}
        gt_path = d / "ground_truth.json"
        gt = {}
        if gt_path.exists():
            gt = {int(k): transforms_from_dict(v) for k, v in json.loads(gt_path.read_text())["parts"].items()}
        return cls(
            seed=int(meta.get("seed", -1)),
            motion=float(meta.get("motion", float("nan"))),
            condition_image=read_image(d / "condition.png"),
            target_image=read_image(d / "target.png"),
            condition_pose=load_pose(d / "condition_pose.json"),
            target_pose=load_pose(d / "target_pose.json"),
            condition_parsing=read_segmentation(d / "condition_parsing.png"),
            target_parsing=read_segmentation(d / "target_parsing.png"),
            ground_truth=gt,
        )


def _texture_fields(rng, labels, height, width) -> dict:
    fields = {}
    for label in labels:
        base = np.asarray(PALETTE.get(label, rng.uniform(0.2, 0.8, size=3)), dtype=np.float64)
        base = np.clip(base + rng.uniform(-0.04, 0.04, size=3), 0.1, 0.9)
        noise = gaussian_filter(rng.standard_normal((height, width, 3)), sigma=(NOISE_SMOOTHING, NOISE_SMOOTHING, 0))
        noise *= NOISE_AMPLITUDE / noise.std()
        fields[label] = ImageTensor(np.clip(base + noise, 0.0, 1.0))
    return fields


def canonical_pose(cfg: PipelineConfig | None = None) -> np.ndarray:
    """Reference joint positions (18 x 2) scaled to the configured canvas."""
    cfg = cfg or PipelineConfig()
    return CANONICAL_JOINTS * np.array([cfg.width / CANONICAL_SIZE[1], cfg.height / CANONICAL_SIZE[0]])


def make_fixture(seed: int, cfg: PipelineConfig | None = None, motion: float = 1.0) -> SynthFixture:
    """Deterministic fixture for ``seed``; ``motion=0`` gives target pose == condition pose."""
    cfg = cfg or PipelineConfig()
    rng = np.random.default_rng(seed)
    cond_xy = _draw_pose(rng, canonical_pose(cfg), 0.5, cfg)
    targ_xy = _draw_pose(rng, cond_xy, float(motion), cfg) if motion else cond_xy.copy()
    return fixture_from_poses(cond_xy, targ_xy, cfg, seed=seed, motion=motion, rng=rng)


def fixture_from_poses(condition_xy, target_xy, cfg: PipelineConfig | None = None, seed: int = 0,
                       motion: float = float("nan"), rng: np.random.Generator | None = None) -> SynthFixture:
    """Build a fixture from explicit joint positions.

    Each part's ground truth is the rigid motion of its joint segment, so
    target poses should move parts rigidly (equal segment lengths).
    """
    cfg = cfg or PipelineConfig()
    rng = rng if rng is not None else np.random.default_rng(seed)
    cond_xy = np.asarray(condition_xy, dtype=np.float64)
    targ_xy = np.asarray(target_xy, dtype=np.float64)
    visible = np.ones(len(cond_xy), dtype=bool)
    cond_pose = PoseKeypoints(cond_xy, visible)
    targ_pose = PoseKeypoints(targ_xy, visible)
    cond_seg = rasterize_parsing(cond_pose, cfg)
    targ_seg = rasterize_parsing(targ_pose, cfg)

    gt = {}
    for part in cfg.parts:
        i, j = part.joints
        if np.array_equal(cond_xy[[i, j]], targ_xy[[i, j]]):
            rigid = AffineParams.identity()
        else:
            rigid = segment_transform(cond_xy[i], cond_xy[j], targ_xy[i], targ_xy[j])
        gt[part.label] = (rigid, TpsParams.identity(*cfg.tps_grid))

    fields = _texture_fields(rng, [0] + cfg.part_labels, cfg.height, cfg.width)
    cond_img = np.zeros((cfg.height, cfg.width, 3))
    targ_img = np.zeros((cfg.height, cfg.width, 3))
    for label, tex in fields.items():
        m = cond_seg.labels == label
        cond_img[m] = tex.data[m]
        m = targ_seg.labels == label
        if label == 0 or gt[label][0].is_identity():
            targ_img[m] = tex.data[m]
        else:
            grid = affine_grid(gt[label][0].inverse(), cfg.height, cfg.width)
            targ_img[m] = bilinear_sample(tex, grid, "clamp").data[m]

    return SynthFixture(
        seed=int(seed),
        motion=float(motion),
        condition_image=ImageTensor(cond_img),
        target_image=ImageTensor(targ_img),
        condition_pose=cond_pose,
        target_pose=targ_pose,
        condition_parsing=cond_seg,
        target_parsing=targ_seg,
        ground_truth=gt,
    )


def ground_truth_iou(fixture: SynthFixture) -> dict:
    """Per-part IoU between GT-warped condition masks and the target masks."""
    out = {}
    h, w = fixture.target_parsing.shape
    for label, (affine, _) in sorted(fixture.ground_truth.items()):
        grid = affine_grid(affine.inverse(), h, w)
        warped = warp_mask(fixture.condition_parsing.mask(label), grid) >= 0.5
        out[label] = mask_iou(warped, fixture.target_parsing.mask(label))
    return out
