"""Dense containers and the input encodings for poses and part parsings.

Pixel ``(x, y)`` sits at integer coordinates: ``x`` indexes columns and
``y`` indexes rows, so ``data[y, x]`` is the sample at that pixel.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ShapeMismatchError, SgwarpError

NUM_LABELS = 20
NUM_JOINTS = 18
POSE_RADIUS = 4.0

# OpenPose/COCO-18 order.
JOINT_NAMES = (
    "nose",
    "neck",
    "r_shoulder",
    "r_elbow",
    "r_wrist",
    "l_shoulder",
    "l_elbow",
    "l_wrist",
    "r_hip",
    "r_knee",
    "r_ankle",
    "l_hip",
    "l_knee",
    "l_ankle",
    "r_eye",
    "l_eye",
    "r_ear",
    "l_ear",
)

# LIP label scheme.
LABEL_NAMES = (
    "background",
    "hat",
    "hair",
    "glove",
    "sunglasses",
    "upper_clothes",
    "dress",
    "coat",
    "socks",
    "pants",
    "jumpsuits",
    "scarf",
    "skirt",
    "face",
    "left_arm",
    "right_arm",
    "left_leg",
    "right_leg",
    "left_shoe",
    "right_shoe",
)


def _frozen(array: np.ndarray) -> np.ndarray:
    array = np.ascontiguousarray(array)
    array.setflags(write=False)
    return array


@dataclass(frozen=True, eq=False)
class ImageTensor:
    """An ``H x W x C`` grid of float64 samples, stored row-major as (y, x, c)."""

    data: np.ndarray

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float64)
        if data.ndim == 2:
            data = data[:, :, None]
        if data.ndim != 3:
            raise ShapeMismatchError(f"expected an H x W x C array, got shape {data.shape}")
        if not np.all(np.isfinite(data)):
            raise SgwarpError("ImageTensor samples must be finite")
        if data is self.data and data.flags.writeable:
            data = data.copy()
        object.__setattr__(self, "data", _frozen(data))

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return self.data.shape[2]

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.data.shape

    @classmethod
    def zeros(cls, height: int, width: int, channels: int = 1) -> "ImageTensor":
        return cls(np.zeros((height, width, channels)))

    @classmethod
    def full(cls, height: int, width: int, value) -> "ImageTensor":
        value = np.atleast_1d(np.asarray(value, dtype=np.float64))
        return cls(np.broadcast_to(value, (height, width, value.size)))

    def __eq__(self, other):
        if not isinstance(other, ImageTensor):
            return NotImplemented
        return self.shape == other.shape and np.array_equal(self.data, other.data)

    __hash__ = None


@dataclass(frozen=True, eq=False)
class SegmentationMap:
    """Per-pixel part labels in ``0..19``."""

    labels: np.ndarray

    def __post_init__(self):
        labels = np.asarray(self.labels)
        if labels.ndim != 2:
            raise ShapeMismatchError(f"expected an H x W label grid, got shape {labels.shape}")
        if labels.size and not np.issubdtype(labels.dtype, np.integer):
            if not np.all(labels == np.round(labels)):
                raise SgwarpError("labels must be integers")
        labels = labels.astype(np.int64)
        if labels.size and (labels.min() < 0 or labels.max() >= NUM_LABELS):
            raise SgwarpError(f"labels must lie in 0..{NUM_LABELS - 1}")
        object.__setattr__(self, "labels", _frozen(labels.copy()))

    @property
    def height(self) -> int:
        return self.labels.shape[0]

    @property
    def width(self) -> int:
        return self.labels.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.labels.shape

    def mask(self, label: int) -> np.ndarray:
        return self.labels == label

    def present_labels(self) -> list[int]:
        return [int(v) for v in np.unique(self.labels)]

    def __eq__(self, other):
        if not isinstance(other, SegmentationMap):
            return NotImplemented
        return np.array_equal(self.labels, other.labels)

    __hash__ = None


@dataclass(frozen=True, eq=False)
class PoseKeypoints:
    """Eighteen joints in :data:`JOINT_NAMES` order.

    ``xy`` holds sub-pixel ``(x, y)`` per joint, ``visible`` a flag per joint.
    """

    xy: np.ndarray
    visible: np.ndarray

    def __post_init__(self):
        xy = np.asarray(self.xy, dtype=np.float64)
        visible = np.asarray(self.visible, dtype=bool)
        if xy.ndim != 2 or xy.shape[1] != 2 or xy.shape[0] != NUM_JOINTS:
            raise SgwarpError(f"a pose needs exactly {NUM_JOINTS} joints, got array of shape {xy.shape}")
        if visible.shape != (NUM_JOINTS,):
            raise SgwarpError(f"a pose needs exactly {NUM_JOINTS} visibility flags")
        if not np.all(np.isfinite(xy[visible])):
            raise SgwarpError("visible joints must have finite coordinates")
        xy = np.where(np.isfinite(xy), xy, 0.0)
        object.__setattr__(self, "xy", _frozen(xy))
        object.__setattr__(self, "visible", _frozen(visible.copy()))

    @classmethod
    def from_list(cls, joints) -> "PoseKeypoints":
        """Build from a sequence of ``{"x", "y", "visible"}`` mappings."""
        joints = list(joints)
        if len(joints) != NUM_JOINTS:
            raise SgwarpError(f"a pose needs exactly {NUM_JOINTS} joints, got {len(joints)}")
        xy = [(float(j["x"]), float(j["y"])) for j in joints]
        visible = [bool(j.get("visible", True)) for j in joints]
        return cls(np.array(xy), np.array(visible))

    def to_list(self) -> list[dict]:
        return [
            {"x": float(x), "y": float(y), "visible": bool(v)}
            for (x, y), v in zip(self.xy, self.visible)
        ]

    def translated(self, dx: float, dy: float) -> "PoseKeypoints":
        return PoseKeypoints(self.xy + np.array([dx, dy]), self.visible)

    def in_bounds(self, height: int, width: int) -> bool:
        pts = self.xy[self.visible]
        return bool(np.all((pts >= 0) & (pts <= [width - 1, height - 1])))

    def __eq__(self, other):
        if not isinstance(other, PoseKeypoints):
            return NotImplemented
        return np.array_equal(self.xy, other.xy) and np.array_equal(self.visible, other.visible)

    __hash__ = None


def load_pose(path) -> PoseKeypoints:
    with open(path) as fh:
        return PoseKeypoints.from_list(json.load(fh))


def save_pose(pose: PoseKeypoints, path) -> None:
    Path(path).write_text(json.dumps(pose.to_list(), indent=1))


def encode_pose(pose: PoseKeypoints, height: int, width: int, radius: float = POSE_RADIUS) -> ImageTensor:
    """Rasterize one binary heatmap per joint.

    A pixel is on when its distance to the joint is at most ``radius``;
    invisible joints give an all-zero channel.
    """
    if height <= 0 or width <= 0:
        raise SgwarpError("height and width must be positive")
    if not isinstance(pose, PoseKeypoints):
        pose = PoseKeypoints.from_list(pose)
    ys, xs = np.mgrid[0:height, 0:width].astype(np.float64)
    out = np.zeros((height, width, NUM_JOINTS))
    for k in np.flatnonzero(pose.visible):
        jx, jy = pose.xy[k]
        d2 = (xs - jx) ** 2 + (ys - jy) ** 2
        out[:, :, k] = d2 <= radius * radius
    return ImageTensor(out)


def encode_parsing(seg: SegmentationMap) -> ImageTensor:
    """One-hot encode a parsing into 20 channels."""
    onehot = seg.labels[:, :, None] == np.arange(NUM_LABELS)
    return ImageTensor(onehot.astype(np.float64))


def decode_parsing(t: ImageTensor) -> SegmentationMap:
    """Per-pixel argmax over 20 channels; ties go to the lowest index."""
    if t.channels != NUM_LABELS:
        raise ShapeMismatchError(f"parsing tensors need {NUM_LABELS} channels, got {t.channels}")
    return SegmentationMap(np.argmax(t.data, axis=2))
