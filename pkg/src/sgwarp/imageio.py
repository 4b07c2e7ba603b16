"""File I/O: 8-bit PNG images and parsings, binary grid containers."""

from __future__ import annotations

import io
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import SgwarpError
from .tensor_core import ImageTensor, SegmentationMap


def to_uint8(t: ImageTensor) -> np.ndarray:
    return np.clip(np.round(t.data * 255.0), 0, 255).astype(np.uint8)


def png_bytes(array: np.ndarray) -> bytes:
    """Encode a uint8 array (H x W or H x W x 3) as PNG without metadata."""
    if array.ndim == 3 and array.shape[2] == 1:
        array = array[:, :, 0]
    buf = io.BytesIO()
    Image.fromarray(array).save(buf, format="PNG", optimize=False)
    return buf.getvalue()


def write_image(t: ImageTensor, path) -> None:
    if t.channels not in (1, 3):
        raise SgwarpError(f"PNG output needs 1 or 3 channels, got {t.channels}")
    Path(path).write_bytes(png_bytes(to_uint8(t)))


def read_image(path) -> ImageTensor:
    """Load an 8-bit PNG as floats in [0, 1]; gray stays 1 channel, anything else becomes RGB."""
    with Image.open(path) as im:
        if im.mode in ("L", "LA", "I", "I;16", "1"):
            arr = np.asarray(im.convert("L"), dtype=np.float64)
        else:
            arr = np.asarray(im.convert("RGB"), dtype=np.float64)
    return ImageTensor(arr / 255.0)


def write_segmentation(seg: SegmentationMap, path) -> None:
    Path(path).write_bytes(png_bytes(seg.labels.astype(np.uint8)))


def read_segmentation(path) -> SegmentationMap:
    with Image.open(path) as im:
        if im.mode not in ("L", "P", "I"):
            raise SgwarpError(f"{path}: segmentation PNGs must be single-channel, got mode {im.mode}")
        arr = np.asarray(im if im.mode == "P" else im.convert("L"))
    return SegmentationMap(arr.astype(np.int64))


def pack_container(magic: bytes, dims: tuple[int, ...], array: np.ndarray) -> bytes:
    header = magic + (" ".join(str(d) for d in dims) + "\n").encode("ascii")
    return header + np.ascontiguousarray(array, dtype="<f4").tobytes()


def unpack_container(blob: bytes, magic: bytes, trailing: tuple[int, ...] = ()) -> np.ndarray:
    """Inverse of :func:`pack_container`.

    ``trailing`` lists fixed trailing axes (``(2,)`` for grids) that are not
    written in the dimension line.
    """
    if not blob.startswith(magic):
        raise SgwarpError(f"bad container header, expected {magic!r}")
    rest = blob[len(magic):]
    newline = rest.find(b"\n")
    if newline < 0:
        raise SgwarpError("truncated container header")
    dims = tuple(int(v) for v in rest[:newline].decode("ascii").split())
    shape = dims + trailing
    payload = rest[newline + 1:]
    expected = int(np.prod(shape)) * 4
    if len(payload) != expected:
        raise SgwarpError(f"container payload has {len(payload)} bytes, expected {expected}")
    return np.frombuffer(payload, dtype="<f4").reshape(shape).astype(np.float64)
