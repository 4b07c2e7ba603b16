"""Affine and thin-plate-spline transforms, warp grids, and part matching.

Conventions
-----------
* Pixel coordinates: ``(x, y)`` with pixel centres on the integer lattice.
* Normalized coordinates: ``[-1, 1]`` across the image, corners on pixel
  centres, ``x_n = 2 x / (W - 1) - 1``.
* A :class:`WarpGrid` stores, for every output pixel, the *source* location
  to read from (backward warping), so warping is a gather.
* A :class:`TpsParams` models a displacement field in normalized
  coordinates, ``f(p) = p + d(p)`` with
  ``d(p) = c + M p + sum_i w_i U(|p - p_i|^2)`` and ``U(s) = s log s``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
from scipy import linalg
from scipy.optimize import minimize_scalar
from scipy.spatial import cKDTree
from skimage.measure import find_contours

from .errors import RankDeficiencyError, ShapeMismatchError, SingularSystemError, SgwarpError
from .imageio import pack_container, unpack_container
from .tensor_core import SegmentationMap

GRID_MAGIC = b"SWGRID1\n"
DEFAULT_TPS_GRID = (3, 3)
DEFAULT_TPS_LAMBDA = 1e-3
# ridge weight on control-point displacements when fitting landmark residuals
DEFAULT_TPS_SMOOTHING = 1.0
DEFAULT_LANDMARKS = 16


# ---------------------------------------------------------------------------
# Affine
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class AffineParams:
    """``(x, y) -> (a11 x + a12 y + tx, a21 x + a22 y + ty)``."""

    a11: float = 1.0
    a12: float = 0.0
    a21: float = 0.0
    a22: float = 1.0
    tx: float = 0.0
    ty: float = 0.0

    def __post_init__(self):
        for name in ("a11", "a12", "a21", "a22", "tx", "ty"):
            value = float(getattr(self, name))
            if not math.isfinite(value):
                raise SgwarpError(f"affine coefficient {name} is not finite")
            object.__setattr__(self, name, value)

    @classmethod
    def identity(cls) -> "AffineParams":
        return cls()

    @classmethod
    def from_matrix(cls, linear, translation=(0.0, 0.0)) -> "AffineParams":
        m = np.asarray(linear, dtype=np.float64)
        return cls(m[0, 0], m[0, 1], m[1, 0], m[1, 1], translation[0], translation[1])

    @classmethod
    def rotation(cls, degrees: float, center=(0.0, 0.0), translation=(0.0, 0.0)) -> "AffineParams":
        """Rotation about ``center`` followed by a shift."""
        th = math.radians(degrees)
        r = np.array([[math.cos(th), -math.sin(th)], [math.sin(th), math.cos(th)]])
        c = np.asarray(center, dtype=np.float64)
        t = c - r @ c + np.asarray(translation, dtype=np.float64)
        return cls.from_matrix(r, t)

    @property
    def linear(self) -> np.ndarray:
        return np.array([[self.a11, self.a12], [self.a21, self.a22]])

    @property
    def translation(self) -> np.ndarray:
        return np.array([self.tx, self.ty])

    def apply(self, points) -> np.ndarray:
        p = np.asarray(points, dtype=np.float64)
        return p @ self.linear.T + self.translation

    def inverse(self) -> "AffineParams":
        inv = np.linalg.inv(self.linear)
        return AffineParams.from_matrix(inv, -inv @ self.translation)

    def then(self, other: "AffineParams") -> "AffineParams":
        """The map ``p -> other(self(p))``."""
        lin = other.linear @ self.linear
        return AffineParams.from_matrix(lin, other.linear @ self.translation + other.translation)

    @property
    def rotation_degrees(self) -> float:
        """Angle of the rotation closest to the linear part (polar factor)."""
        return math.degrees(math.atan2(self.a21 - self.a12, self.a11 + self.a22))

    def is_identity(self) -> bool:
        return self == AffineParams()

    def to_list(self) -> list[float]:
        return [self.a11, self.a12, self.tx, self.a21, self.a22, self.ty]

    @classmethod
    def from_list(cls, values) -> "AffineParams":
        if len(values) != 6:
            raise SgwarpError("an affine needs 6 coefficients [a11, a12, tx, a21, a22, ty]")
        a11, a12, tx, a21, a22, ty = (float(v) for v in values)
        return cls(a11, a12, a21, a22, tx, ty)


def _as_pairs(source, target):
    if target is None:
        pairs = np.asarray(source, dtype=np.float64)
        if pairs.ndim != 3 or pairs.shape[1:] != (2, 2):
            raise SgwarpError("pairs must have shape (N, 2, 2): (source_xy, target_xy) per row")
        return pairs[:, 0], pairs[:, 1]
    src = np.asarray(source, dtype=np.float64).reshape(-1, 2)
    dst = np.asarray(target, dtype=np.float64).reshape(-1, 2)
    if src.shape != dst.shape:
        raise ShapeMismatchError("source and target point counts differ")
    return src, dst


def _check_spread(points: np.ndarray, what: str) -> None:
    design = np.column_stack([points, np.ones(len(points))])
    s = np.linalg.svd(design - np.r_[points.mean(axis=0), 0.0], compute_uv=False)
    scale = max(1.0, float(np.abs(points).max()))
    if len(points) < 3 or s[1] <= 1e-10 * scale * math.sqrt(len(points)):
        raise RankDeficiencyError(f"{what} are collinear or coincident")


def estimate_affine(source, target=None) -> AffineParams:
    """Least-squares affine taking ``source`` points onto ``target`` points.

    Accepts either two ``(N, 2)`` arrays or a single ``(N, 2, 2)`` array of
    ``(source, target)`` pairs. Needs at least three non-collinear sources.
    """
    src, dst = _as_pairs(source, target)
    if len(src) < 3:
        raise RankDeficiencyError("at least 3 correspondences are needed")
    _check_spread(src, "source points")
    design = np.column_stack([src, np.ones(len(src))])
    coef, _, rank, _ = np.linalg.lstsq(design, dst, rcond=None)
    if rank < 3:
        raise RankDeficiencyError("source points are collinear or coincident")
    # coef rows: x, y, 1; columns: target x, target y
    return AffineParams(coef[0, 0], coef[1, 0], coef[0, 1], coef[1, 1], coef[2, 0], coef[2, 1])


# ---------------------------------------------------------------------------
# Thin-plate spline
# ---------------------------------------------------------------------------


def tps_kernel(sq_dist: np.ndarray) -> np.ndarray:
    """``U(s) = s log s`` on squared distances, with ``U(0) = 0``."""
    sq_dist = np.asarray(sq_dist, dtype=np.float64)
    pos = sq_dist > 0
    return np.where(pos, sq_dist * np.log(np.where(pos, sq_dist, 1.0)), 0.0)


def _sq_dists(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    dx = a[:, 0, None] - b[None, :, 0]
    dy = a[:, 1, None] - b[None, :, 1]
    return dx * dx + dy * dy


def make_control_grid(rows: int, cols: int) -> np.ndarray:
    """Row-major ``rows x cols`` lattice spanning ``[-1, 1]^2``."""
    if rows < 2 or cols < 2:
        raise SgwarpError("a TPS control grid needs at least 2 rows and 2 columns")
    ys, xs = np.meshgrid(np.linspace(-1.0, 1.0, rows), np.linspace(-1.0, 1.0, cols), indexing="ij")
    return np.column_stack([xs.ravel(), ys.ravel()])


def _tps_system(points: np.ndarray, regularization: float) -> np.ndarray:
    n = len(points)
    k = tps_kernel(_sq_dists(points, points)) + regularization * np.eye(n)
    p = np.column_stack([np.ones(n), points])
    return np.block([[k, p], [p.T, np.zeros((3, 3))]])


def _solve_tps(points: np.ndarray, rhs: np.ndarray, regularization: float) -> np.ndarray:
    if len(points) < 3:
        raise SingularSystemError("a TPS needs at least 3 control points")
    if regularization < 0 or not math.isfinite(regularization):
        raise SgwarpError("TPS regularization must be a non-negative finite number")
    d = _sq_dists(points, points)
    np.fill_diagonal(d, np.inf)
    if d.min() == 0.0:
        raise SingularSystemError("coincident TPS control points make the system singular")
    _check_spread(points, "TPS control points")
    system = _tps_system(points, regularization)
    full_rhs = np.zeros((len(points) + 3,) + rhs.shape[1:])
    full_rhs[: len(points)] = rhs
    try:
        sol = linalg.solve(system, full_rhs, assume_a="sym")
    except linalg.LinAlgError as exc:
        raise SingularSystemError(f"TPS system is singular: {exc}") from exc
    if not np.all(np.isfinite(sol)):
        raise SingularSystemError("TPS system is singular")
    return sol


@dataclass(frozen=True, eq=False)
class TpsParams:
    """A fitted thin-plate spline in normalized coordinates.

    ``source_points`` are the control points and ``target_displacements``
    what the fit was asked to move them by. A regular lattice is described
    by ``grid_rows x grid_cols``; scattered fits are stored as an ``N x 1``
    "grid" and keep their explicit ``source_points``.
    """

    grid_rows: int
    grid_cols: int
    source_points: np.ndarray
    target_displacements: np.ndarray
    weights: np.ndarray
    displacement_affine: np.ndarray  # rows: constant, x, y
    regularization: float = 0.0

    @classmethod
    def from_displacements(cls, source_points, displacements, regularization=0.0, grid_shape=None) -> "TpsParams":
        src = np.asarray(source_points, dtype=np.float64).reshape(-1, 2)
        disp = np.asarray(displacements, dtype=np.float64).reshape(-1, 2)
        if src.shape != disp.shape:
            raise ShapeMismatchError("control point and displacement counts differ")
        rows, cols = grid_shape if grid_shape is not None else (len(src), 1)
        if rows * cols != len(src):
            raise SgwarpError("grid shape does not match the number of control points")
        sol = _solve_tps(src, disp, float(regularization))
        n = len(src)
        frozen = []
        for arr in (src, disp, sol[:n], sol[n:]):
            arr = np.array(arr)
            arr.setflags(write=False)
            frozen.append(arr)
        return cls(int(rows), int(cols), *frozen, regularization=float(regularization))

    @classmethod
    def from_grid(cls, rows: int, cols: int, displacements, regularization: float = 0.0) -> "TpsParams":
        return cls.from_displacements(make_control_grid(rows, cols), displacements, regularization, (rows, cols))

    @classmethod
    def identity(cls, rows: int = DEFAULT_TPS_GRID[0], cols: int = DEFAULT_TPS_GRID[1], regularization=0.0) -> "TpsParams":
        return cls.from_grid(rows, cols, np.zeros((rows * cols, 2)), regularization)

    @property
    def is_regular_grid(self) -> bool:
        if self.grid_cols < 2 or self.grid_rows < 2:
            return False
        return np.array_equal(self.source_points, make_control_grid(self.grid_rows, self.grid_cols))

    @property
    def affine_part(self) -> list[float]:
        """Affine term of the full map as ``[a11, a12, tx, a21, a22, ty]``."""
        c, mx, my = self.displacement_affine
        return [1.0 + mx[0], my[0], c[0], mx[1], 1.0 + my[1], c[1]]

    def displacement(self, points) -> np.ndarray:
        p = np.asarray(points, dtype=np.float64).reshape(-1, 2)
        out = np.zeros_like(p)
        if np.any(self.weights):
            out += tps_kernel(_sq_dists(p, self.source_points)) @ self.weights
        if np.any(self.displacement_affine):
            out += np.column_stack([np.ones(len(p)), p]) @ self.displacement_affine
        return out

    def __call__(self, points) -> np.ndarray:
        p = np.asarray(points, dtype=np.float64).reshape(-1, 2)
        return p + self.displacement(p)

    def side_condition_residual(self) -> float:
        """max of |sum w|, |sum w x|, |sum w y| over both output axes."""
        p = np.column_stack([np.ones(len(self.source_points)), self.source_points])
        return float(np.abs(p.T @ self.weights).max())

    def is_identity(self) -> bool:
        return not np.any(self.weights) and not np.any(self.displacement_affine)

    def to_dict(self) -> dict:
        out = {
            "rows": self.grid_rows,
            "cols": self.grid_cols,
            "displacements": self.target_displacements.tolist(),
            "lambda": self.regularization,
        }
        if not self.is_regular_grid:
            out["source_points"] = self.source_points.tolist()
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "TpsParams":
        rows, cols = int(d["rows"]), int(d["cols"])
        reg = float(d.get("lambda", 0.0))
        if "source_points" in d:
            return cls.from_displacements(d["source_points"], d["displacements"], reg, (rows, cols))
        return cls.from_grid(rows, cols, d["displacements"], reg)


def fit_tps(source_points, target_points, regularization: float = 0.0, grid_shape=None) -> TpsParams:
    """Fit a TPS taking ``source_points`` to ``target_points`` (normalized coordinates).

    ``regularization`` is added to the kernel diagonal; at 0 the spline
    interpolates every control point.
    """
    src = np.asarray(source_points, dtype=np.float64).reshape(-1, 2)
    dst = np.asarray(target_points, dtype=np.float64).reshape(-1, 2)
    if src.shape != dst.shape:
        raise ShapeMismatchError("source and target point counts differ")
    return TpsParams.from_displacements(src, dst - src, regularization, grid_shape)


def tps_basis(tps_points: np.ndarray, regularization: float, probes: np.ndarray) -> np.ndarray:
    """Matrix ``B`` with ``displacement(probes) = B @ control_displacements``."""
    n = len(tps_points)
    unit = _solve_tps(tps_points, np.eye(n), regularization)
    feats = np.column_stack([tps_kernel(_sq_dists(probes, tps_points)), np.ones(len(probes)), probes])
    return feats @ unit


# ---------------------------------------------------------------------------
# Warp grids
# ---------------------------------------------------------------------------


def pixel_scale(height: int, width: int) -> np.ndarray:
    """Pixels per normalized unit along x and y."""
    if height < 2 or width < 2:
        raise SgwarpError("normalized coordinates need an image of at least 2 x 2 pixels")
    return np.array([(width - 1) / 2.0, (height - 1) / 2.0])


def to_normalized(points, height: int, width: int) -> np.ndarray:
    s = pixel_scale(height, width)
    return np.asarray(points, dtype=np.float64) / s - 1.0


def from_normalized(points, height: int, width: int) -> np.ndarray:
    s = pixel_scale(height, width)
    return (np.asarray(points, dtype=np.float64) + 1.0) * s


@dataclass(frozen=True, eq=False)
class WarpGrid:
    """Per-output-pixel source coordinates, ``coords[y, x] = (src_x, src_y)``."""

    coords: np.ndarray

    def __post_init__(self):
        c = np.array(self.coords, dtype=np.float64)
        if c.ndim != 3 or c.shape[2] != 2:
            raise ShapeMismatchError(f"grid coords must be H x W x 2, got {c.shape}")
        if not np.all(np.isfinite(c)):
            raise SgwarpError("grid coordinates must be finite")
        c.setflags(write=False)
        object.__setattr__(self, "coords", c)

    @property
    def height(self) -> int:
        return self.coords.shape[0]

    @property
    def width(self) -> int:
        return self.coords.shape[1]

    @classmethod
    def identity(cls, height: int, width: int) -> "WarpGrid":
        ys, xs = np.mgrid[0:height, 0:width].astype(np.float64)
        return cls(np.stack([xs, ys], axis=-1))

    def is_identity(self) -> bool:
        return self == WarpGrid.identity(self.height, self.width)

    def to_bytes(self) -> bytes:
        return pack_container(GRID_MAGIC, (self.height, self.width), self.coords)

    @classmethod
    def from_bytes(cls, blob: bytes) -> "WarpGrid":
        return cls(unpack_container(blob, GRID_MAGIC, trailing=(2,)))

    def save(self, path) -> None:
        with open(path, "wb") as fh:
            fh.write(self.to_bytes())

    @classmethod
    def load(cls, path) -> "WarpGrid":
        with open(path, "rb") as fh:
            return cls.from_bytes(fh.read())

    def __eq__(self, other):
        if not isinstance(other, WarpGrid):
            return NotImplemented
        return np.array_equal(self.coords, other.coords)

    __hash__ = None


def affine_grid(p: AffineParams, height: int, width: int) -> WarpGrid:
    ys, xs = np.mgrid[0:height, 0:width].astype(np.float64)
    gx = p.a11 * xs + p.a12 * ys + p.tx
    gy = p.a21 * xs + p.a22 * ys + p.ty
    return WarpGrid(np.stack([gx, gy], axis=-1))


def tps_grid(p: TpsParams, height: int, width: int) -> WarpGrid:
    """Evaluate ``p`` at every pixel; the displacement is converted back to pixels."""
    ident = WarpGrid.identity(height, width).coords
    if p.is_identity():
        return WarpGrid(ident)
    pts = ident.reshape(-1, 2)
    disp = p.displacement(to_normalized(pts, height, width)) * pixel_scale(height, width)
    return WarpGrid((pts + disp).reshape(height, width, 2))


def _lerp(a, b, t):
    # exact at t = 0 and t = 1, and exact for integer-spaced linear data
    d = b - a
    return np.where(t < 0.5, a + t * d, b - (1.0 - t) * d)


def interpolate_field(field: np.ndarray, points: np.ndarray) -> np.ndarray:
    """Bilinear lookup of an ``H x W x K`` field at ``(..., 2)`` points.

    Outside the lattice the edge cells are extended linearly, so affine
    fields are reproduced everywhere.
    """
    h, w = field.shape[:2]
    x = points[..., 0]
    y = points[..., 1]
    x0 = np.clip(np.floor(x), 0, max(w - 2, 0)).astype(np.int64)
    y0 = np.clip(np.floor(y), 0, max(h - 2, 0)).astype(np.int64)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    tx = (x - x0)[..., None]
    ty = (y - y0)[..., None]
    top = _lerp(field[y0, x0], field[y0, x1], tx)
    bottom = _lerp(field[y1, x0], field[y1, x1], tx)
    return _lerp(top, bottom, ty)


def compose_grids(first: WarpGrid, second: WarpGrid) -> WarpGrid:
    """Grid for ``p -> first(second(p))``.

    With backward grids this warps by ``first`` and then by ``second``;
    for the affine/TPS cascade pass the TPS grid first and the affine grid
    second so the affine is applied to coordinates before the spline.
    """
    if (first.height, first.width) != (second.height, second.width):
        raise ShapeMismatchError("grids to compose must have equal dimensions")
    return WarpGrid(interpolate_field(first.coords, second.coords))


def transform_grid(affine: AffineParams, tps: TpsParams | None, height: int, width: int) -> WarpGrid:
    """Composite grid ``p -> tps(affine(p))`` in pixel coordinates."""
    g = affine_grid(affine, height, width)
    if tps is None or tps.is_identity():
        return g
    return compose_grids(tps_grid(tps, height, width), g)


def transforms_to_dict(affine: AffineParams, tps: TpsParams) -> dict:
    return {"affine": affine.to_list(), "tps": tps.to_dict()}


def transforms_from_dict(d: dict) -> tuple[AffineParams, TpsParams]:
    affine = AffineParams.from_list(d["affine"])
    tps = TpsParams.from_dict(d["tps"]) if d.get("tps") is not None else TpsParams.identity()
    return affine, tps


# ---------------------------------------------------------------------------
# Part matching
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class PartStats:
    area: int
    centroid: np.ndarray
    moments: np.ndarray
    boundary: tuple  # closed polylines, each (M, 2) in (x, y)
    landmarks: np.ndarray


@dataclass(frozen=True, eq=False)
class PartCorrespondence:
    """Statistics of one label in a source and a target parsing.

    ``landmark_pairs[k] = (source_xy, target_xy)``. Boundaries are the
    sub-pixel outlines of the part (lists of closed polylines).
    """

    label: int
    source_centroid: np.ndarray
    target_centroid: np.ndarray
    source_moments: np.ndarray
    target_moments: np.ndarray
    landmark_pairs: np.ndarray
    source_boundary: tuple = ()
    target_boundary: tuple = ()
    source_area: int = 1
    target_area: int = 1
    height: int = 0
    width: int = 0

    def swapped(self) -> "PartCorrespondence":
        return PartCorrespondence(
            label=self.label,
            source_centroid=self.target_centroid,
            target_centroid=self.source_centroid,
            source_moments=self.target_moments,
            target_moments=self.source_moments,
            landmark_pairs=self.landmark_pairs[:, ::-1],
            source_boundary=self.target_boundary,
            target_boundary=self.source_boundary,
            source_area=self.target_area,
            target_area=self.source_area,
            height=self.height,
            width=self.width,
        )


def mask_boundary(mask: np.ndarray) -> list[np.ndarray]:
    """Closed sub-pixel outlines of a binary mask, longest first, as (x, y)."""
    padded = np.pad(mask.astype(np.float64), 1)
    contours = find_contours(padded, 0.5)
    out = [c[:, ::-1] - 1.0 for c in contours if len(c) >= 3]
    out.sort(key=lambda c: (-_polyline_length(c), c[0, 0], c[0, 1]))
    return out


def _polyline_length(c: np.ndarray) -> float:
    return float(np.linalg.norm(np.diff(c, axis=0), axis=1).sum())


def _signed_area(c: np.ndarray) -> float:
    x, y = c[:, 0], c[:, 1]
    return 0.5 * float(np.sum(x[:-1] * y[1:] - x[1:] * y[:-1]))


def sample_landmarks(contour: np.ndarray, centroid, k: int = DEFAULT_LANDMARKS) -> np.ndarray:
    """``k`` points at equal arc-length steps round a closed contour.

    The walk starts where the ray from ``centroid`` along +x leaves the
    shape (outermost crossing) and runs with positive shoelace orientation
    in (x, y) coordinates.
    """
    c = np.asarray(contour, dtype=np.float64)
    if not np.array_equal(c[0], c[-1]):
        c = np.vstack([c, c[:1]])
    if _signed_area(c) < 0:
        c = c[::-1]
    seg = np.diff(c, axis=0)
    seg_len = np.linalg.norm(seg, axis=1)
    cum = np.concatenate([[0.0], np.cumsum(seg_len)])
    total = cum[-1]
    if total == 0:
        return np.repeat(c[:1], k, axis=0)
    cx, cy = float(centroid[0]), float(centroid[1])

    start = None
    best_x = -np.inf
    a, b = c[:-1], c[1:]
    dy = b[:, 1] - a[:, 1]
    with np.errstate(divide="ignore", invalid="ignore"):
        s = (cy - a[:, 1]) / dy
    hit = (dy != 0) & (s >= 0) & (s < 1)
    for i in np.flatnonzero(hit):
        xh = a[i, 0] + s[i] * (b[i, 0] - a[i, 0])
        if xh > cx and xh > best_x:
            best_x = xh
            start = cum[i] + s[i] * seg_len[i]
    if start is None:
        ang = np.abs(np.arctan2(c[:-1, 1] - cy, c[:-1, 0] - cx))
        dist = np.hypot(c[:-1, 0] - cx, c[:-1, 1] - cy)
        i = np.lexsort((-dist, ang))[0]
        start = cum[i]

    pos = np.mod(start + total * np.arange(k) / k, total)
    return np.column_stack([np.interp(pos, cum, c[:, 0]), np.interp(pos, cum, c[:, 1])])


def part_stats(mask: np.ndarray, k: int = DEFAULT_LANDMARKS) -> PartStats:
    """Area, centroid, central second moments and outline of a binary mask.

    Pixels count as unit squares, so each moment diagonal carries an extra
    1/12; a single pixel therefore still has a positive-definite moment.
    """
    ys, xs = np.nonzero(mask)
    n = len(xs)
    if n == 0:
        return PartStats(0, np.zeros(2), np.zeros((2, 2)), (), np.zeros((0, 2)))
    cx = xs.sum() / n
    cy = ys.sum() / n
    dx = xs - cx
    dy = ys - cy
    mxy = float(np.dot(dx, dy) / n)
    moments = np.array([[np.dot(dx, dx) / n + 1 / 12, mxy], [mxy, np.dot(dy, dy) / n + 1 / 12]])
    boundary = tuple(mask_boundary(mask))
    centroid = np.array([cx, cy])
    landmarks = sample_landmarks(boundary[0], centroid, k)
    return PartStats(n, centroid, moments, boundary, landmarks)


class MatchResult(NamedTuple):
    correspondences: list
    omitted: list


def match_parts(condition: SegmentationMap, target: SegmentationMap, landmarks: int = DEFAULT_LANDMARKS,
                include_background: bool = False, labels=None) -> MatchResult:
    """Pair up every part label present in both parsings.

    ``condition`` plays the source role and ``target`` the target role.
    Labels found in only one map go to ``omitted``. Background (label 0)
    is skipped unless ``include_background``.
    """
    if condition.shape != target.shape:
        raise ShapeMismatchError("parsings to match must have equal dimensions")
    src_labels = set(condition.present_labels())
    dst_labels = set(target.present_labels())
    candidates = sorted(src_labels | dst_labels)
    if labels is not None:
        candidates = [l for l in candidates if l in set(labels)]
    if not include_background:
        candidates = [l for l in candidates if l != 0]
    h, w = condition.shape
    corrs, omitted = [], []
    for label in candidates:
        if label not in src_labels or label not in dst_labels:
            omitted.append(label)
            continue
        s = part_stats(condition.mask(label), landmarks)
        t = part_stats(target.mask(label), landmarks)
        corrs.append(
            PartCorrespondence(
                label=label,
                source_centroid=s.centroid,
                target_centroid=t.centroid,
                source_moments=s.moments,
                target_moments=t.moments,
                landmark_pairs=np.stack([s.landmarks, t.landmarks], axis=1),
                source_boundary=s.boundary,
                target_boundary=t.boundary,
                source_area=s.area,
                target_area=t.area,
                height=h,
                width=w,
            )
        )
    return MatchResult(corrs, omitted)


# ---------------------------------------------------------------------------
# Per-part transform estimation
# ---------------------------------------------------------------------------


class PartTransform(NamedTuple):
    affine: AffineParams
    tps: TpsParams
    warning: str | None = None
    residual: float = 0.0


def _spd_sqrt(m: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    vals, vecs = np.linalg.eigh(0.5 * (m + m.T))
    if vals.min() <= 0:
        raise SgwarpError("moment matrix is not positive definite")
    root = np.sqrt(vals)
    return (vecs * root) @ vecs.T, (vecs / root) @ vecs.T


def _rot(theta: float) -> np.ndarray:
    c, s = math.cos(theta), math.sin(theta)
    return np.array([[c, -s], [s, c]])


def _wrap(theta: float) -> float:
    return math.remainder(theta, 2 * math.pi)


def _boundary_points(boundary, fallback: np.ndarray) -> np.ndarray:
    pts = [np.asarray(b, dtype=np.float64) for b in boundary if len(b)]
    return np.vstack(pts) if pts else np.asarray(fallback, dtype=np.float64)


def _boundary_segments(boundary, fallback: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    polylines = [np.asarray(b, dtype=np.float64) for b in boundary if len(b) >= 2]
    if not polylines:
        f = np.asarray(fallback, dtype=np.float64)
        polylines = [np.vstack([f, f[:1]])]
    a = np.vstack([p[:-1] for p in polylines])
    b = np.vstack([p[1:] for p in polylines])
    return a, b


def closest_on_segments(points: np.ndarray, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Nearest point to each of ``points`` on the segment set ``a[i] -> b[i]``."""
    ab = b - a
    den = np.einsum("ij,ij->i", ab, ab)
    den = np.where(den > 0, den, 1.0)
    ap = points[:, None, :] - a[None, :, :]
    t = np.clip(np.einsum("kij,ij->ki", ap, ab) / den, 0.0, 1.0)
    proj = a[None] + t[..., None] * ab[None]
    d2 = np.einsum("kij,kij->ki", points[:, None, :] - proj, points[:, None, :] - proj)
    idx = np.argmin(d2, axis=1)
    return proj[np.arange(len(points)), idx]


class _Chamfer:
    """Symmetric mean closest-point distance between two point sets."""

    def __init__(self, source: np.ndarray, target: np.ndarray):
        self.source = source
        self.target = target
        self.tree = cKDTree(target)

    def __call__(self, mapped: np.ndarray) -> float:
        d1 = self.tree.query(mapped)[0]
        d2 = cKDTree(mapped).query(self.target)[0]
        return 0.5 * (float(d1.mean()) + float(d2.mean()))


def _anti_conformal(m: np.ndarray) -> np.ndarray:
    # the part of a 2 x 2 matrix that is not a rotation-and-scale
    return np.array([m[0, 0] - m[1, 1], m[0, 1] + m[1, 0]]) / 2.0


def _most_conformal_angle(p: np.ndarray, q: np.ndarray, tolerance: float) -> float | None:
    """Angle minimizing the anti-conformal part of ``cos(t) p + sin(t) q``.

    Returns None when that part barely depends on ``t`` (isotropic moments).
    """
    u, v = _anti_conformal(p), _anti_conformal(q)
    form = np.array([[u @ u, u @ v], [u @ v, v @ v]])
    vals, vecs = np.linalg.eigh(form)
    scale = float(np.sum(p * p) + np.sum(q * q))
    if vals[1] - vals[0] <= tolerance * scale:
        return None
    cos_t, sin_t = vecs[:, 0]
    return _wrap(math.atan2(sin_t, cos_t))


def _chamfer_search(residual, steps: int) -> list:
    """Best angle and best roughly-opposite angle of ``residual`` over a full turn."""
    step = 2 * math.pi / steps
    grid = np.array([_wrap(k * step) for k in range(steps)])
    coarse = np.array([residual(t) for t in grid])

    def refine(theta0, r0):
        if r0 == 0.0:
            return theta0, r0
        res = minimize_scalar(residual, bounds=(theta0 - step, theta0 + step), method="bounded",
                              options={"xatol": 1e-10})
        if res.fun < r0:
            return _wrap(float(res.x)), float(res.fun)
        return theta0, r0

    ia = int(np.argmin(coarse))
    opposite = np.abs(np.array([_wrap(t - grid[ia] - math.pi) for t in grid])) <= math.pi / 4
    ib = int(np.flatnonzero(opposite)[np.argmin(coarse[opposite])])
    return [refine(grid[ia], coarse[ia]), refine(grid[ib], coarse[ib])]


def estimate_part_transform(c: PartCorrespondence, tps_grid_shape=DEFAULT_TPS_GRID,
                            regularization: float = DEFAULT_TPS_LAMBDA, tie_tolerance: float = 0.25,
                            coarse_steps: int = 72, isotropy_tolerance: float = 1e-3,
                            smoothing: float = DEFAULT_TPS_SMOOTHING) -> PartTransform:
    """Affine-then-TPS transform taking the source part onto the target part.

    The affine sends centroid to centroid and has linear part
    ``St R(theta) Ss^-1`` with ``S`` the moment square roots, which matches
    second moments for every ``theta``. ``theta`` is the angle at which that
    matrix is closest to a similarity (a rigid motion gives exactly the
    true rotation); this fixes ``theta`` up to ``pi``, and the symmetric
    chamfer distance between the mapped source outline and the target
    outline picks between the two, near-ties going to the smaller rotation.
    When the moments are too isotropic to fix ``theta`` the chamfer distance
    is minimized over all angles instead. A TPS on a lattice spanning the
    target part, ridge-penalized by ``smoothing``, then absorbs the landmark
    residuals left after the affine.
    """
    rows, cols = tps_grid_shape
    ident = PartTransform(AffineParams.identity(), TpsParams.identity(rows, cols, regularization))
    if c.source_area <= 0 or c.target_area <= 0:
        return ident._replace(warning="zero-area part")
    if (np.array_equal(c.source_centroid, c.target_centroid)
            and np.array_equal(c.source_moments, c.target_moments)
            and np.array_equal(c.landmark_pairs[:, 0], c.landmark_pairs[:, 1])):
        return ident

    cs, ct = np.asarray(c.source_centroid, float), np.asarray(c.target_centroid, float)
    try:
        _, ss_inv = _spd_sqrt(np.asarray(c.source_moments, float))
        st, _ = _spd_sqrt(np.asarray(c.target_moments, float))
    except SgwarpError:
        affine = AffineParams(tx=ct[0] - cs[0], ty=ct[1] - cs[1])
        return PartTransform(affine, ident.tps, warning="degenerate moments; translation only")

    src = _boundary_points(c.source_boundary, c.landmark_pairs[:, 0]) - cs
    dst = _boundary_points(c.target_boundary, c.landmark_pairs[:, 1])
    chamfer = _Chamfer(src, dst)

    def linear(theta):
        return st @ _rot(theta) @ ss_inv

    def residual(theta):
        return chamfer(src @ linear(theta).T + ct)

    theta0 = _most_conformal_angle(st @ ss_inv, st @ _rot(math.pi / 2) @ ss_inv, isotropy_tolerance)
    if theta0 is not None:
        cands = [(t, residual(t)) for t in (theta0, _wrap(theta0 + math.pi))]
        if cands[1][1] < cands[0][1]:
            cands.reverse()
    else:
        cands = _chamfer_search(residual, coarse_steps)
    (ta, ra), (tb, rb) = cands
    theta, r = ta, ra
    if rb <= ra + tie_tolerance:
        ang_a = abs(AffineParams.from_matrix(linear(ta)).rotation_degrees)
        ang_b = abs(AffineParams.from_matrix(linear(tb)).rotation_degrees)
        if ang_b < ang_a or (ang_b == ang_a and rb < ra):
            theta, r = tb, rb
    lin = linear(theta)
    affine = AffineParams.from_matrix(lin, ct - lin @ cs)

    tps = _fit_residual_tps(c, affine, rows, cols, regularization, smoothing)
    return PartTransform(affine, tps, residual=r)


def part_control_grid(points: np.ndarray, rows: int, cols: int, height: int, width: int) -> np.ndarray:
    """Control lattice spanning the bounding box of ``points`` (pixels), in normalized coordinates.

    Anchoring the lattice to the part rather than the canvas keeps the fit
    covariant under translation and puts the control points where the part is.
    """
    lo = points.min(axis=0)
    hi = points.max(axis=0)
    pad = np.maximum(0.5 * (1.0 - (hi - lo)), 0.0)  # at least one pixel across
    lo, hi = to_normalized(lo - pad, height, width), to_normalized(hi + pad, height, width)
    unit = (make_control_grid(rows, cols) + 1.0) / 2.0
    return lo + unit * (hi - lo)


def _fit_residual_tps(c: PartCorrespondence, affine: AffineParams, rows: int, cols: int,
                      regularization: float, smoothing: float) -> TpsParams:
    if c.height < 2 or c.width < 2:
        return TpsParams.identity(rows, cols, regularization)
    mapped = affine.apply(c.landmark_pairs[:, 0])
    a, b = _boundary_segments(c.target_boundary, c.landmark_pairs[:, 1])
    resid = closest_on_segments(mapped, a, b) - mapped
    if not np.any(resid):
        return TpsParams.identity(rows, cols, regularization)
    scale = pixel_scale(c.height, c.width)
    probes = to_normalized(mapped, c.height, c.width)
    nodes = part_control_grid(np.vstack([a, b]), rows, cols, c.height, c.width)
    basis = tps_basis(nodes, regularization, probes)
    lhs = basis.T @ basis + max(smoothing, 1e-12) * np.eye(len(nodes))
    disp = np.linalg.solve(lhs, basis.T @ (resid / scale))
    return TpsParams.from_displacements(nodes, disp, regularization, (rows, cols))
