"""Shared fixture and render caches for the test modules."""

import functools

import numpy as np

from sgwarp.pipeline import make_fixture, render_fixture


@functools.lru_cache(maxsize=None)
def cached_fixture(seed: int, motion: float = 1.0):
    return make_fixture(seed, motion=motion)


@functools.lru_cache(maxsize=None)
def cached_render(seed: int, motion: float = 1.0):
    return render_fixture(cached_fixture(seed, motion))


def rotation_error_degrees(a: float, b: float) -> float:
    return abs((a - b + 180.0) % 360.0 - 180.0)


def shift_array(a: np.ndarray, dx: int, dy: int, fill) -> np.ndarray:
    """Move content by (dx, dy) pixels; uncovered pixels take ``fill``."""
    out = np.empty_like(a)
    out[...] = fill
    h, w = a.shape[:2]
    ys, yd = (slice(0, h - dy), slice(dy, h)) if dy >= 0 else (slice(-dy, h), slice(0, h + dy))
    xs, xd = (slice(0, w - dx), slice(dx, w)) if dx >= 0 else (slice(-dx, w), slice(0, w + dx))
    out[yd, xd] = a[ys, xs]
    return out


# pass/fail lines of the acceptance criteria, printed at the end of a pytest run
ACCEPTANCE_LINES = []
