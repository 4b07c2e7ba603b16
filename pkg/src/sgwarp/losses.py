"""Objective terms for the generator and their weighted total.

All norms are per-element means so values do not scale with resolution.
The multi-scale terms share :class:`PyramidExtractor`, whose levels are
repeated 2x average pools of the image (level 0 is the image itself).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ImageTooSmallError, ShapeMismatchError, SgwarpError
from .tensor_core import ImageTensor

DEFAULT_PH_ALPHAS = (1.0, 1.0, 1.0)
DEFAULT_PERCEPTUAL_ALPHAS = (1.0, 1.0, 1.0, 1.0, 1.0)


def _check_weights(values, what):
    for v in values:
        if not math.isfinite(v) or v < 0:
            raise SgwarpError(f"{what} must be non-negative and finite, got {v}")


@dataclass(frozen=True)
class LossWeights:
    adv: float = 1.0
    pixel: float = 10.0
    perceptual: float = 10.0
    ph: float = 10.0

    def __post_init__(self):
        _check_weights((self.adv, self.pixel, self.perceptual, self.ph), "loss weights")

    @classmethod
    def from_dict(cls, d: dict) -> "LossWeights":
        known = {"adv", "pixel", "perceptual", "ph"}
        unknown = set(d) - known
        if unknown:
            raise SgwarpError(f"unknown loss weight keys: {sorted(unknown)}")
        return cls(**{k: float(v) for k, v in d.items()})

    def to_dict(self) -> dict:
        return {"adv": self.adv, "pixel": self.pixel, "perceptual": self.perceptual, "ph": self.ph}


def avg_pool2(a: np.ndarray) -> np.ndarray:
    """2x2 average pool over the first two axes; an odd last row/column is dropped."""
    h, w = (a.shape[0] // 2) * 2, (a.shape[1] // 2) * 2
    a = a[:h, :w]
    return (a[0::2, 0::2] + a[1::2, 0::2] + a[0::2, 1::2] + a[1::2, 1::2]) / 4.0


@dataclass(frozen=True)
class PyramidExtractor:
    alphas: tuple = DEFAULT_PH_ALPHAS

    def __post_init__(self):
        alphas = tuple(float(a) for a in self.alphas)
        if not alphas:
            raise SgwarpError("a pyramid needs at least one level")
        _check_weights(alphas, "pyramid alphas")
        object.__setattr__(self, "alphas", alphas)

    @property
    def levels(self) -> int:
        return len(self.alphas)

    def features(self, image: ImageTensor) -> list[np.ndarray]:
        if self.levels > math.log2(max(min(image.height, image.width), 1)):
            raise ImageTooSmallError(
                f"{self.levels} pyramid levels need images of at least {2 ** self.levels} px per side"
            )
        out = [image.data]
        for _ in range(self.levels - 1):
            out.append(avg_pool2(out[-1]))
        return out


def _mean_abs(a: np.ndarray, b: np.ndarray) -> float:
    return float(np.mean(np.abs(a - b)))


def _same_shape(a: ImageTensor, b: ImageTensor) -> None:
    if a.shape != b.shape:
        raise ShapeMismatchError(f"shapes differ: {a.shape} vs {b.shape}")


def pixel_loss(generated: ImageTensor, target: ImageTensor) -> float:
    _same_shape(generated, target)
    return _mean_abs(generated.data, target.data)


def pyramid_loss(generated: ImageTensor, target: ImageTensor, extractor: PyramidExtractor | None = None) -> float:
    """Weighted sum over levels of the mean L1 distance between pooled images."""
    _same_shape(generated, target)
    extractor = extractor or PyramidExtractor()
    total = 0.0
    for alpha, fg, ft in zip(extractor.alphas, extractor.features(generated), extractor.features(target)):
        total += alpha * _mean_abs(fg, ft)
    return total


def perceptual_loss(generated: ImageTensor, target: ImageTensor, extractor: PyramidExtractor | None = None) -> float:
    """Stand-in for a pretrained-network feature distance: a deeper pooled pyramid."""
    return pyramid_loss(generated, target, extractor or PyramidExtractor(DEFAULT_PERCEPTUAL_ALPHAS))


def _scores(values, what) -> np.ndarray:
    s = np.asarray(values, dtype=np.float64).ravel()
    if s.size == 0:
        raise SgwarpError(f"{what} scores are empty")
    if not np.all((s > 0) & (s < 1)):
        raise SgwarpError(f"{what} scores must lie strictly inside (0, 1)")
    return s


def adversarial_loss(real_scores, fake_scores, side: str = "generator") -> float:
    """Cross-entropy GAN loss from discriminator probabilities.

    ``side="discriminator"``: ``-mean(log real) - mean(log(1 - fake))``.
    ``side="generator"``: ``-mean(log fake)``; ``real_scores`` may be None.
    """
    if side == "generator":
        return float(-np.mean(np.log(_scores(fake_scores, "fake"))))
    if side == "discriminator":
        real = _scores(real_scores, "real")
        fake = _scores(fake_scores, "fake")
        return float(-np.mean(np.log(real)) - np.mean(np.log1p(-fake)))
    raise SgwarpError(f"side must be 'generator' or 'discriminator', got {side!r}")


def total_loss(adv: float, pixel: float, perceptual: float, ph: float, w: LossWeights | None = None) -> float:
    w = w or LossWeights()
    for v in (adv, pixel, perceptual, ph):
        if not math.isfinite(v):
            raise SgwarpError("loss components must be finite")
    return w.adv * adv + w.pixel * pixel + w.perceptual * perceptual + w.ph * ph


@dataclass(frozen=True)
class LossConfig:
    weights: LossWeights = LossWeights()
    ph: PyramidExtractor = PyramidExtractor(DEFAULT_PH_ALPHAS)
    perceptual: PyramidExtractor = PyramidExtractor(DEFAULT_PERCEPTUAL_ALPHAS)

    @classmethod
    def from_dict(cls, d: dict) -> "LossConfig":
        return cls(
            weights=LossWeights.from_dict(d.get("lambda", {})),
            ph=PyramidExtractor(tuple(d.get("alphas", DEFAULT_PH_ALPHAS))),
            perceptual=PyramidExtractor(tuple(d.get("perceptual_alphas", DEFAULT_PERCEPTUAL_ALPHAS))),
        )

    def to_dict(self) -> dict:
        return {
            "lambda": self.weights.to_dict(),
            "alphas": list(self.ph.alphas),
            "perceptual_alphas": list(self.perceptual.alphas),
        }
