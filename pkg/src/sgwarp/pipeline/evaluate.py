"""Score rendered fixtures against their target images."""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass

import numpy as np

from ..errors import SgwarpError
from ..losses import adversarial_loss, perceptual_loss, pixel_loss, pyramid_loss, total_loss
from ..metrics import ssim
from ..tensor_core import ImageTensor
from .config import PipelineConfig
from .fixtures import SynthFixture
from .render import RenderResult, render_fixture

LOSS_KEYS = ("adv", "pixel", "perceptual", "ph", "total")
CSV_COLUMNS = ("seed", "motion", "ssim", "mean_iou") + LOSS_KEYS
SCORE_EPS = 1e-6


def discriminator_score(generated: ImageTensor, target: ImageTensor) -> float:
    """Stand-in discriminator: probability "real" from SSIM, kept inside (0, 1)."""
    return float(np.clip((1.0 + ssim(generated, target)) / 2.0, SCORE_EPS, 1.0 - SCORE_EPS))


def loss_terms(generated: ImageTensor, target: ImageTensor, cfg: PipelineConfig | None = None) -> dict:
    """The four objective terms and their weighted total for one image pair."""
    cfg = cfg or PipelineConfig()
    lc = cfg.losses
    terms = {
        "adv": adversarial_loss(None, [discriminator_score(generated, target)], side="generator"),
        "pixel": pixel_loss(generated, target),
        "perceptual": perceptual_loss(generated, target, lc.perceptual),
        "ph": pyramid_loss(generated, target, lc.ph),
    }
    terms["total"] = total_loss(terms["adv"], terms["pixel"], terms["perceptual"], terms["ph"], lc.weights)
    return terms


@dataclass(frozen=True, eq=False)
class FixtureScore:
    seed: int
    motion: float
    ssim: float
    mean_iou: float
    losses: dict
    render: RenderResult

    def row(self) -> dict:
        out = {"seed": self.seed, "motion": self.motion, "ssim": self.ssim, "mean_iou": self.mean_iou}
        out.update({k: self.losses[k] for k in LOSS_KEYS})
        return out

    def to_dict(self) -> dict:
        out = self.row()
        out["losses"] = {k: out.pop(k) for k in LOSS_KEYS}
        out["diagnostics"] = self.render.diagnostics()
        return out


@dataclass(frozen=True, eq=False)
class EvaluationReport:
    config: PipelineConfig
    scores: tuple

    def aggregate(self) -> dict:
        rows = [s.row() for s in self.scores]
        out = {"count": len(rows)}
        for key in ("ssim", "mean_iou") + LOSS_KEYS:
            out[key] = float(np.mean([r[key] for r in rows]))
        return out

    def to_dict(self) -> dict:
        return {
            "config": self.config.to_dict(),
            "fixtures": [s.to_dict() for s in self.scores],
            "aggregate": self.aggregate(),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1)

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.DictWriter(buf, fieldnames=CSV_COLUMNS, lineterminator="\n")
        writer.writeheader()
        for s in self.scores:
            writer.writerow({k: repr(v) if isinstance(v, float) else v for k, v in s.row().items()})
        return buf.getvalue()


def score_fixture(fixture: SynthFixture, cfg: PipelineConfig | None = None) -> FixtureScore:
    cfg = cfg or PipelineConfig()
    result = render_fixture(fixture, cfg)
    return FixtureScore(
        seed=fixture.seed,
        motion=fixture.motion,
        ssim=ssim(result.image, fixture.target_image),
        mean_iou=result.mean_iou,
        losses=loss_terms(result.image, fixture.target_image, cfg),
        render=result,
    )


def evaluate(fixtures, cfg: PipelineConfig | None = None) -> EvaluationReport:
    """Render and score every fixture; the report aggregates by plain means."""
    fixtures = list(fixtures)
    if not fixtures:
        raise SgwarpError("evaluate needs at least one fixture")
    cfg = cfg or PipelineConfig()
    return EvaluationReport(cfg, tuple(score_fixture(f, cfg) for f in fixtures))
