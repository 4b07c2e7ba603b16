"""Two-stage renderer: pose -> parsing, then part-wise warping and compositing."""

from .config import DEFAULT_PARTS, PartSpec, PipelineConfig
from .evaluate import EvaluationReport, discriminator_score, evaluate, loss_terms, score_fixture
from .fixtures import SynthFixture, canonical_pose, fixture_from_poses, ground_truth_iou, make_fixture
from .raster import rasterize_parsing, warp_mask
from .render import RenderResult, estimate_transforms, render, render_fixture, warp_parsing
