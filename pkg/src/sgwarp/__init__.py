"""Part-wise affine/TPS matching and soft-gated feature warping.

The subpackage :mod:`sgwarp.pipeline` strings these together into a
deterministic two-stage pose-transfer renderer over synthetic fixtures.
"""

from .errors import (
    ImageTooSmallError,
    RankDeficiencyError,
    SgwarpError,
    ShapeMismatchError,
    SingularSystemError,
)
from .geometry import (
    AffineParams,
    MatchResult,
    PartCorrespondence,
    PartTransform,
    TpsParams,
    WarpGrid,
    affine_grid,
    compose_grids,
    estimate_affine,
    estimate_part_transform,
    fit_tps,
    match_parts,
    tps_grid,
    transform_grid,
)
from .losses import (
    LossConfig,
    LossWeights,
    PyramidExtractor,
    adversarial_loss,
    perceptual_loss,
    pixel_loss,
    pyramid_loss,
    total_loss,
)
from .metrics import SsimConfig, mean_iou, ssim
from .tensor_core import (
    JOINT_NAMES,
    LABEL_NAMES,
    ImageTensor,
    PoseKeypoints,
    SegmentationMap,
    decode_parsing,
    encode_parsing,
    encode_pose,
)
from .warp import GateMap, SamplerGradients, bilinear_sample, bilinear_sample_with_grad, gate_from_overlap, warping_block

__version__ = "0.1.0"
