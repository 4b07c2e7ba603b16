"""Command-line front end.

Every subcommand prints one JSON object on stdout. Failures print
``{"error": ..., "message": ...}`` and exit with status 1 (2 for usage
errors).
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from pathlib import Path

from PIL import UnidentifiedImageError

from . import plotting
from .errors import SgwarpError
from .geometry import transform_grid
from .imageio import read_image, read_segmentation, write_image, write_segmentation
from .metrics import mean_iou, ssim
from .pipeline.config import PipelineConfig
from .pipeline.evaluate import EvaluationReport, evaluate, loss_terms, score_fixture
from .pipeline.fixtures import SynthFixture, ground_truth_iou, make_fixture
from .pipeline.raster import rasterize_parsing
from .pipeline.render import estimate_transforms, read_transforms_document, render, transforms_document
from .tensor_core import NUM_LABELS, SegmentationMap, load_pose
from .warp import bilinear_sample


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _config(path) -> PipelineConfig:
    return PipelineConfig.load(path) if path else PipelineConfig()


def _clean(obj):
    # JSON has no NaN; report undefined numbers as null
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    if isinstance(obj, dict):
        return {k: _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    return obj


def _emit(obj) -> None:
    sys.stdout.write(json.dumps(_clean(obj), indent=1) + "\n")


def _write_report(report: EvaluationReport, fixtures, out: Path, figures: bool, panels: bool) -> dict:
    out.mkdir(parents=True, exist_ok=True)
    paths = {"json": out / "report.json", "csv": out / "report.csv"}
    paths["json"].write_text(report.to_json() + "\n")
    paths["csv"].write_text(report.to_csv())
    if figures:
        paths["scores_figure"] = out / "scores.png"
        plotting.save_figure(plotting.scores_figure([s.row() for s in report.scores]), paths["scores_figure"])
    if panels:
        for s, fx in zip(report.scores, fixtures):
            _panel(fx, s.render, out / f"render_{s.seed}.png")
    return {k: str(v) for k, v in paths.items()}


def _panel(fixture: SynthFixture, result, path) -> None:
    fig = plotting.render_panel(
        fixture.condition_image, fixture.target_image, result.image,
        (fixture.condition_parsing, result.parsing, result.warped_parsing), title=f"seed {fixture.seed}",
    )
    plotting.save_figure(fig, path)


# ---------------------------------------------------------------------------
# subcommands


def cmd_fixture(args) -> dict:
    cfg = _config(args.config)
    fx = make_fixture(args.seed, cfg, motion=args.motion)
    fx.save(args.out)
    iou = ground_truth_iou(fx)
    return {
        "out": str(args.out),
        "seed": fx.seed,
        "motion": fx.motion,
        "labels": fx.target_parsing.present_labels(),
        "ground_truth_iou": {str(k): v for k, v in iou.items()},
    }


def cmd_parse(args) -> dict:
    cfg = _config(args.config)
    pose = load_pose(args.pose)
    seg = rasterize_parsing(pose, cfg, args.height, args.width)
    write_segmentation(seg, args.out)
    return {"out": str(args.out), "height": seg.shape[0], "width": seg.shape[1], "labels": seg.present_labels()}


def cmd_estimate(args) -> dict:
    cfg = _config(args.config)
    cond = read_segmentation(args.cond_seg)
    targ = read_segmentation(args.target_seg)
    transforms, omitted = estimate_transforms(cond, targ, cfg)
    doc = transforms_document(transforms, omitted, *cond.shape)
    Path(args.out).write_text(json.dumps(doc, indent=1) + "\n")
    return {
        "out": str(args.out),
        "parts": {str(k): {"rotation_degrees": t.affine.inverse().rotation_degrees, "chamfer_residual": t.residual}
                  for k, t in sorted(transforms.items())},
        "omitted": omitted,
    }


def cmd_warp(args) -> dict:
    cfg = _config(args.config)
    image = read_image(args.image)
    transforms = read_transforms_document(json.loads(Path(args.transforms).read_text()))
    h, w = image.height, image.width
    border = args.border or cfg.border
    if args.cond_seg or args.target_seg:
        if not (args.cond_seg and args.target_seg):
            raise SgwarpError("region-wise warping needs both --cond-seg and --target-seg")
        result = render(image, read_segmentation(args.cond_seg), cfg, target_parsing=read_segmentation(args.target_seg),
                        transforms=transforms)
        out = result.image
        mode = "region-wise"
    else:
        if args.part is None:
            if len(transforms) != 1:
                raise SgwarpError("several parts in the transforms file: pass --part L or --cond-seg/--target-seg")
            label = next(iter(transforms))
        else:
            label = args.part
            if label not in transforms:
                raise SgwarpError(f"part {label} not in the transforms file")
        t = transforms[label]
        out = bilinear_sample(image, transform_grid(t.affine, t.tps, h, w), border)
        mode = f"part {label}"
        if args.grid_out:
            transform_grid(t.affine, t.tps, h, w).save(args.grid_out)
    write_image(out, args.out)
    return {"out": str(args.out), "mode": mode, "height": h, "width": w}


def cmd_render(args) -> dict:
    cfg = _config(args.config)
    if args.gate is not None:
        cfg = cfg.with_gate(args.gate)
    if args.fixture:
        fx = SynthFixture.load(args.fixture)
    else:
        fx = make_fixture(args.seed, cfg, motion=args.motion)
    score = score_fixture(fx, cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_image(score.render.image, out / "rendered.png")
    write_segmentation(score.render.warped_parsing, out / "warped_parsing.png")
    report = EvaluationReport(cfg, (score,))
    (out / "report.json").write_text(report.to_json() + "\n")
    (out / "report.csv").write_text(report.to_csv())
    files = ["rendered.png", "warped_parsing.png", "report.json", "report.csv"]
    if not args.no_figures:
        _panel(fx, score.render, out / "panel.png")
        files.append("panel.png")
    return {
        "out": str(out),
        "files": files,
        "ssim": score.ssim,
        "mean_iou": score.mean_iou,
        "losses": score.losses,
        "omitted": list(score.render.omitted),
    }


def _as_labels(path) -> SegmentationMap | None:
    try:
        return read_segmentation(path)
    except SgwarpError:
        return None


def cmd_metrics(args) -> dict:
    a, b = read_image(args.a), read_image(args.b)
    out = {"ssim": ssim(a, b)}
    seg_a = read_segmentation(args.seg_a) if args.seg_a else _as_labels(args.a)
    seg_b = read_segmentation(args.seg_b) if args.seg_b else _as_labels(args.b)
    if seg_a is not None and seg_b is not None:
        labels = args.labels if args.labels else list(range(1, NUM_LABELS))
        out["mean_iou"] = mean_iou(seg_a, seg_b, labels)
    else:
        out["mean_iou"] = None
    return out


def cmd_losses(args) -> dict:
    cfg = _config(args.config)
    out = loss_terms(read_image(args.generated), read_image(args.target), cfg)
    out["weights"] = cfg.losses.weights.to_dict()
    return out


def _seed_list(text: str) -> list[int]:
    seeds = []
    for chunk in text.split(","):
        lo, _, hi = chunk.partition("-")
        seeds.extend(range(int(lo), int(hi) + 1) if hi else [int(lo)])
    return seeds


def cmd_evaluate(args) -> dict:
    cfg = _config(args.config)
    if args.fixtures:
        fixtures = [SynthFixture.load(d) for d in args.fixtures]
    else:
        fixtures = [make_fixture(s, cfg, motion=args.motion) for s in _seed_list(args.seeds)]
    report = evaluate(fixtures, cfg)
    paths = _write_report(report, fixtures, Path(args.out), not args.no_figures, args.panels)
    return {"files": paths, "aggregate": report.aggregate()}


def cmd_config(args) -> dict:
    cfg = _config(args.config)
    doc = cfg.to_dict()
    if args.out:
        Path(args.out).write_text(json.dumps(doc, indent=1) + "\n")
    return doc


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="sgwarp", description="Part-wise affine + TPS warping with soft gating.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("fixture", help="write a synthetic condition/target fixture")
    s.add_argument("--seed", type=int, required=True)
    s.add_argument("--out", type=Path, required=True)
    s.add_argument("--motion", type=float, default=1.0, help="0 gives target pose == condition pose")
    s.add_argument("--config")
    s.set_defaults(func=cmd_fixture)

    s = sub.add_parser("parse", help="rasterize a pose JSON into a parsing PNG")
    s.add_argument("--pose", required=True)
    s.add_argument("--config")
    s.add_argument("--out", required=True)
    s.add_argument("--height", type=int)
    s.add_argument("--width", type=int)
    s.set_defaults(func=cmd_parse)

    s = sub.add_parser("estimate", help="per-part backward transforms between two parsings")
    s.add_argument("--cond-seg", required=True)
    s.add_argument("--target-seg", required=True)
    s.add_argument("--config")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_estimate)

    s = sub.add_parser("warp", help="warp an image through a transforms JSON")
    s.add_argument("--image", required=True)
    s.add_argument("--transforms", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--part", type=int, help="warp the whole image through this part's transform")
    s.add_argument("--cond-seg", help="with --target-seg: region-wise warp of every part")
    s.add_argument("--target-seg")
    s.add_argument("--border", choices=("zeros", "clamp"))
    s.add_argument("--grid-out", help="also save the sampling grid (SWGRID1 container)")
    s.add_argument("--config")
    s.set_defaults(func=cmd_warp)

    s = sub.add_parser("render", help="render a fixture and write image, report and figure")
    src = s.add_mutually_exclusive_group(required=True)
    src.add_argument("--fixture", help="fixture directory written by 'fixture'")
    src.add_argument("--seed", type=int, help="generate the fixture in memory")
    s.add_argument("--motion", type=float, default=1.0)
    s.add_argument("--config")
    s.add_argument("--gate", type=float, help="constant gate value instead of mask overlap")
    s.add_argument("--out", required=True)
    s.add_argument("--no-figures", action="store_true")
    s.set_defaults(func=cmd_render)

    s = sub.add_parser("metrics", help="SSIM of two images and mean IoU of two parsings")
    s.add_argument("--a", required=True)
    s.add_argument("--b", required=True)
    s.add_argument("--seg-a")
    s.add_argument("--seg-b")
    s.add_argument("--labels", type=int, nargs="+")
    s.set_defaults(func=cmd_metrics)

    s = sub.add_parser("losses", help="objective terms between a generated and a target image")
    s.add_argument("--generated", required=True)
    s.add_argument("--target", required=True)
    s.add_argument("--config")
    s.set_defaults(func=cmd_losses)

    s = sub.add_parser("evaluate", help="score a batch of fixtures; writes JSON, CSV and figures")
    s.add_argument("--seeds", default="0-4", help="e.g. '0-19' or '1,3,5'")
    s.add_argument("--fixtures", nargs="+", help="fixture directories instead of seeds")
    s.add_argument("--motion", type=float, default=1.0)
    s.add_argument("--config")
    s.add_argument("--out", required=True)
    s.add_argument("--no-figures", action="store_true")
    s.add_argument("--panels", action="store_true", help="one render panel per fixture")
    s.set_defaults(func=cmd_evaluate)

    s = sub.add_parser("config", help="print (and optionally write) the effective configuration")
    s.add_argument("--config")
    s.add_argument("--out")
    s.set_defaults(func=cmd_config)
    return p


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        _emit({"error": "usage", "message": str(exc)})
        return 2
    try:
        _emit(args.func(args))
    except (SgwarpError, ValueError, KeyError, OSError, UnidentifiedImageError) as exc:
        _emit({"error": type(exc).__name__, "message": str(exc)})
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
