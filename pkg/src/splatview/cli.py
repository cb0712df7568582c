"""Command-line entry points.

Subcommands: cameras, render, ensemble, eval, gridsearch, run, metrics-image.
Exit codes: 0 success, 2 configuration error, 3 missing inputs, 4 numerical
or geometric failure. The worker count can be forced with the
SPLATVIEW_THREADS environment variable.

`run` and `gridsearch` read one JSON config file; any config key can be
overridden on the command line with --set dotted.key=value.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .detections import load_view_detections, write_detection_file
from .ensemble import EnsembleThresholds, ensemble_view
from .errors import (ConfigError, DegenerateGeometry, MissingDetections,
                     NumericalError, ParseError, RangeError, SplatViewError)
from .geometry import load_pose_file
from .image import load_png
from .metrics import evaluate, psnr, ssim
from .pipeline import (CameraGenConfig, PipelineConfig, run_grid_search,
                       run_pipeline, solve_and_report_cameras)
from .renderer import RenderConfig, render_batch
from .splat_model import load_splat_ply


def _set_nested(raw: dict, dotted: str, value: str) -> None:
    keys = dotted.split(".")
    node = raw
    for k in keys[:-1]:
        node = node.setdefault(k, {})
        if not isinstance(node, dict):
            raise ConfigError(f"--set {dotted}: {k} is not a section")
    try:
        node[keys[-1]] = json.loads(value)
    except json.JSONDecodeError:
        node[keys[-1]] = value  # bare strings are fine unquoted


def _load_config(args) -> PipelineConfig:
    path = Path(args.config)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    raw = json.loads(path.read_text())
    for item in args.set or []:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        key, value = item.split("=", 1)
        _set_nested(raw, key, value)
    if args.output_dir:
        raw["output_dir"] = args.output_dir
    if args.threads:
        raw["threads"] = args.threads
    return PipelineConfig.from_dict(raw)


def _cmd_cameras(args) -> int:
    camera = CameraGenConfig(mode=args.mode, radius=args.radius,
                             per_view=args.per_view, seed=args.seed)
    report = solve_and_report_cameras(args.poses, camera, args.out)
    print(f"attention center: {report['center']} "
          f"(residual rms {report['residual_rms']:.3e})")
    print(f"wrote {args.out}/generated_poses.json")
    return 0


def _cmd_render(args) -> int:
    cloud = load_splat_ply(args.splat)
    entries = load_pose_file(args.poses)
    config = RenderConfig(background=tuple(args.background), near=args.near,
                          termination=args.termination, tile_size=args.tile_size)
    manifest = render_batch(cloud, entries, config=config, out_dir=args.out,
                            n_threads=args.threads)
    print(f"rendered {len(manifest['views'])} views into {args.out}")
    return 0


def _cmd_ensemble(args) -> int:
    mapping = json.loads(Path(args.generation_map).read_text())
    thresholds = EnsembleThresholds(group_iou=args.group_iou,
                                    min_group_size=args.min_group_size,
                                    purity_min=args.purity_min,
                                    merge_iou=args.merge_iou)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    gen_ids = [i for ids in mapping.values() for i in ids]
    missing = [i for i in gen_ids if not (Path(args.render_dir) / f"{i}.txt").exists()]
    if missing:
        raise MissingDetections(missing, directory=args.render_dir)
    render_views = {v.view_id: v for v in
                    load_view_detections(args.render_dir, gen_ids)}
    originals = load_view_detections(args.original_dir, list(mapping.keys()))
    for view in originals:
        corrected = ensemble_view(view, [render_views[i] for i in mapping[view.view_id]],
                                  thresholds, args.anchor_conf_min, args.match_iou)
        write_detection_file(out / f"{view.view_id}.txt", corrected)
    print(f"ensembled {len(originals)} views into {out}")
    return 0


def _cmd_eval(args) -> int:
    gt_ids = sorted(p.stem for p in Path(args.gt_dir).glob("*.txt"))
    preds = load_view_detections(args.pred_dir, gt_ids)
    gt = load_view_detections(args.gt_dir, gt_ids)
    report = evaluate(preds, gt)
    report.write_json(args.out)
    print(f"mAP@0.5 {report.map50:.4f}  mAP@0.5:0.95 {report.map50_95:.4f}  "
          f"P {report.precision:.4f}  R {report.recall:.4f}")
    return 0


def _cmd_gridsearch(args) -> int:
    result = run_grid_search(_load_config(args))
    t = result.best_thresholds
    print(f"best mAP@0.5 {result.best_map50:.4f} at group_iou={t.group_iou} "
          f"min_group_size={t.min_group_size} purity_min={t.purity_min} "
          f"merge_iou={t.merge_iou}")
    return 0


def _cmd_run(args) -> int:
    result = run_pipeline(_load_config(args))
    print(f"original  mAP@0.5 {result.original_report.map50:.4f}")
    print(f"corrected mAP@0.5 {result.corrected_report.map50:.4f}")
    print(f"artifacts in {result.output_dir}")
    return 0


def _cmd_metrics_image(args) -> int:
    a, b = load_png(args.image_a), load_png(args.image_b)
    print(f"SSIM {ssim(a, b):.6f}")
    print(f"PSNR {psnr(a, b):.4f} dB")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="splatview",
        description="Splat-model novel-view rendering, detection ensembling "
                    "and evaluation")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("cameras", help="solve the attention center and generate pose arrays")
    p.add_argument("--poses", required=True, help="pose file (JSON)")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--mode", default="spherical-fibonacci",
                   choices=["circular-random", "circular-equidistant",
                            "spherical-random", "spherical-fibonacci"])
    p.add_argument("--radius", type=float, default=0.5)
    p.add_argument("--per-view", type=int, default=64, dest="per_view")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_cameras)

    p = sub.add_parser("render", help="render a pose file against a splat cloud")
    p.add_argument("--splat", required=True, help="binary PLY splat file")
    p.add_argument("--poses", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--background", type=float, nargs=3, default=[0.0, 0.0, 0.0])
    p.add_argument("--near", type=float, default=0.01)
    p.add_argument("--termination", type=float, default=1e-4)
    p.add_argument("--tile-size", type=int, default=16, dest="tile_size")
    p.add_argument("--threads", type=int, default=None)
    p.set_defaults(func=_cmd_render)

    p = sub.add_parser("ensemble", help="fuse render detections into original views")
    p.add_argument("--original-dir", required=True, dest="original_dir")
    p.add_argument("--render-dir", required=True, dest="render_dir")
    p.add_argument("--generation-map", required=True, dest="generation_map",
                   help="JSON mapping original view id to generated view ids")
    p.add_argument("--out", required=True)
    p.add_argument("--group-iou", type=float, default=0.5, dest="group_iou")
    p.add_argument("--min-group-size", type=int, default=8, dest="min_group_size")
    p.add_argument("--purity-min", type=float, default=0.7, dest="purity_min")
    p.add_argument("--merge-iou", type=float, default=0.5, dest="merge_iou")
    p.add_argument("--anchor-conf-min", type=float, default=0.5, dest="anchor_conf_min")
    p.add_argument("--match-iou", type=float, default=0.25, dest="match_iou")
    p.set_defaults(func=_cmd_ensemble)

    p = sub.add_parser("eval", help="evaluate detections against ground truth")
    p.add_argument("--pred-dir", required=True, dest="pred_dir")
    p.add_argument("--gt-dir", required=True, dest="gt_dir")
    p.add_argument("--out", default="eval_report.json")
    p.set_defaults(func=_cmd_eval)

    for name, func, help_text in (
            ("gridsearch", _cmd_gridsearch, "grid search the ensembling thresholds"),
            ("run", _cmd_run, "run all pipeline stages")):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", required=True, help="pipeline config (JSON)")
        p.add_argument("--set", action="append", metavar="KEY=VALUE",
                       help="override any config key, e.g. --set camera.radius=0.1")
        p.add_argument("--output-dir", default=None, dest="output_dir")
        p.add_argument("--threads", type=int, default=None)
        p.set_defaults(func=func)

    p = sub.add_parser("metrics-image", help="SSIM and PSNR between two PNGs")
    p.add_argument("image_a")
    p.add_argument("image_b")
    p.set_defaults(func=_cmd_metrics_image)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except (MissingDetections, FileNotFoundError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 3
    except (NumericalError, DegenerateGeometry) as e:
        print(f"error: {e}", file=sys.stderr)
        return 4
    except (ParseError, RangeError, SplatViewError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
