"""Novel-view rendering of Gaussian-splat models with multi-view detection
ensembling, camera-array generation and a detection/image-quality evaluation
stack."""

from .detections import BBox, BODY_CLASS, CLASS_NAMES, Detection, ViewDetections, iou
from .ensemble import (DetectionGroup, EnsembleThresholds, Offset2D,
                       ensemble_view, ensemble_view_detailed, estimate_offset,
                       fuse, group_detections, merge_groups)
from .errors import (ConfigError, DegenerateGeometry, DimensionMismatch,
                     IoError, MismatchedViews, MissingDetections,
                     NumericalError, ParseError, RangeError, SplatViewError,
                     UnsupportedFormat)
from .geometry import (AttentionSolution, Intrinsics, Pose, PoseEntry,
                       gen_circular, gen_spherical, load_pose_file,
                       look_at_pose, save_pose_file, solve_attention_center)
from .image import Image, load_png, save_png
from .metrics import (EvalReport, average_precision, evaluate,
                      match_predictions, psnr, ssim)
from .pipeline import (CameraGenConfig, GridRanges, PipelineConfig,
                       grid_search, run_grid_search, run_pipeline,
                       solve_and_report_cameras)
from .renderer import (Projected2DGaussian, RenderConfig, project_gaussian,
                       render, render_batch)
from .splat_model import (GaussianSplat, SplatCloud, covariance_world,
                          covariances_world, eval_color, eval_colors,
                          load_splat_ply, save_splat_ply)

__version__ = "0.1.0"

__all__ = [
    "AttentionSolution", "BBox", "BODY_CLASS", "CLASS_NAMES", "CameraGenConfig",
    "ConfigError", "DegenerateGeometry", "Detection", "DetectionGroup",
    "DimensionMismatch", "EnsembleThresholds", "EvalReport", "GaussianSplat",
    "GridRanges", "Image", "Intrinsics", "IoError", "MismatchedViews",
    "MissingDetections", "NumericalError", "Offset2D", "ParseError",
    "PipelineConfig", "Pose", "PoseEntry", "Projected2DGaussian", "RangeError",
    "RenderConfig", "SplatCloud", "SplatViewError", "UnsupportedFormat",
    "ViewDetections", "average_precision", "covariance_world",
    "covariances_world", "ensemble_view", "ensemble_view_detailed",
    "estimate_offset", "eval_color", "eval_colors", "evaluate", "fuse",
    "gen_circular", "gen_spherical", "grid_search", "group_detections", "iou",
    "load_png", "load_pose_file", "load_splat_ply", "look_at_pose",
    "match_predictions", "merge_groups", "project_gaussian", "psnr", "render",
    "render_batch", "run_grid_search", "run_pipeline", "save_png",
    "save_pose_file", "save_splat_ply", "solve_and_report_cameras",
    "solve_attention_center", "ssim",
]
