"""End-to-end orchestration: configuration, staged runs, and the grid search.

A run walks five stages: (1) solve the attention center and generate the
per-view camera arrays, (2) render every generated view, (3) ingest the
externally produced render detections, (4) ensemble each original view,
(5) evaluate corrected and original detections against ground truth. Every
stage's inputs and outputs are hashed into a run ledger; a stage whose
recorded hashes still match is skipped on rerun, and all randomness is
seeded from the config, so reruns are byte-identical.

The detector is an external process by contract: stage 3 only reads one
detection text file per rendered view and stops with a resume instruction
when files are missing.
"""

from __future__ import annotations

import hashlib
import itertools
import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass
from pathlib import Path

from .detections import load_view_detections, write_detection_file
from .ensemble import EnsembleThresholds, ensemble_view, ensemble_view_detailed
from .errors import ConfigError, MissingDetections
from .geometry import (PoseEntry, gen_circular, gen_spherical, load_pose_file,
                       save_pose_file, solve_attention_center)
from .metrics import EvalReport, evaluate, write_reports_csv
from .renderer import RenderConfig, render_batch, resolve_thread_count
from .splat_model import load_splat_ply

GENERATION_MODES = ("circular-random", "circular-equidistant",
                    "spherical-random", "spherical-fibonacci")

LEDGER_NAME = "run_ledger.json"


@dataclass(frozen=True)
class CameraGenConfig:
    mode: str = "spherical-fibonacci"
    radius: float = 0.5
    per_view: int = 64
    seed: int = 0

    def __post_init__(self):
        if self.mode not in GENERATION_MODES:
            raise ConfigError(f"camera mode must be one of {GENERATION_MODES}, "
                              f"got {self.mode!r}")
        if self.radius <= 0:
            raise ConfigError("camera radius must be positive")
        if self.per_view < 1:
            raise ConfigError("per_view must be at least 1")


@dataclass(frozen=True)
class GridRanges:
    """Candidate values for the four ensembling thresholds."""

    group_iou: tuple[float, ...] = (0.3, 0.5, 0.7)
    min_group_size: tuple[int, ...] = (8, 16, 32)
    purity_min: tuple[float, ...] = (0.5, 0.7, 0.9)
    merge_iou: tuple[float, ...] = (0.3, 0.5)

    def __post_init__(self):
        for name in ("group_iou", "min_group_size", "purity_min", "merge_iou"):
            if not getattr(self, name):
                raise ConfigError(f"grid for {name} is empty")

    def cells(self) -> list[EnsembleThresholds]:
        return [EnsembleThresholds(*combo) for combo in itertools.product(
            self.group_iou, self.min_group_size, self.purity_min, self.merge_iou)]


@dataclass(frozen=True)
class PipelineConfig:
    splat_file: str
    pose_file: str
    original_detections_dir: str
    render_detections_dir: str
    ground_truth_dir: str
    output_dir: str
    camera: CameraGenConfig = CameraGenConfig()
    render: RenderConfig = RenderConfig()
    thresholds: EnsembleThresholds = EnsembleThresholds()
    grid: GridRanges = GridRanges()
    anchor_conf_min: float = 0.5
    match_iou: float = 0.25
    threads: int | None = None

    @classmethod
    def from_dict(cls, raw: dict) -> "PipelineConfig":
        try:
            kwargs = dict(raw)
            for key, sub in (("camera", CameraGenConfig), ("render", RenderConfig),
                             ("thresholds", EnsembleThresholds), ("grid", GridRanges)):
                if key in kwargs and isinstance(kwargs[key], dict):
                    section = {k: tuple(v) if isinstance(v, list) else v
                               for k, v in kwargs[key].items()}
                    if key == "render" and "background" in section:
                        section["background"] = tuple(section["background"])
                    kwargs[key] = sub(**section)
            return cls(**kwargs)
        except TypeError as e:
            raise ConfigError(f"bad configuration: {e}") from e
        except ValueError as e:
            raise ConfigError(str(e)) from e

    @classmethod
    def from_file(cls, path) -> "PipelineConfig":
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"config file not found: {path}")
        try:
            raw = json.loads(path.read_text())
        except json.JSONDecodeError as e:
            raise ConfigError(f"{path}: invalid JSON: {e.msg} (line {e.lineno})") from e
        return cls.from_dict(raw)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class PipelineResult:
    original_report: EvalReport
    corrected_report: EvalReport
    output_dir: Path


@dataclass(frozen=True)
class GridSearchResult:
    best_thresholds: EnsembleThresholds
    best_map50: float
    table: tuple[dict, ...]


# ---------------------------------------------------------------------------
# run ledger

def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


class RunLedger:
    """Per-stage input/output hashes; lets completed stages be skipped."""

    def __init__(self, output_dir: Path):
        self.path = output_dir / LEDGER_NAME
        self.stages: dict[str, dict] = {}
        if self.path.exists():
            self.stages = json.loads(self.path.read_text())

    def _hashes(self, paths) -> dict[str, str]:
        return {str(p): _sha256(Path(p)) for p in sorted(str(x) for x in paths)}

    def up_to_date(self, stage: str, inputs, outputs, params: dict) -> bool:
        rec = self.stages.get(stage)
        if rec is None:
            return False
        if any(not Path(p).exists() for p in list(inputs) + list(outputs)):
            return False
        return (rec.get("params") == json.loads(json.dumps(params))
                and rec.get("inputs") == self._hashes(inputs)
                and rec.get("outputs") == self._hashes(outputs))

    def record(self, stage: str, inputs, outputs, params: dict) -> None:
        self.stages[stage] = {"params": params,
                              "inputs": self._hashes(inputs),
                              "outputs": self._hashes(outputs)}
        self.path.write_text(json.dumps(self.stages, indent=2, sort_keys=True) + "\n")


# ---------------------------------------------------------------------------
# stages

def generate_camera_array(entries: list[PoseEntry], camera: CameraGenConfig,
                          center) -> tuple[list[PoseEntry], dict[str, list[str]]]:
    """The per-original-view pose arrays plus the parent -> children map."""
    kind, variant = camera.mode.split("-")
    generated: list[PoseEntry] = []
    mapping: dict[str, list[str]] = {}
    for i, entry in enumerate(entries):
        gen = gen_circular if kind == "circular" else gen_spherical
        mode = variant if variant != "random" else "random"
        poses = gen(entry.pose, center, camera.radius, camera.per_view,
                    mode=mode, seed=camera.seed + i)
        ids = []
        for j, pose in enumerate(poses):
            gid = f"{entry.id}_g{j:03d}"
            generated.append(PoseEntry(id=gid, pose=pose, intrinsics=entry.intrinsics))
            ids.append(gid)
        mapping[entry.id] = ids
    return generated, mapping


def solve_and_report_cameras(pose_file, camera: CameraGenConfig, out_dir) -> dict:
    """Solve the attention center, generate the camera arrays, write reports.

    Writes attention_center.json, generated_poses.json, generation_map.json
    and a plottable cameras.csv (positions, forwards, and the center).
    Returns a summary dict.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    entries = load_pose_file(pose_file)
    solution = solve_attention_center([e.pose for e in entries])
    generated, mapping = generate_camera_array(entries, camera, solution.center)

    save_pose_file(out_dir / "generated_poses.json", generated)
    (out_dir / "generation_map.json").write_text(
        json.dumps(mapping, indent=2, sort_keys=True) + "\n")
    center_report = {
        "center": [float(v) for v in solution.center],
        "residual_rms": solution.residual_rms,
        "line_params": [float(v) for v in solution.line_params],
        "n_poses": len(entries),
    }
    (out_dir / "attention_center.json").write_text(
        json.dumps(center_report, indent=2, sort_keys=True) + "\n")

    rows = ["kind,id,x,y,z,fx,fy,fz"]
    for e in entries:
        p, f = e.pose.position, e.pose.forward
        rows.append(f"camera,{e.id},{p[0]:.9g},{p[1]:.9g},{p[2]:.9g},"
                    f"{f[0]:.9g},{f[1]:.9g},{f[2]:.9g}")
    c = solution.center
    rows.append(f"center,attention,{c[0]:.9g},{c[1]:.9g},{c[2]:.9g},0,0,0")
    (out_dir / "cameras.csv").write_text("\n".join(rows) + "\n")
    return center_report


def _missing_render_detections(directory, ids) -> list[str]:
    directory = Path(directory)
    return [i for i in ids if not (directory / f"{i}.txt").exists()]


def run_pipeline(config: PipelineConfig) -> PipelineResult:
    """Execute all five stages; see the module docstring for the contract."""
    for name in ("splat_file", "pose_file", "original_detections_dir", "ground_truth_dir"):
        if not Path(getattr(config, name)).exists():
            raise ConfigError(f"{name} does not exist: {getattr(config, name)}")
    out = Path(config.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    ledger = RunLedger(out)

    # stage 1: cameras
    cam_dir = out / "cameras"
    cam_inputs = [config.pose_file]
    cam_outputs = [cam_dir / "generated_poses.json", cam_dir / "generation_map.json",
                   cam_dir / "attention_center.json", cam_dir / "cameras.csv"]
    cam_params = asdict(config.camera)
    if not ledger.up_to_date("cameras", cam_inputs, cam_outputs, cam_params):
        solve_and_report_cameras(config.pose_file, config.camera, cam_dir)
        ledger.record("cameras", cam_inputs, cam_outputs, cam_params)
    generated = load_pose_file(cam_dir / "generated_poses.json")
    mapping = json.loads((cam_dir / "generation_map.json").read_text())

    # stage 2: renders
    render_dir = out / "renders"
    render_inputs = [config.splat_file, cam_dir / "generated_poses.json"]
    render_outputs = [render_dir / "render_manifest.json"] + \
        [render_dir / f"{e.id}.png" for e in generated]
    render_params = asdict(config.render)
    render_params["background"] = list(render_params["background"])
    if not ledger.up_to_date("render", render_inputs, render_outputs, render_params):
        cloud = load_splat_ply(config.splat_file)
        render_batch(cloud, generated, config=config.render, out_dir=render_dir,
                     n_threads=config.threads)
        ledger.record("render", render_inputs, render_outputs, render_params)

    # stage 3: external detections must exist for every generated view
    missing = _missing_render_detections(config.render_detections_dir,
                                         [e.id for e in generated])
    if missing:
        raise MissingDetections(missing, directory=config.render_detections_dir)
    render_views = {v.view_id: v for v in load_view_detections(
        config.render_detections_dir, [e.id for e in generated])}

    # stage 4: ensemble per original view
    original_ids = list(mapping.keys())
    originals = load_view_detections(config.original_detections_dir, original_ids)
    corrected_dir = out / "corrected"
    corrected_dir.mkdir(exist_ok=True)
    corrected = []
    for view in originals:
        outcome = ensemble_view_detailed(
            view, [render_views[i] for i in mapping[view.view_id]],
            config.thresholds, config.anchor_conf_min, config.match_iou)
        corrected.append(outcome.corrected)
        write_detection_file(corrected_dir / f"{view.view_id}.txt", outcome.corrected)
        sidecar = {
            "offset": {"dx": outcome.offset.dx, "dy": outcome.offset.dy},
            "groups": [{"members": len(g.members), "purity": g.purity,
                        "class": g.majority_class,
                        "mean_confidence": g.mean_confidence}
                       for g in outcome.groups],
        }
        (corrected_dir / f"{view.view_id}.groups.json").write_text(
            json.dumps(sidecar, indent=2, sort_keys=True) + "\n")

    # stage 5: evaluate both detection sets against ground truth
    gt = load_view_detections(config.ground_truth_dir, original_ids)
    original_report = evaluate(originals, gt)
    corrected_report = evaluate(corrected, gt)
    original_report.write_json(out / "report_original.json")
    corrected_report.write_json(out / "report_corrected.json")
    write_reports_csv(out / "summary.csv",
                      {"original": original_report, "corrected": corrected_report})
    return PipelineResult(original_report=original_report,
                          corrected_report=corrected_report, output_dir=out)


# ---------------------------------------------------------------------------
# grid search

_GRID_CTX: dict = {}


def _grid_init(originals, renders_by_parent, gt, anchor_conf_min, match_iou):
    _GRID_CTX["args"] = (originals, renders_by_parent, gt, anchor_conf_min, match_iou)


def _grid_cell(thresholds: EnsembleThresholds) -> dict:
    originals, renders_by_parent, gt, anchor_conf_min, match_iou = _GRID_CTX["args"]
    corrected = [ensemble_view(view, renders_by_parent[view.view_id], thresholds,
                               anchor_conf_min, match_iou)
                 for view in originals]
    report = evaluate(corrected, gt, iou_thresholds=(0.5,))
    return {"group_iou": thresholds.group_iou,
            "min_group_size": thresholds.min_group_size,
            "purity_min": thresholds.purity_min,
            "merge_iou": thresholds.merge_iou,
            "map50": report.map50,
            "precision": report.precision,
            "recall": report.recall}


def grid_search(grid: GridRanges, originals, renders_by_parent, gt,
                anchor_conf_min: float = 0.5, match_iou: float = 0.25,
                workers: int | None = None) -> GridSearchResult:
    """Evaluate every grid cell; the argmax is by mAP@0.5 with ties broken
    by higher purity_min, then lower min_group_size, then grid order."""
    cells = grid.cells()
    workers = min(resolve_thread_count(workers), len(cells))
    init_args = (originals, renders_by_parent, gt, anchor_conf_min, match_iou)
    if workers > 1 and len(cells) > 8:
        with ProcessPoolExecutor(max_workers=workers, initializer=_grid_init,
                                 initargs=init_args) as pool:
            table = list(pool.map(_grid_cell, cells, chunksize=4))
    else:
        _grid_init(*init_args)
        table = [_grid_cell(c) for c in cells]

    best_i = 0
    for i in range(1, len(cells)):
        a, b = table[i], table[best_i]
        key_a = (a["map50"], a["purity_min"], -a["min_group_size"])
        key_b = (b["map50"], b["purity_min"], -b["min_group_size"])
        if key_a > key_b:
            best_i = i
    return GridSearchResult(best_thresholds=cells[best_i],
                            best_map50=table[best_i]["map50"],
                            table=tuple(table))


def run_grid_search(config: PipelineConfig) -> GridSearchResult:
    """Grid search over already-ingested detections, writing the full table."""
    out = Path(config.output_dir)
    cam_dir = out / "cameras"
    if not (cam_dir / "generation_map.json").exists():
        solve_and_report_cameras(config.pose_file, config.camera, cam_dir)
    mapping = json.loads((cam_dir / "generation_map.json").read_text())
    gen_ids = [i for ids in mapping.values() for i in ids]

    missing = _missing_render_detections(config.render_detections_dir, gen_ids)
    if missing:
        raise MissingDetections(missing, directory=config.render_detections_dir)
    render_views = {v.view_id: v for v in load_view_detections(
        config.render_detections_dir, gen_ids)}
    renders_by_parent = {parent: [render_views[i] for i in ids]
                         for parent, ids in mapping.items()}
    originals = load_view_detections(config.original_detections_dir, list(mapping.keys()))
    gt = load_view_detections(config.ground_truth_dir, list(mapping.keys()))

    result = grid_search(config.grid, originals, renders_by_parent, gt,
                         config.anchor_conf_min, config.match_iou,
                         workers=config.threads)
    out.mkdir(parents=True, exist_ok=True)
    payload = {
        "best": {"group_iou": result.best_thresholds.group_iou,
                 "min_group_size": result.best_thresholds.min_group_size,
                 "purity_min": result.best_thresholds.purity_min,
                 "merge_iou": result.best_thresholds.merge_iou,
                 "map50": result.best_map50},
        "table": list(result.table),
    }
    (out / "grid_search.json").write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
    rows = ["group_iou,min_group_size,purity_min,merge_iou,map50,precision,recall"]
    for row in result.table:
        rows.append(f"{row['group_iou']},{row['min_group_size']},{row['purity_min']},"
                    f"{row['merge_iou']},{row['map50']:.6f},{row['precision']:.6f},"
                    f"{row['recall']:.6f}")
    (out / "grid_search.csv").write_text("\n".join(rows) + "\n")
    return result
