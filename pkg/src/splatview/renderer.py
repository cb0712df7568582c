"""Project 3D Gaussians to screen space and composite them into images.

Projection follows the EWA recipe: the world covariance is pushed through the
world-to-camera rotation and the local pinhole Jacobian, a small constant is
added to the projected covariance diagonal as a low-pass floor, and visible
splats are composited front to back in a single global depth order. Pixel
(row, col) is sampled at continuous coordinate (x=col, y=row).
"""

from __future__ import annotations

import json
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ._kernels import build_tile_lists, composite_tiles
from .errors import IoError, NumericalError
from .geometry import Intrinsics, Pose, PoseEntry
from .image import Image, save_png
from .splat_model import GaussianSplat, SplatCloud, covariance_world, covariances_world, \
    eval_color, eval_colors

# low-pass floor added to both diagonal entries of the projected covariance,
# in px^2; standard EWA anti-aliasing value
COV2D_FLOOR = 0.3

THREADS_ENV_VAR = "SPLATVIEW_THREADS"

RENDER_COLOR_SPACE = "linear-no-gamma"

MANIFEST_NAME = "render_manifest.json"


def resolve_thread_count(requested: int | None = None) -> int:
    """Worker count: explicit argument, else SPLATVIEW_THREADS, else all cores."""
    if requested is not None:
        return max(1, int(requested))
    env = os.environ.get(THREADS_ENV_VAR)
    if env:
        return max(1, int(env))
    return os.cpu_count() or 1


@dataclass(frozen=True)
class RenderConfig:
    background: tuple[float, float, float] = (0.0, 0.0, 0.0)
    near: float = 0.01
    termination: float = 1e-4
    tile_size: int = 16

    def __post_init__(self):
        if self.near <= 0:
            raise ValueError("near plane must be positive")
        if not 0 < self.termination < 1:
            raise ValueError("termination threshold must be in (0, 1)")
        if self.tile_size < 1:
            raise ValueError("tile size must be at least 1")
        if any(not 0.0 <= c <= 1.0 for c in self.background):
            raise ValueError("background channels must be in [0, 1]")


@dataclass(frozen=True)
class Projected2DGaussian:
    """A splat after projection: screen mean/covariance plus shading inputs."""

    mean2d: np.ndarray   # (2,) pixels
    cov2d: np.ndarray    # (2, 2) px^2, floor included
    depth: float         # camera-space z
    color: np.ndarray    # (3,) rgb in [0, 1]
    alpha: float


def _sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def _cov2d_radii(cov: np.ndarray) -> np.ndarray:
    """3-sigma radius per splat from the larger cov2d eigenvalue.

    cov is (n, 3) packed (xx, xy, yy).
    """
    mid = 0.5 * (cov[:, 0] + cov[:, 2])
    det = cov[:, 0] * cov[:, 2] - cov[:, 1] ** 2
    lam_max = mid + np.sqrt(np.maximum(mid * mid - det, 0.0))
    return 3.0 * np.sqrt(lam_max)


def _project_arrays(cloud: SplatCloud, pose: Pose, intr: Intrinsics,
                    near: float):
    """Vectorized projection of a whole cloud.

    Returns (means2d, cov (n,3) floor included, depths, colors, alphas) for
    the splats that survive near-plane and viewport culling, in input order.
    """
    rot_w2c = pose.matrix[:3, :3].T
    cam = (cloud.means - pose.position) @ rot_w2c.T
    z = cam[:, 2]
    front = z > near

    cam = cam[front]
    z = z[front]
    u = intr.fx * cam[:, 0] / z + intr.cx
    v = intr.fy * cam[:, 1] / z + intr.cy

    # J rows: d(fx x/z)/d(x,y,z), d(fy y/z)/d(x,y,z); M = J @ W
    jw = np.zeros((z.shape[0], 2, 3))
    jw[:, 0, 0] = intr.fx / z
    jw[:, 0, 2] = -intr.fx * cam[:, 0] / (z * z)
    jw[:, 1, 1] = intr.fy / z
    jw[:, 1, 2] = -intr.fy * cam[:, 1] / (z * z)
    jw = jw @ rot_w2c

    sigma = covariances_world(cloud)[front]
    cov_full = jw @ sigma @ np.swapaxes(jw, 1, 2)
    cov = np.stack([cov_full[:, 0, 0] + COV2D_FLOOR,
                    cov_full[:, 0, 1],
                    cov_full[:, 1, 1] + COV2D_FLOOR], axis=1)

    det = cov[:, 0] * cov[:, 2] - cov[:, 1] ** 2
    if cov.size and (not np.all(np.isfinite(cov)) or np.any(det <= 0.0)):
        raise NumericalError("projected covariance is singular after the low-pass floor")

    radius = _cov2d_radii(cov)
    visible = ((u + radius >= 0.0) & (u - radius <= intr.width - 1)
               & (v + radius >= 0.0) & (v - radius <= intr.height - 1))

    colors = eval_colors(cloud, pose.position)[front][visible]
    alphas = cloud.alphas()[front][visible]
    means2d = np.stack([u, v], axis=1)[visible]
    return means2d, cov[visible], z[visible], colors, alphas


def project_gaussian(splat: GaussianSplat, pose: Pose, intr: Intrinsics,
                     near: float = 0.01) -> Projected2DGaussian | None:
    """Project one splat; returns None when it is culled."""
    rot_w2c = pose.matrix[:3, :3].T
    cam = rot_w2c @ (splat.mean - pose.position)
    z = float(cam[2])
    if z <= near:
        return None
    u = intr.fx * cam[0] / z + intr.cx
    v = intr.fy * cam[1] / z + intr.cy

    j = np.array([[intr.fx / z, 0.0, -intr.fx * cam[0] / (z * z)],
                  [0.0, intr.fy / z, -intr.fy * cam[1] / (z * z)]])
    m = j @ rot_w2c
    cov2d = m @ covariance_world(splat) @ m.T + COV2D_FLOOR * np.eye(2)
    det = float(np.linalg.det(cov2d))
    if not np.isfinite(cov2d).all() or det <= 0.0:
        raise NumericalError("projected covariance is singular after the low-pass floor")

    packed = np.array([[cov2d[0, 0], cov2d[0, 1], cov2d[1, 1]]])
    radius = float(_cov2d_radii(packed)[0])
    if (u + radius < 0.0 or u - radius > intr.width - 1
            or v + radius < 0.0 or v - radius > intr.height - 1):
        return None

    degree = 0 if splat.color_rest is None else 3
    view_dir = splat.mean - pose.position
    view_dir = view_dir / np.linalg.norm(view_dir)
    return Projected2DGaussian(
        mean2d=np.array([u, v]), cov2d=cov2d, depth=z,
        color=eval_color(splat, view_dir, degree),
        alpha=float(_sigmoid(splat.opacity_logit)))


def render(cloud: SplatCloud | None, pose: Pose, intr: Intrinsics,
           config: RenderConfig = RenderConfig(), n_threads: int | None = None) -> Image:
    """Rasterize a cloud into an image.

    Visible splats are sorted by ascending camera depth (stable, so equal
    depths keep input order), then composited front to back per pixel; the
    result does not depend on the thread count.
    """
    out = np.empty((intr.height, intr.width, 3))
    if cloud is None or len(cloud) == 0:
        out[:] = np.asarray(config.background)
        return Image(out)

    means2d, cov, depths, colors, alphas = _project_arrays(cloud, pose, intr, config.near)
    if means2d.shape[0] == 0:
        out[:] = np.asarray(config.background)
        return Image(out)

    order = np.argsort(depths, kind="stable")
    means2d = np.ascontiguousarray(means2d[order])
    cov = cov[order]
    colors = np.ascontiguousarray(colors[order])
    alphas = np.ascontiguousarray(alphas[order])

    det = cov[:, 0] * cov[:, 2] - cov[:, 1] ** 2
    conics = np.stack([cov[:, 2] / det, -cov[:, 1] / det, cov[:, 0] / det], axis=1)

    radius = _cov2d_radii(cov)
    rects = np.empty((means2d.shape[0], 4), dtype=np.int64)
    rects[:, 0] = np.clip(np.floor(means2d[:, 0] - radius), 0, intr.width - 1)
    rects[:, 1] = np.clip(np.floor(means2d[:, 1] - radius), 0, intr.height - 1)
    rects[:, 2] = np.clip(np.ceil(means2d[:, 0] + radius), 0, intr.width - 1)
    rects[:, 3] = np.clip(np.ceil(means2d[:, 1] + radius), 0, intr.height - 1)

    starts, items = build_tile_lists(rects, intr.width, intr.height, config.tile_size)
    background = np.asarray(config.background, dtype=np.float64)
    nty = (intr.height + config.tile_size - 1) // config.tile_size
    workers = min(resolve_thread_count(n_threads), nty)

    if workers <= 1:
        composite_tiles(0, nty, intr.width, intr.height, config.tile_size,
                        means2d, conics, colors, alphas, starts, items,
                        background, config.termination, out)
    else:
        bounds = np.linspace(0, nty, workers + 1).astype(np.int64)
        with ThreadPoolExecutor(max_workers=workers) as pool:
            futures = [
                pool.submit(composite_tiles, int(bounds[i]), int(bounds[i + 1]),
                            intr.width, intr.height, config.tile_size,
                            means2d, conics, colors, alphas, starts, items,
                            background, config.termination, out)
                for i in range(workers)
            ]
            for f in futures:
                f.result()
    return Image(out)


def render_batch(cloud: SplatCloud, poses, intr: Intrinsics | None = None,
                 config: RenderConfig = RenderConfig(), out_dir=None,
                 n_threads: int | None = None) -> dict:
    """Render every pose entry to an 8-bit PNG and write a JSON manifest.

    `poses` is a sequence of PoseEntry; `intr` overrides the per-entry
    intrinsics when given. Poses render in parallel but each image only
    depends on its own pose, so output is identical to a sequential run.
    Returns the manifest dict (also written to out_dir/render_manifest.json).
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    ids = [e.id for e in poses]
    if len(set(ids)) != len(ids):
        raise ValueError("pose ids must be unique")

    def one(entry: PoseEntry) -> tuple[str, dict]:
        cam = intr if intr is not None else entry.intrinsics
        img = render(cloud, entry.pose, cam, config, n_threads=1)
        name = f"{entry.id}.png"
        try:
            save_png(out_dir / name, img)
        except OSError as e:
            raise IoError(str(e), item_id=entry.id) from e
        return entry.id, {"file": name, "width": cam.width, "height": cam.height}

    views: dict[str, dict] = {}
    workers = min(resolve_thread_count(n_threads), max(1, len(ids)))
    if workers <= 1:
        results = [one(e) for e in poses]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(one, poses))
    for pose_id, record in results:
        views[pose_id] = record

    manifest = {"color_space": RENDER_COLOR_SPACE, "views": views}
    (out_dir / MANIFEST_NAME).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return manifest
