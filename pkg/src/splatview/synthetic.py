"""Synthetic satellite scene and a scripted stand-in for the external detector.

The scene is a box body with two solar panels and a dish, built both as a
splat cloud (for rendering) and as labelled 3D boxes (for geometric ground
truth). The scripted detector projects those boxes into any camera and emits
detection files, optionally planting class errors, a constant translation
bias and box jitter, so ensemble behaviour can be tested end to end without
a neural detector.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .detections import BBox, Detection, NUM_CLASSES, ViewDetections
from .geometry import Intrinsics, Pose, PoseEntry, look_at_pose
from .splat_model import SH_C0, SplatCloud


@dataclass(frozen=True)
class Component:
    """One labelled part of the satellite as a world-space box."""

    class_id: int
    lo: tuple[float, float, float]
    hi: tuple[float, float, float]


# solar=0 body=1 antenna=2 (thruster unused by this fixture)
SATELLITE_COMPONENTS = (
    Component(class_id=1, lo=(-0.5, -0.5, -0.5), hi=(0.5, 0.5, 0.5)),
    Component(class_id=0, lo=(0.7, -0.1, -0.45), hi=(1.9, 0.1, 0.45)),
    Component(class_id=0, lo=(-1.9, -0.1, -0.45), hi=(-0.7, 0.1, 0.45)),
    Component(class_id=2, lo=(-0.25, -0.25, 0.6), hi=(0.25, 0.25, 1.0)),
)

_COMPONENT_COLORS = {0: (0.15, 0.25, 0.8), 1: (0.75, 0.72, 0.65), 2: (0.85, 0.3, 0.2)}


def build_satellite_cloud(n_splats: int = 500, seed: int = 0) -> SplatCloud:
    """Fill the component boxes with small opaque splats."""
    rng = np.random.default_rng(seed)
    volumes = np.array([np.prod(np.subtract(c.hi, c.lo)) for c in SATELLITE_COMPONENTS])
    counts = np.maximum(1, np.round(n_splats * volumes / volumes.sum()).astype(int))
    counts[0] += n_splats - counts.sum()

    means, colors = [], []
    for comp, count in zip(SATELLITE_COMPONENTS, counts):
        lo, hi = np.array(comp.lo), np.array(comp.hi)
        means.append(rng.uniform(lo, hi, size=(count, 3)))
        colors.append(np.tile(_COMPONENT_COLORS[comp.class_id], (count, 1)))
    means = np.concatenate(means)
    rgb = np.concatenate(colors)

    n = means.shape[0]
    rotations = np.zeros((n, 4))
    rotations[:, 0] = 1.0
    log_scales = np.log(rng.uniform(0.04, 0.1, size=(n, 3)))
    opacity_logits = np.full(n, 4.0)  # alpha ~ 0.982
    color_dc = (rgb - 0.5) / SH_C0
    return SplatCloud(means=means, rotations=rotations, log_scales=log_scales,
                      opacity_logits=opacity_logits, color_dc=color_dc)


def orbit_entries(n_views: int = 12, radius: float = 5.0, seed: int = 0,
                  intrinsics: Intrinsics | None = None) -> list[PoseEntry]:
    """Camera ring around the satellite, forwards aimed near (not exactly at)
    the origin so the view lines are non-intersecting."""
    if intrinsics is None:
        intrinsics = Intrinsics(fx=140.0, fy=140.0, cx=64.0, cy=64.0, width=128, height=128)
    rng = np.random.default_rng(seed)
    entries = []
    for i in range(n_views):
        angle = 2.0 * np.pi * i / n_views
        position = np.array([radius * np.cos(angle), radius * np.sin(angle),
                             0.4 * np.sin(3.0 * angle)])
        target = rng.normal(0.0, 0.05, size=3)
        pose = look_at_pose(position, target, up_hint=(0.0, 0.0, 1.0))
        entries.append(PoseEntry(id=f"view{i:03d}", pose=pose, intrinsics=intrinsics))
    return entries


def project_component_box(comp: Component, pose: Pose, intr: Intrinsics,
                          near: float = 0.01) -> BBox | None:
    """Screen-space bounding box of a component's eight corners, normalized
    and clipped to the unit image; None when behind the camera or off screen."""
    lo, hi = comp.lo, comp.hi
    corners = np.array([[x, y, z] for x in (lo[0], hi[0])
                        for y in (lo[1], hi[1]) for z in (lo[2], hi[2])])
    rot_w2c = pose.matrix[:3, :3].T
    cam = (corners - pose.position) @ rot_w2c.T
    if np.any(cam[:, 2] <= near):
        return None
    u = (intr.fx * cam[:, 0] / cam[:, 2] + intr.cx) / intr.width
    v = (intr.fy * cam[:, 1] / cam[:, 2] + intr.cy) / intr.height
    x1, x2 = max(u.min(), 0.0), min(u.max(), 1.0)
    y1, y2 = max(v.min(), 0.0), min(v.max(), 1.0)
    if x2 - x1 <= 1e-6 or y2 - y1 <= 1e-6:
        return None
    return BBox(cx=(x1 + x2) / 2.0, cy=(y1 + y2) / 2.0, w=x2 - x1, h=y2 - y1)


def ground_truth_view(entry, components=SATELLITE_COMPONENTS) -> ViewDetections:
    """Geometric ground truth for one camera (confidence 1)."""
    dets = []
    for comp in components:
        box = project_component_box(comp, entry.pose, entry.intrinsics)
        if box is not None:
            dets.append(Detection(class_id=comp.class_id, bbox=box, confidence=1.0))
    return ViewDetections(view_id=entry.id, detections=tuple(dets))


@dataclass(frozen=True)
class ScriptedDetector:
    """Deterministic detector stub with plantable flaws.

    class_error_rate flips a detection to a random wrong class; bias shifts
    every box center by a constant; jitter adds uniform noise to centers.
    Confidences are drawn from conf_range. All draws come from one seeded
    generator, consumed in view order.
    """

    seed: int = 0
    class_error_rate: float = 0.0
    bias: tuple[float, float] = (0.0, 0.0)
    jitter: float = 0.0
    conf_range: tuple[float, float] = (0.6, 0.95)

    def detect(self, entries, components=SATELLITE_COMPONENTS) -> list[ViewDetections]:
        rng = np.random.default_rng(self.seed)
        views = []
        for entry in entries:
            dets = []
            for comp in components:
                box = project_component_box(comp, entry.pose, entry.intrinsics)
                if box is None:
                    continue
                class_id = comp.class_id
                if self.class_error_rate > 0 and rng.uniform() < self.class_error_rate:
                    others = [c for c in range(NUM_CLASSES) if c != class_id]
                    class_id = int(rng.choice(others))
                cx = box.cx + self.bias[0]
                cy = box.cy + self.bias[1]
                if self.jitter > 0:
                    cx += rng.uniform(-self.jitter, self.jitter)
                    cy += rng.uniform(-self.jitter, self.jitter)
                conf = float(rng.uniform(*self.conf_range))
                shifted = BBox(cx, cy, box.w, box.h).clipped()
                if shifted is not None:
                    dets.append(Detection(class_id=class_id, bbox=shifted, confidence=conf))
            views.append(ViewDetections(view_id=entry.id, detections=tuple(dets)))
        return views
