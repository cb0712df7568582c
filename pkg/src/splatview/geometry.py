"""Camera poses, the shared-attention-point solver, and novel-pose generation.

Poses are camera-to-world transforms stored as homogeneous 4x4 matrices whose
columns are the camera's right, up and forward axes plus its position. All
randomness goes through numpy's seeded PCG64 generator so generated pose sets
are reproducible bit for bit.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DegenerateGeometry, ParseError

# fractional rotation per step of the spherical lattice
GOLDEN_RATIO_CONJUGATE = (np.sqrt(5.0) - 1.0) / 2.0

CIRCULAR_MODES = ("equidistant", "random")
SPHERICAL_MODES = ("fibonacci", "random")


@dataclass(frozen=True, eq=False)
class Pose:
    """Camera-to-world transform; columns hold right, up, forward, position."""

    matrix: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=np.float64)
        if m.shape != (4, 4):
            raise ValueError(f"pose matrix must be 4x4, got {m.shape}")
        if not np.array_equal(m[3], (0.0, 0.0, 0.0, 1.0)):
            raise ValueError("pose matrix last row must be (0, 0, 0, 1)")
        m.flags.writeable = False
        object.__setattr__(self, "matrix", m)

    @property
    def right(self) -> np.ndarray:
        return self.matrix[:3, 0]

    @property
    def up(self) -> np.ndarray:
        return self.matrix[:3, 1]

    @property
    def forward(self) -> np.ndarray:
        return self.matrix[:3, 2]

    @property
    def position(self) -> np.ndarray:
        return self.matrix[:3, 3]

    def world_to_camera(self) -> np.ndarray:
        """Inverse transform as a 4x4 matrix; assumes orthonormal axes."""
        r = self.matrix[:3, :3].T
        m = np.eye(4)
        m[:3, :3] = r
        m[:3, 3] = -r @ self.position
        return m


@dataclass(frozen=True)
class Intrinsics:
    """Pinhole camera intrinsics in pixel units."""

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        if self.width < 1 or self.height < 1:
            raise ValueError("image size must be at least 1x1")
        if not (0 <= self.cx <= self.width and 0 <= self.cy <= self.height):
            raise ValueError("principal point must lie within the image bounds")


@dataclass(frozen=True)
class PoseEntry:
    """One camera in a pose file: an id, its pose and its intrinsics."""

    id: str
    pose: Pose
    intrinsics: Intrinsics


@dataclass(frozen=True)
class AttentionSolution:
    """Least-squares nearest point to the cameras' view lines."""

    center: np.ndarray        # (3,)
    line_params: np.ndarray   # (n,) distance along each (unit) forward
    residual_rms: float


def look_at_pose(position, target, up_hint=(0.0, 1.0, 0.0)) -> Pose:
    """Build a pose at `position` whose forward axis points at `target`.

    right = normalize(up_hint x forward), up = forward x right, giving a
    right-handed orthonormal frame.
    """
    position = np.asarray(position, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    up_hint = np.asarray(up_hint, dtype=np.float64)

    view = target - position
    vnorm = np.linalg.norm(view)
    if vnorm < 1e-12:
        raise DegenerateGeometry("look-at target coincides with the camera position")
    forward = view / vnorm

    right = np.cross(up_hint, forward)
    rnorm = np.linalg.norm(right)
    if rnorm < 1e-9 * np.linalg.norm(up_hint):
        raise DegenerateGeometry("up hint is parallel to the view direction")
    right = right / rnorm
    up = np.cross(forward, right)

    m = np.eye(4)
    m[:3, 0] = right
    m[:3, 1] = up
    m[:3, 2] = forward
    m[:3, 3] = position
    return Pose(m)


def solve_attention_center(poses) -> AttentionSolution:
    """Find the point the cameras' forward lines pass closest to.

    Minimizes ||A x - C||^2 over x = (p, a_1..a_n) where each camera
    contributes the block [I3 | -f_i] and C stacks the camera positions,
    i.e. the joint least-squares fit of p ~ c_i + a_i f_i. Forwards are
    normalized first; this leaves the optimal p unchanged and only rescales
    the line parameters.
    """
    n = len(poses)
    if n < 2:
        raise ValueError("need at least two poses to solve an attention center")
    forwards = np.stack([p.forward for p in poses]).astype(np.float64)
    norms = np.linalg.norm(forwards, axis=1)
    if np.any(norms < 1e-12):
        raise DegenerateGeometry("a pose has a zero forward vector")
    forwards = forwards / norms[:, None]

    c = np.concatenate([p.position for p in poses])
    a = np.zeros((3 * n, n + 3))
    for i in range(n):
        a[3 * i:3 * i + 3, :3] = np.eye(3)
        a[3 * i:3 * i + 3, 3 + i] = -forwards[i]

    # cutoff at 1e-10 * s_max: rank drops below n+3 exactly when every view
    # line shares one direction and the center is ambiguous along it
    x, _, rank, _ = np.linalg.lstsq(a, c, rcond=1e-10)
    if rank < n + 3:
        raise DegenerateGeometry(
            "all camera view lines are parallel; the attention center is not unique")
    residual = np.linalg.norm(a @ x - c) / np.sqrt(3 * n)
    return AttentionSolution(center=x[:3], line_params=x[3:], residual_rms=float(residual))


def _plane_basis(v: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Orthonormal basis {u, w} of the plane perpendicular to v.

    Crosses v with the world axis of smallest |component| in v (lowest axis
    index on ties) so the construction is always well conditioned.
    """
    axis = np.zeros(3)
    axis[int(np.argmin(np.abs(v)))] = 1.0
    u = np.cross(v, axis)
    u = u / np.linalg.norm(u)
    w = np.cross(v, u)
    w = w / np.linalg.norm(w)
    return u, w


def gen_circular(pose: Pose, center, radius: float, m: int,
                 mode: str = "equidistant", seed: int = 0) -> list[Pose]:
    """Generate m poses on a circle around `pose`, all looking at `center`.

    The circle of radius `radius` lies in the plane through the pose position
    perpendicular to the direction toward `center`. Angles are equispaced in
    `equidistant` mode and drawn uniformly from [0, 2*pi) in `random` mode.
    """
    if radius <= 0:
        raise ValueError("radius must be positive")
    if m < 1:
        raise ValueError("m must be at least 1")
    if mode not in CIRCULAR_MODES:
        raise ValueError(f"unknown circular mode {mode!r}")
    center = np.asarray(center, dtype=np.float64)
    c = pose.position
    v = center - c
    if np.linalg.norm(v) < 1e-12:
        raise DegenerateGeometry("circle center coincides with the pose position")
    u, w = _plane_basis(v)

    if mode == "equidistant":
        theta = 2.0 * np.pi * np.arange(m) / m
    else:
        theta = np.random.default_rng(seed).uniform(0.0, 2.0 * np.pi, size=m)

    poses = []
    for t in theta:
        pos = c + radius * (np.cos(t) * u + np.sin(t) * w)
        poses.append(look_at_pose(pos, center, up_hint=pose.up))
    return poses


def gen_spherical(pose: Pose, center, radius: float, m: int,
                  mode: str = "fibonacci", seed: int = 0) -> list[Pose]:
    """Generate m poses on a sphere around `pose`, all looking at `center`.

    `fibonacci` places points on the golden-ratio lattice
    phi_j = arccos(1 - 2(j+0.5)/m), theta_j = 2*pi*j*(sqrt(5)-1)/2 for
    semi-uniform coverage; `random` samples uniformly on the sphere.
    """
    if radius <= 0:
        raise ValueError("radius must be positive")
    if m < 1:
        raise ValueError("m must be at least 1")
    if mode not in SPHERICAL_MODES:
        raise ValueError(f"unknown spherical mode {mode!r}")
    center = np.asarray(center, dtype=np.float64)
    c = pose.position

    if mode == "fibonacci":
        j = np.arange(m)
        phi = np.arccos(1.0 - 2.0 * (j + 0.5) / m)
        theta = 2.0 * np.pi * j * GOLDEN_RATIO_CONJUGATE
    else:
        rng = np.random.default_rng(seed)
        phi = np.arccos(rng.uniform(-1.0, 1.0, size=m))
        theta = rng.uniform(0.0, 2.0 * np.pi, size=m)

    offsets = np.stack([np.sin(phi) * np.cos(theta),
                        np.sin(phi) * np.sin(theta),
                        np.cos(phi)], axis=1)
    poses = []
    for d in offsets:
        pos = c + radius * d
        if np.linalg.norm(center - pos) < 1e-12:
            raise DegenerateGeometry(
                "a generated position coincides with the attention center")
        poses.append(look_at_pose(pos, center, up_hint=pose.up))
    return poses


# ---------------------------------------------------------------------------
# Pose list file: JSON array of {id, matrix (16 row-major camera-to-world),
# intrinsics {fx, fy, cx, cy, width, height}}. Shared with the renderer and
# pipeline.

def load_pose_file(path) -> list[PoseEntry]:
    path = Path(path)
    try:
        records = json.loads(path.read_text())
    except json.JSONDecodeError as e:
        raise ParseError(f"invalid JSON: {e.msg}", path=path, line=e.lineno) from e
    if not isinstance(records, list):
        raise ParseError("pose file must contain a JSON array", path=path)

    entries = []
    seen = set()
    for i, rec in enumerate(records):
        try:
            pose_id = rec["id"]
            raw = rec["matrix"]
            intr = rec["intrinsics"]
        except (TypeError, KeyError) as e:
            raise ParseError(f"entry {i} missing field {e}", path=path) from e
        if not isinstance(pose_id, str) or not pose_id:
            raise ParseError(f"entry {i} has an invalid id", path=path)
        if pose_id in seen:
            raise ParseError(f"duplicate pose id {pose_id!r}", path=path)
        seen.add(pose_id)
        if not isinstance(raw, list) or len(raw) != 16:
            raise ParseError(f"entry {pose_id!r}: matrix must have 16 numbers", path=path)
        try:
            pose = Pose(np.asarray(raw, dtype=np.float64).reshape(4, 4))
            intrinsics = Intrinsics(fx=float(intr["fx"]), fy=float(intr["fy"]),
                                    cx=float(intr["cx"]), cy=float(intr["cy"]),
                                    width=int(intr["width"]), height=int(intr["height"]))
        except (ValueError, TypeError, KeyError) as e:
            raise ParseError(f"entry {pose_id!r}: {e}", path=path) from e
        entries.append(PoseEntry(id=pose_id, pose=pose, intrinsics=intrinsics))
    return entries


def save_pose_file(path, entries) -> None:
    records = []
    for e in entries:
        records.append({
            "id": e.id,
            "matrix": [float(v) for v in e.pose.matrix.reshape(-1)],
            "intrinsics": {
                "fx": e.intrinsics.fx, "fy": e.intrinsics.fy,
                "cx": e.intrinsics.cx, "cy": e.intrinsics.cy,
                "width": e.intrinsics.width, "height": e.intrinsics.height,
            },
        })
    Path(path).write_text(json.dumps(records, indent=2) + "\n")
