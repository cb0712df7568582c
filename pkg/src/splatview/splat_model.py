"""Gaussian-splat cloud model and the binary PLY interchange format.

A cloud stores its fields as column arrays (means, quaternions, log-scales,
opacity logits, color coefficients); `GaussianSplat` is the per-primitive
view over one row. Quaternions are (w, x, y, z) and are normalized on load,
scales are kept in log space, opacity as a logit.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ParseError, UnsupportedFormat

# real spherical-harmonic basis constants, degrees 0..3
SH_C0 = 0.28209479177387814
SH_C1 = 0.4886025119029199
SH_C2 = (1.0925484305920792, -1.0925484305920792, 0.31539156525252005,
         -1.0925484305920792, 0.5462742152960396)
SH_C3 = (-0.5900435899266435, 2.890611442640554, -0.4570457994644658,
         0.3731763325901154, -0.4570457994644658, 1.445305721320277,
         -0.5900435899266435)

REST_COEFFS = 15  # per channel, degrees 1..3


@dataclass(frozen=True)
class GaussianSplat:
    """One Gaussian primitive."""

    mean: np.ndarray           # (3,) scene units
    rotation: np.ndarray       # (4,) unit quaternion, (w, x, y, z)
    log_scale: np.ndarray      # (3,) log scene units per principal axis
    opacity_logit: float
    color_dc: np.ndarray       # (3,) degree-0 coefficients per channel
    color_rest: np.ndarray | None = None  # (15, 3) degree 1..3 coefficients


class SplatCloud:
    """Immutable array-of-columns splat set."""

    def __init__(self, means, rotations, log_scales, opacity_logits,
                 color_dc, color_rest=None, sh_degree: int | None = None):
        self.means = np.ascontiguousarray(means, dtype=np.float64)
        self.rotations = np.ascontiguousarray(rotations, dtype=np.float64)
        self.log_scales = np.ascontiguousarray(log_scales, dtype=np.float64)
        self.opacity_logits = np.ascontiguousarray(opacity_logits, dtype=np.float64)
        self.color_dc = np.ascontiguousarray(color_dc, dtype=np.float64)
        self.color_rest = (None if color_rest is None
                           else np.ascontiguousarray(color_rest, dtype=np.float64))
        n = self.means.shape[0]
        if self.means.shape != (n, 3) or self.rotations.shape != (n, 4) \
                or self.log_scales.shape != (n, 3) or self.color_dc.shape != (n, 3) \
                or self.opacity_logits.shape != (n,):
            raise ValueError("inconsistent cloud array shapes")
        if self.color_rest is not None and self.color_rest.shape != (n, REST_COEFFS, 3):
            raise ValueError("color_rest must have shape (n, 15, 3)")
        if sh_degree is None:
            sh_degree = 3 if self.color_rest is not None else 0
        if (sh_degree == 0) != (self.color_rest is None):
            raise ValueError("sh_degree inconsistent with presence of color_rest")
        if not 0 <= sh_degree <= 3:
            raise ValueError("sh_degree must be in 0..3")
        self.sh_degree = sh_degree
        self._cov_world: np.ndarray | None = None
        self._alphas: np.ndarray | None = None
        self._base_rgb: np.ndarray | None = None

    def __len__(self) -> int:
        return self.means.shape[0]

    # view-independent quantities, computed once per cloud
    def world_covariances(self) -> np.ndarray:
        if self._cov_world is None:
            r = quats_to_rotmats(self.rotations)
            m = r * np.exp(self.log_scales)[:, None, :]
            self._cov_world = m @ np.swapaxes(m, 1, 2)
        return self._cov_world

    def alphas(self) -> np.ndarray:
        if self._alphas is None:
            self._alphas = 1.0 / (1.0 + np.exp(-self.opacity_logits))
        return self._alphas

    def base_rgb(self) -> np.ndarray:
        if self._base_rgb is None:
            self._base_rgb = np.clip(SH_C0 * self.color_dc + 0.5, 0.0, 1.0)
        return self._base_rgb

    def __getitem__(self, i: int) -> GaussianSplat:
        return GaussianSplat(
            mean=self.means[i], rotation=self.rotations[i],
            log_scale=self.log_scales[i], opacity_logit=float(self.opacity_logits[i]),
            color_dc=self.color_dc[i],
            color_rest=None if self.color_rest is None else self.color_rest[i])

    @classmethod
    def from_splats(cls, splats) -> "SplatCloud":
        splats = list(splats)
        if not splats:
            raise ValueError("cannot build an empty cloud from splats")
        rest = None
        if splats[0].color_rest is not None:
            rest = np.stack([s.color_rest for s in splats])
        return cls(np.stack([s.mean for s in splats]),
                   np.stack([s.rotation for s in splats]),
                   np.stack([s.log_scale for s in splats]),
                   np.array([s.opacity_logit for s in splats]),
                   np.stack([s.color_dc for s in splats]),
                   rest)


def quat_to_rotmat(q: np.ndarray) -> np.ndarray:
    """Rotation matrix from a (w, x, y, z) quaternion; normalizes first."""
    w, x, y, z = np.asarray(q, dtype=np.float64) / np.linalg.norm(q)
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ])


def quats_to_rotmats(q: np.ndarray) -> np.ndarray:
    """Vectorized quat_to_rotmat over an (n, 4) array."""
    q = np.asarray(q, dtype=np.float64)
    q = q / np.linalg.norm(q, axis=1, keepdims=True)
    w, x, y, z = q[:, 0], q[:, 1], q[:, 2], q[:, 3]
    m = np.empty((q.shape[0], 3, 3))
    m[:, 0, 0] = 1 - 2 * (y * y + z * z)
    m[:, 0, 1] = 2 * (x * y - w * z)
    m[:, 0, 2] = 2 * (x * z + w * y)
    m[:, 1, 0] = 2 * (x * y + w * z)
    m[:, 1, 1] = 1 - 2 * (x * x + z * z)
    m[:, 1, 2] = 2 * (y * z - w * x)
    m[:, 2, 0] = 2 * (x * z - w * y)
    m[:, 2, 1] = 2 * (y * z + w * x)
    m[:, 2, 2] = 1 - 2 * (x * x + y * y)
    return m


def covariance_world(splat: GaussianSplat) -> np.ndarray:
    """World-space covariance R S S^T R^T of one splat."""
    r = quat_to_rotmat(splat.rotation)
    m = r * np.exp(splat.log_scale)[None, :]  # R @ diag(exp(s))
    return m @ m.T


def covariances_world(cloud: SplatCloud) -> np.ndarray:
    """World-space covariances for every splat, shape (n, 3, 3)."""
    return cloud.world_covariances()


def _sh_basis(view_dir: np.ndarray, degree: int) -> np.ndarray:
    """Real SH basis values for degrees 1..degree, shape (..., n_rest_used).

    view_dir is (..., 3) and unit norm; the degree-0 term is handled by the
    caller via SH_C0.
    """
    x, y, z = view_dir[..., 0], view_dir[..., 1], view_dir[..., 2]
    cols = [-SH_C1 * y, SH_C1 * z, -SH_C1 * x]
    if degree >= 2:
        xx, yy, zz = x * x, y * y, z * z
        cols += [SH_C2[0] * x * y,
                 SH_C2[1] * y * z,
                 SH_C2[2] * (2.0 * zz - xx - yy),
                 SH_C2[3] * x * z,
                 SH_C2[4] * (xx - yy)]
    if degree >= 3:
        xx, yy, zz = x * x, y * y, z * z
        cols += [SH_C3[0] * y * (3.0 * xx - yy),
                 SH_C3[1] * x * y * z,
                 SH_C3[2] * y * (4.0 * zz - xx - yy),
                 SH_C3[3] * z * (2.0 * zz - 3.0 * xx - 3.0 * yy),
                 SH_C3[4] * x * (4.0 * zz - xx - yy),
                 SH_C3[5] * z * (xx - yy),
                 SH_C3[6] * x * (xx - 3.0 * yy)]
    return np.stack(cols, axis=-1)


def eval_color(splat: GaussianSplat, view_dir, sh_degree: int) -> np.ndarray:
    """View-dependent rgb in [0,1]: SH evaluation plus the 0.5 offset."""
    if not 0 <= sh_degree <= 3:
        raise ValueError("sh_degree must be in 0..3")
    rgb = SH_C0 * splat.color_dc + 0.5
    if sh_degree > 0:
        if splat.color_rest is None:
            raise ValueError("splat has no higher-degree color coefficients")
        basis = _sh_basis(np.asarray(view_dir, dtype=np.float64), sh_degree)
        rgb = rgb + basis @ splat.color_rest[:basis.shape[-1]]
    return np.clip(rgb, 0.0, 1.0)


def eval_colors(cloud: SplatCloud, camera_position) -> np.ndarray:
    """Per-splat rgb for a camera at `camera_position`, shape (n, 3)."""
    if cloud.sh_degree == 0:
        return cloud.base_rgb()
    rgb = SH_C0 * cloud.color_dc + 0.5
    dirs = cloud.means - np.asarray(camera_position, dtype=np.float64)
    dirs = dirs / np.linalg.norm(dirs, axis=1, keepdims=True)
    basis = _sh_basis(dirs, cloud.sh_degree)  # (n, k)
    rgb = rgb + np.einsum("nk,nkc->nc", basis, cloud.color_rest[:, :basis.shape[-1]])
    return np.clip(rgb, 0.0, 1.0)


# ---------------------------------------------------------------------------
# Binary little-endian PLY in the layout produced by standard splat trainers:
# element "vertex" with x y z [nx ny nz] f_dc_0..2 [f_rest_0..44] opacity
# scale_0..2 rot_0..3 as float32. f_rest is channel-major (15 per channel).

_PLY_SCALAR_TYPES = {
    "char": "i1", "uchar": "u1", "int8": "i1", "uint8": "u1",
    "short": "i2", "ushort": "u2", "int16": "i2", "uint16": "u2",
    "int": "i4", "uint": "u4", "int32": "i4", "uint32": "u4",
    "float": "f4", "float32": "f4", "double": "f8", "float64": "f8",
}

_REQUIRED = ("x", "y", "z", "f_dc_0", "f_dc_1", "f_dc_2", "opacity",
             "scale_0", "scale_1", "scale_2", "rot_0", "rot_1", "rot_2", "rot_3")


def _parse_ply_header(data: bytes, path) -> tuple[int, int, list[tuple[str, str]]]:
    """Returns (payload offset, vertex count, [(name, numpy dtype)])."""
    end = data.find(b"end_header\n")
    if not data.startswith(b"ply\n") or end < 0:
        raise ParseError("not a PLY file (missing 'ply' magic or 'end_header')",
                         path=path, offset=0)
    header = data[:end].decode("ascii", errors="replace")
    payload_at = end + len(b"end_header\n")

    count = None
    props: list[tuple[str, str]] = []
    offset = 0
    in_vertex = False
    for line in header.split("\n"):
        tokens = line.split()
        if not tokens or tokens[0] == "comment":
            offset += len(line) + 1
            continue
        if tokens[0] == "format":
            if tokens[1] == "ascii":
                raise UnsupportedFormat(f"{path}: ASCII PLY is not supported")
            if tokens[1] != "binary_little_endian":
                raise UnsupportedFormat(f"{path}: only binary little-endian PLY is supported")
        elif tokens[0] == "element":
            if tokens[1] == "vertex":
                in_vertex = True
                try:
                    count = int(tokens[2])
                except (IndexError, ValueError):
                    raise ParseError("bad vertex element line", path=path, offset=offset)
            else:
                in_vertex = False
                if len(tokens) > 2 and tokens[2] != "0":
                    raise UnsupportedFormat(
                        f"{path}: unsupported non-empty element {tokens[1]!r}")
        elif tokens[0] == "property" and in_vertex:
            if tokens[1] == "list":
                raise UnsupportedFormat(f"{path}: list properties are not supported")
            if len(tokens) != 3 or tokens[1] not in _PLY_SCALAR_TYPES:
                raise ParseError(f"bad property line {line!r}", path=path, offset=offset)
            props.append((tokens[2], "<" + _PLY_SCALAR_TYPES[tokens[1]]))
        offset += len(line) + 1

    if count is None:
        raise ParseError("header has no vertex element", path=path, offset=0)
    return payload_at, count, props


def load_splat_ply(path) -> SplatCloud:
    """Load a splat cloud from a binary little-endian PLY file."""
    path = Path(path)
    data = path.read_bytes()
    payload_at, count, props = _parse_ply_header(data, path)
    if count < 1:
        raise ParseError("vertex count is zero", path=path, offset=0)

    names = [n for n, _ in props]
    missing = [n for n in _REQUIRED if n not in names]
    if missing:
        raise ParseError(f"missing vertex properties: {', '.join(missing)}",
                         path=path, offset=0)
    rest_names = [f"f_rest_{i}" for i in range(3 * REST_COEFFS)]
    n_rest = sum(1 for n in rest_names if n in names)
    if n_rest not in (0, 3 * REST_COEFFS):
        raise ParseError(f"expected 0 or 45 f_rest properties, found {n_rest}",
                         path=path, offset=0)

    dtype = np.dtype(props)
    need = count * dtype.itemsize
    have = len(data) - payload_at
    if have < need:
        raise ParseError(
            f"payload truncated: {count} vertices need {need} bytes, found {have}",
            path=path, offset=payload_at + (have // dtype.itemsize) * dtype.itemsize)
    table = np.frombuffer(data, dtype=dtype, count=count, offset=payload_at)

    def col(*ns):
        return np.stack([table[n].astype(np.float64) for n in ns], axis=1)

    means = col("x", "y", "z")
    rotations = col("rot_0", "rot_1", "rot_2", "rot_3")
    norms = np.linalg.norm(rotations, axis=1)
    bad = np.flatnonzero(norms < 1e-12)
    if bad.size:
        raise ParseError(f"zero-norm quaternion at vertex {bad[0]}", path=path,
                         offset=payload_at + int(bad[0]) * dtype.itemsize)
    # normalize only when needed so exact files round-trip bit for bit
    off = np.abs(norms - 1.0) > 1e-6
    rotations[off] /= norms[off, None]

    rest = None
    if n_rest:
        raw = col(*rest_names)                      # (n, 45) channel-major
        rest = raw.reshape(count, 3, REST_COEFFS).transpose(0, 2, 1)
    return SplatCloud(means=means, rotations=rotations,
                      log_scales=col("scale_0", "scale_1", "scale_2"),
                      opacity_logits=table["opacity"].astype(np.float64),
                      color_dc=col("f_dc_0", "f_dc_1", "f_dc_2"),
                      color_rest=rest)


def save_splat_ply(path, cloud: SplatCloud) -> None:
    """Write a cloud in the standard binary layout (float32, zero normals)."""
    n = len(cloud)
    names = ["x", "y", "z", "nx", "ny", "nz", "f_dc_0", "f_dc_1", "f_dc_2"]
    if cloud.color_rest is not None:
        names += [f"f_rest_{i}" for i in range(3 * REST_COEFFS)]
    names += ["opacity", "scale_0", "scale_1", "scale_2",
              "rot_0", "rot_1", "rot_2", "rot_3"]

    header = ["ply", "format binary_little_endian 1.0", f"element vertex {n}"]
    header += [f"property float {name}" for name in names]
    header.append("end_header")

    table = np.zeros(n, dtype=np.dtype([(name, "<f4") for name in names]))
    for j, axis in enumerate("xyz"):
        table[axis] = cloud.means[:, j]
    for j in range(3):
        table[f"f_dc_{j}"] = cloud.color_dc[:, j]
        table[f"scale_{j}"] = cloud.log_scales[:, j]
    if cloud.color_rest is not None:
        flat = cloud.color_rest.transpose(0, 2, 1).reshape(n, 3 * REST_COEFFS)
        for i in range(3 * REST_COEFFS):
            table[f"f_rest_{i}"] = flat[:, i]
    table["opacity"] = cloud.opacity_logits
    for j in range(4):
        table[f"rot_{j}"] = cloud.rotations[:, j]

    with open(path, "wb") as f:
        f.write(("\n".join(header) + "\n").encode("ascii"))
        f.write(table.tobytes())
