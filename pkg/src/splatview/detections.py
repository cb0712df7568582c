"""Detection records, the detector text-file boundary, and box geometry.

Boxes are stored center-format in normalized image fractions (the common
detector output convention) and converted to corners for IoU. One text file
per view, one detection per line: "class cx cy w h conf"; ground-truth files
omit the trailing confidence, which then defaults to 1.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping

from .errors import ParseError, RangeError

CLASS_NAMES = ("solar", "body", "antenna", "thruster")
BODY_CLASS = 1
NUM_CLASSES = len(CLASS_NAMES)

_FILE_HEADER = "# classes: " + " ".join(f"{i}={n}" for i, n in enumerate(CLASS_NAMES))


@dataclass(frozen=True)
class BBox:
    """Axis-aligned box, center format, normalized to the unit image."""

    cx: float
    cy: float
    w: float
    h: float

    def __post_init__(self):
        if not (self.w > 0 and self.h > 0):
            raise ValueError("box width and height must be positive")
        if self.x1 >= 1.0 or self.x2 <= 0.0 or self.y1 >= 1.0 or self.y2 <= 0.0:
            raise ValueError("box does not intersect the unit image")

    @property
    def x1(self) -> float:
        return self.cx - self.w / 2.0

    @property
    def y1(self) -> float:
        return self.cy - self.h / 2.0

    @property
    def x2(self) -> float:
        return self.cx + self.w / 2.0

    @property
    def y2(self) -> float:
        return self.cy + self.h / 2.0

    def clipped(self) -> "BBox | None":
        """Intersection with the unit image; None when empty."""
        x1, y1 = max(self.x1, 0.0), max(self.y1, 0.0)
        x2, y2 = min(self.x2, 1.0), min(self.y2, 1.0)
        if x2 - x1 <= 0.0 or y2 - y1 <= 0.0:
            return None
        return BBox(cx=(x1 + x2) / 2.0, cy=(y1 + y2) / 2.0, w=x2 - x1, h=y2 - y1)


@dataclass(frozen=True)
class Detection:
    class_id: int
    bbox: BBox
    confidence: float

    def __post_init__(self):
        if self.class_id not in range(NUM_CLASSES):
            raise ValueError(f"class id {self.class_id} outside 0..{NUM_CLASSES - 1}")
        if not 0.0 <= self.confidence <= 1.0:
            raise ValueError("confidence must be in [0, 1]")


@dataclass(frozen=True)
class ViewDetections:
    view_id: str
    detections: tuple[Detection, ...]

    def __post_init__(self):
        if not self.view_id:
            raise ValueError("view id must be nonempty")
        object.__setattr__(self, "detections", tuple(self.detections))


def iou(a: BBox, b: BBox) -> float:
    """Intersection over union; 0 for disjoint boxes."""
    ix = min(a.x2, b.x2) - max(a.x1, b.x1)
    iy = min(a.y2, b.y2) - max(a.y1, b.y1)
    if ix <= 0.0 or iy <= 0.0:
        return 0.0
    inter = ix * iy
    area_a = (a.x2 - a.x1) * (a.y2 - a.y1)
    area_b = (b.x2 - b.x1) * (b.y2 - b.y1)
    return inter / (area_a + area_b - inter)


def parse_detection_line(line: str, *, path=None, lineno: int | None = None) -> Detection:
    """One detection from a "class cx cy w h [conf]" line."""
    tokens = line.split()
    if len(tokens) not in (5, 6):
        raise ParseError(f"expected 5 or 6 fields, got {len(tokens)}",
                         path=path, line=lineno)
    try:
        class_id = int(tokens[0])
        cx, cy, w, h = (float(t) for t in tokens[1:5])
        conf = float(tokens[5]) if len(tokens) == 6 else 1.0
    except ValueError as e:
        raise ParseError(f"non-numeric field: {e}", path=path, line=lineno) from e

    where = f"{path}:{lineno}" if path is not None else "line"
    if class_id not in range(NUM_CLASSES):
        raise RangeError(f"{where}: class id {class_id} outside 0..{NUM_CLASSES - 1}")
    if not (0.0 <= cx <= 1.0 and 0.0 <= cy <= 1.0):
        raise RangeError(f"{where}: box center outside [0, 1]")
    if not (0.0 < w <= 1.0 and 0.0 < h <= 1.0):
        raise RangeError(f"{where}: box size outside (0, 1]")
    if not 0.0 <= conf <= 1.0:
        raise RangeError(f"{where}: confidence outside [0, 1]")
    return Detection(class_id=class_id, bbox=BBox(cx, cy, w, h), confidence=conf)


def read_detection_file(path, *, view_id: str) -> ViewDetections:
    path = Path(path)
    dets = []
    for lineno, line in enumerate(path.read_text().splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        dets.append(parse_detection_line(stripped, path=path, lineno=lineno))
    return ViewDetections(view_id=view_id, detections=tuple(dets))


def write_detection_file(path, view: ViewDetections, *, with_confidence: bool = True) -> None:
    lines = [_FILE_HEADER]
    for d in view.detections:
        fields = f"{d.class_id} {d.bbox.cx:.9f} {d.bbox.cy:.9f} {d.bbox.w:.9f} {d.bbox.h:.9f}"
        if with_confidence:
            fields += f" {d.confidence:.9f}"
        lines.append(fields)
    Path(path).write_text("\n".join(lines) + "\n")


def load_view_detections(directory, manifest: Mapping[str, str] | Iterable[str]) -> list[ViewDetections]:
    """Load the views named by `manifest` from `directory`.

    `manifest` maps view id to file name, or is a plain iterable of ids
    (file name then defaults to "<id>.txt"). Views whose file is missing get
    an empty detection list; a view with no detections is valid.
    """
    directory = Path(directory)
    if isinstance(manifest, Mapping):
        items = list(manifest.items())
    else:
        items = [(view_id, f"{view_id}.txt") for view_id in manifest]
    views = []
    for view_id, name in items:
        path = directory / name
        if path.exists():
            views.append(read_detection_file(path, view_id=view_id))
        else:
            views.append(ViewDetections(view_id=view_id, detections=()))
    return views


def load_detections_manifest(path) -> dict[str, str]:
    path = Path(path)
    try:
        data = json.loads(path.read_text())
    except json.JSONDecodeError as e:
        raise ParseError(f"invalid JSON: {e.msg}", path=path, line=e.lineno) from e
    if not isinstance(data, dict) or not all(
            isinstance(k, str) and isinstance(v, str) for k, v in data.items()):
        raise ParseError("detections manifest must map view id to file name", path=path)
    return data
