"""Multi-view detection ensembling.

Render-view detections are clustered into groups by box overlap, the groups
vote on a class (purity = fraction agreeing with the majority), redundant
same-class groups merge, a systematic translation offset between renders and
the original view is estimated from a high-confidence anchor, and the groups
are fused with the original view's detections: coinciding detections are
corrected, unbacked non-body originals are dropped, and unmatched groups
become new detections. Body detections in the original view are never
modified.

All steps are pure and deterministically ordered, so results do not depend
on the ordering of the input render views.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

from .detections import BBox, BODY_CLASS, Detection, ViewDetections, iou


@dataclass(frozen=True)
class EnsembleThresholds:
    """The four grid-searched knobs of the grouping stage."""

    group_iou: float = 0.5
    min_group_size: int = 8
    purity_min: float = 0.7
    merge_iou: float = 0.5

    def __post_init__(self):
        if not (0.0 <= self.group_iou <= 1.0 and 0.0 <= self.merge_iou <= 1.0
                and 0.0 <= self.purity_min <= 1.0):
            raise ValueError("iou and purity thresholds must be in [0, 1]")
        if self.min_group_size < 1:
            raise ValueError("min_group_size must be at least 1")


@dataclass(frozen=True)
class Offset2D:
    dx: float
    dy: float


@dataclass(frozen=True)
class DetectionGroup:
    """A cluster of render detections and its vote statistics."""

    members: tuple[tuple[str, Detection], ...]
    majority_class: int
    purity: float
    mean_bbox: BBox
    mean_confidence: float


@dataclass(frozen=True)
class EnsembleOutcome:
    """ensemble_view plus the intermediates needed for auditing."""

    corrected: ViewDetections
    groups: tuple[DetectionGroup, ...]
    offset: Offset2D


def _member_key(member: tuple[str, Detection]):
    view_id, d = member
    return (view_id, d.bbox.cx, d.bbox.cy, d.bbox.w, d.bbox.h, d.class_id, d.confidence)


def _build_group(members: list[tuple[str, Detection]]) -> DetectionGroup:
    members = sorted(members, key=_member_key)
    counts: dict[int, int] = {}
    for _, d in members:
        counts[d.class_id] = counts.get(d.class_id, 0) + 1
    # majority = plurality; ties break toward the smaller class id
    majority = min(counts, key=lambda c: (-counts[c], c))
    n = len(members)
    mean = [sum(getattr(d.bbox, f) for _, d in members) / n for f in ("cx", "cy", "w", "h")]
    return DetectionGroup(
        members=tuple(members),
        majority_class=majority,
        purity=counts[majority] / n,
        mean_bbox=BBox(*mean),
        mean_confidence=sum(d.confidence for _, d in members) / n)


def group_detections(render_views: Sequence[ViewDetections],
                     t: EnsembleThresholds) -> list[DetectionGroup]:
    """Cluster render detections into connected components of the IoU graph.

    Two detections are linked when their boxes' IoU exceeds t.group_iou
    (class-agnostic; the class vote happens afterwards). Components smaller
    than t.min_group_size or with purity below t.purity_min are discarded.
    """
    dets = sorted(((v.view_id, d) for v in render_views for d in v.detections),
                  key=_member_key)
    n = len(dets)
    parent = list(range(n))

    def find(i: int) -> int:
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    for i in range(n):
        for j in range(i + 1, n):
            if iou(dets[i][1].bbox, dets[j][1].bbox) > t.group_iou:
                ri, rj = find(i), find(j)
                if ri != rj:
                    parent[max(ri, rj)] = min(ri, rj)

    components: dict[int, list[tuple[str, Detection]]] = {}
    for i in range(n):
        components.setdefault(find(i), []).append(dets[i])

    groups = []
    for root in sorted(components):
        members = components[root]
        if len(members) < t.min_group_size:
            continue
        group = _build_group(members)
        if group.purity < t.purity_min:
            continue
        groups.append(group)
    return groups


def merge_groups(groups: Sequence[DetectionGroup],
                 t: EnsembleThresholds) -> list[DetectionGroup]:
    """Union same-class groups whose mean boxes overlap above t.merge_iou.

    Merging moves the mean boxes, so the pass repeats until no pair
    qualifies (a fixpoint); applying the operation twice equals once.
    """
    merged = list(groups)
    changed = True
    while changed:
        changed = False
        for i in range(len(merged)):
            for j in range(i + 1, len(merged)):
                a, b = merged[i], merged[j]
                if a.majority_class != b.majority_class:
                    continue
                if iou(a.mean_bbox, b.mean_bbox) > t.merge_iou:
                    merged[i] = _build_group(list(a.members) + list(b.members))
                    del merged[j]
                    changed = True
                    break
            if changed:
                break
    return sorted(merged, key=lambda g: _member_key(g.members[0]))


def estimate_offset(groups: Sequence[DetectionGroup], original: ViewDetections,
                    anchor_conf_min: float = 0.5) -> Offset2D:
    """Translation from group space to original-image space.

    Preferred anchor: a body group against the most confident original body
    detection at or above anchor_conf_min. Fallback: the most confident
    original detection whose class some group voted for. Last resort: zero.
    """
    def biggest(cands: list[DetectionGroup]) -> DetectionGroup:
        # max keeps the first of equals, and `groups` arrives canonically ordered
        return max(cands, key=lambda g: (len(g.members), g.purity))

    def offset_from(det: Detection, group: DetectionGroup) -> Offset2D:
        return Offset2D(dx=det.bbox.cx - group.mean_bbox.cx,
                        dy=det.bbox.cy - group.mean_bbox.cy)

    body_groups = [g for g in groups if g.majority_class == BODY_CLASS]
    body_dets = [d for d in original.detections
                 if d.class_id == BODY_CLASS and d.confidence >= anchor_conf_min]
    if body_groups and body_dets:
        det = max(body_dets, key=lambda d: d.confidence)
        return offset_from(det, biggest(body_groups))

    voted = {g.majority_class for g in groups}
    matching = [d for d in original.detections if d.class_id in voted]
    if matching:
        det = max(matching, key=lambda d: d.confidence)
        return offset_from(det, biggest([g for g in groups
                                         if g.majority_class == det.class_id]))
    return Offset2D(0.0, 0.0)


def _shift(box: BBox, offset: Offset2D) -> tuple[float, float, float, float]:
    return (box.cx + offset.dx, box.cy + offset.dy, box.w, box.h)


def _clip_unit(cx: float, cy: float, w: float, h: float) -> BBox | None:
    x1, y1 = max(cx - w / 2.0, 0.0), max(cy - h / 2.0, 0.0)
    x2, y2 = min(cx + w / 2.0, 1.0), min(cy + h / 2.0, 1.0)
    if x2 - x1 <= 0.0 or y2 - y1 <= 0.0:
        return None
    return BBox(cx=(x1 + x2) / 2.0, cy=(y1 + y2) / 2.0, w=x2 - x1, h=y2 - y1)


def fuse(original: ViewDetections, groups: Sequence[DetectionGroup],
         offset: Offset2D, match_iou: float = 0.25) -> ViewDetections:
    """Combine original detections with (offset-corrected) groups.

    Group mean boxes are shifted by `offset`, then originals and groups are
    paired greedily by descending IoU (each side used once, IoU > match_iou;
    ties break by group order then original order). Rules:

    a. body originals pass through untouched (a matched group is simply
       consumed);
    b. a matched non-body original takes the group's majority class,
       confidence max(conf, purity), and the confidence/purity-weighted
       average of the two boxes;
    c. an unmatched group becomes a new detection with confidence
       purity * mean member confidence;
    d. an unmatched non-body original is dropped as an unbacked prediction.

    Output boxes are clipped to the unit image.
    """
    shifted = [_shift(g.mean_bbox, offset) for g in groups]
    shifted_boxes = []
    for cx, cy, w, h in shifted:
        x2, y2 = cx + w / 2.0, cy + h / 2.0
        x1, y1 = cx - w / 2.0, cy - h / 2.0
        # keep an unclipped box for matching; skip only if fully outside
        shifted_boxes.append(None if (x1 >= 1.0 or x2 <= 0.0 or y1 >= 1.0 or y2 <= 0.0)
                             else BBox(cx, cy, w, h))

    candidates = []
    for oi, det in enumerate(original.detections):
        for gi, box in enumerate(shifted_boxes):
            if box is None:
                continue
            overlap = iou(det.bbox, box)
            if overlap > match_iou:
                candidates.append((-overlap, gi, oi))
    candidates.sort()

    group_of: dict[int, int] = {}
    used_groups: set[int] = set()
    for neg_overlap, gi, oi in candidates:
        if oi in group_of or gi in used_groups:
            continue
        group_of[oi] = gi
        used_groups.add(gi)

    out: list[Detection] = []
    for oi, det in enumerate(original.detections):
        if det.class_id == BODY_CLASS:
            out.append(det)
            continue
        gi = group_of.get(oi)
        if gi is None:
            continue  # rule d
        g = groups[gi]
        scx, scy, sw, sh = shifted[gi]
        conf, pur = det.confidence, g.purity
        total = conf + pur
        box = _clip_unit((conf * det.bbox.cx + pur * scx) / total,
                         (conf * det.bbox.cy + pur * scy) / total,
                         (conf * det.bbox.w + pur * sw) / total,
                         (conf * det.bbox.h + pur * sh) / total)
        if box is not None:
            out.append(Detection(class_id=g.majority_class, bbox=box,
                                 confidence=max(conf, pur)))

    for gi, g in enumerate(groups):
        if gi in used_groups:
            continue
        box = _clip_unit(*shifted[gi])
        if box is not None:
            out.append(Detection(class_id=g.majority_class, bbox=box,
                                 confidence=g.purity * g.mean_confidence))
    return ViewDetections(view_id=original.view_id, detections=tuple(out))


def ensemble_view_detailed(original: ViewDetections,
                           render_views: Sequence[ViewDetections],
                           t: EnsembleThresholds,
                           anchor_conf_min: float = 0.5,
                           match_iou: float = 0.25) -> EnsembleOutcome:
    """Full ensembling of one view, keeping the intermediates."""
    groups = merge_groups(group_detections(render_views, t), t)
    offset = estimate_offset(groups, original, anchor_conf_min)
    corrected = fuse(original, groups, offset, match_iou)
    return EnsembleOutcome(corrected=corrected, groups=tuple(groups), offset=offset)


def ensemble_view(original: ViewDetections, render_views: Sequence[ViewDetections],
                  t: EnsembleThresholds, anchor_conf_min: float = 0.5,
                  match_iou: float = 0.25) -> ViewDetections:
    """Group, merge, offset-correct and fuse; returns the corrected view."""
    return ensemble_view_detailed(original, render_views, t,
                                  anchor_conf_min, match_iou).corrected
