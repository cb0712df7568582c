"""Detection evaluation (precision/recall/AP/mAP) and image quality (SSIM, PSNR).

AP uses all-point interpolation: the precision envelope is made monotone
non-increasing and integrated over recall steps. The single reported
precision/recall pair is taken at the confidence cutoff that maximizes F1
(micro-averaged over classes); both protocol choices are recorded in the
report.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.signal import convolve2d

from .detections import Detection, NUM_CLASSES, ViewDetections, iou
from .errors import DimensionMismatch, MismatchedViews
from .image import Image

MAP_THRESHOLDS = tuple(round(0.5 + 0.05 * i, 2) for i in range(10))

PSNR_CAP_DB = 99.0
_PSNR_MSE_FLOOR = 1e-12

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03

AP_PROTOCOL = "all-point interpolation (monotone precision envelope)"
PR_PROTOCOL = "micro-averaged P/R at the max-F1 confidence cutoff"


def match_predictions(preds: Sequence[Detection], gt: Sequence[Detection],
                      iou_thresh: float) -> tuple[np.ndarray, np.ndarray]:
    """Greedy one-to-one matching of one view's single-class predictions.

    Predictions are visited in descending confidence (stable on ties); each
    claims the unmatched ground truth of highest IoU provided IoU >=
    iou_thresh. Returns (tp flags aligned with `preds`, matched flags aligned
    with `gt`).
    """
    tp = np.zeros(len(preds), dtype=bool)
    matched = np.zeros(len(gt), dtype=bool)
    order = sorted(range(len(preds)), key=lambda i: (-preds[i].confidence, i))
    for i in order:
        best_j = -1
        best_iou = 0.0
        for j, g in enumerate(gt):
            if matched[j]:
                continue
            overlap = iou(preds[i].bbox, g.bbox)
            if overlap > best_iou:
                best_iou = overlap
                best_j = j
        if best_j >= 0 and best_iou >= iou_thresh:
            tp[i] = True
            matched[best_j] = True
    return tp, matched


def average_precision(tp: np.ndarray, confidences: np.ndarray, n_gt: int) -> float | None:
    """Area under the interpolated precision-recall curve.

    Returns 0 when there is no ground truth but predictions exist (all are
    false positives) and None when there is neither (class excluded from
    means).
    """
    tp = np.asarray(tp, dtype=bool)
    confidences = np.asarray(confidences, dtype=np.float64)
    if n_gt == 0:
        return 0.0 if tp.size else None
    if tp.size == 0:
        return 0.0

    order = np.argsort(-confidences, kind="stable")
    tp = tp[order]
    ctp = np.cumsum(tp)
    cfp = np.cumsum(~tp)
    recall = ctp / n_gt
    precision = ctp / (ctp + cfp)

    mrec = np.concatenate(([0.0], recall, [1.0]))
    mpre = np.concatenate(([0.0], precision, [0.0]))
    for i in range(mpre.size - 1, 0, -1):
        mpre[i - 1] = max(mpre[i - 1], mpre[i])
    steps = np.flatnonzero(mrec[1:] != mrec[:-1])
    return float(np.sum((mrec[steps + 1] - mrec[steps]) * mpre[steps + 1]))


@dataclass
class EvalReport:
    """Evaluation summary over a set of views."""

    ap_per_class: dict[float, dict[int, float | None]]
    map50: float
    map50_95: float
    precision: float
    recall: float
    operating_confidence: float
    iou_thresholds: tuple[float, ...]
    protocol: dict[str, str] = field(default_factory=lambda: {
        "ap_interpolation": AP_PROTOCOL, "operating_point": PR_PROTOCOL})

    def to_dict(self) -> dict:
        return {
            "protocol": dict(self.protocol),
            "iou_thresholds": list(self.iou_thresholds),
            "ap_per_class": {str(t): {str(c): ap for c, ap in by_class.items()}
                             for t, by_class in self.ap_per_class.items()},
            "map50": self.map50,
            "map50_95": self.map50_95,
            "precision": self.precision,
            "recall": self.recall,
            "operating_confidence": self.operating_confidence,
        }

    def write_json(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")


def _mean_ap(by_class: dict[int, float | None]) -> float:
    vals = [ap for ap in by_class.values() if ap is not None]
    return float(np.mean(vals)) if vals else 0.0


def evaluate(pred_views: Sequence[ViewDetections], gt_views: Sequence[ViewDetections],
             iou_thresholds: Sequence[float] = MAP_THRESHOLDS) -> EvalReport:
    """Pool matches over views per class and summarize.

    Every prediction view id must have a ground-truth entry; ground-truth
    views with no prediction entry count as empty prediction sets.
    """
    gt_by_id = {v.view_id: v for v in gt_views}
    missing = [v.view_id for v in pred_views if v.view_id not in gt_by_id]
    if missing:
        raise MismatchedViews(f"prediction view(s) without ground truth: {sorted(missing)}")
    pred_by_id = {v.view_id: v for v in pred_views}
    view_ids = [v.view_id for v in gt_views]

    iou_thresholds = tuple(iou_thresholds)
    # mAP@0.5 and the P/R operating point always need the 0.5 column
    eval_thresholds = iou_thresholds if 0.5 in iou_thresholds else (0.5,) + iou_thresholds
    ap_per_class: dict[float, dict[int, float | None]] = {}
    pooled50: dict[int, tuple[np.ndarray, np.ndarray, int]] = {}
    for thresh in eval_thresholds:
        by_class: dict[int, float | None] = {}
        for cls in range(NUM_CLASSES):
            flags, confs, n_gt = [], [], 0
            for view_id in view_ids:
                gts = [d for d in gt_by_id[view_id].detections if d.class_id == cls]
                preds = [d for d in pred_by_id.get(view_id, ViewDetections(view_id, ())).detections
                         if d.class_id == cls]
                n_gt += len(gts)
                tp, _ = match_predictions(preds, gts, thresh)
                flags.append(tp)
                confs.append(np.array([p.confidence for p in preds]))
            tp_all = np.concatenate(flags) if flags else np.zeros(0, dtype=bool)
            conf_all = np.concatenate(confs) if confs else np.zeros(0)
            by_class[cls] = average_precision(tp_all, conf_all, n_gt)
            if thresh == 0.5:
                pooled50[cls] = (tp_all, conf_all, n_gt)
        ap_per_class[thresh] = by_class

    map50 = _mean_ap(ap_per_class[0.5])
    map50_95 = float(np.mean([_mean_ap(ap_per_class[t]) for t in iou_thresholds]))

    precision, recall, cutoff = _max_f1_operating_point(pooled50)
    return EvalReport(ap_per_class=ap_per_class, map50=map50, map50_95=map50_95,
                      precision=precision, recall=recall, operating_confidence=cutoff,
                      iou_thresholds=iou_thresholds)


def _max_f1_operating_point(pooled: dict[int, tuple[np.ndarray, np.ndarray, int]]):
    """Micro-averaged precision/recall at the confidence maximizing F1.

    Greedy matching visits predictions in descending confidence, so the
    matches of any confidence-threshold prefix equal the matches computed on
    the full ranking; sweeping cutoffs only re-counts flags. Empty-prediction
    precision is reported as 0 by convention.
    """
    tp = np.concatenate([v[0] for v in pooled.values()]) if pooled else np.zeros(0, dtype=bool)
    conf = np.concatenate([v[1] for v in pooled.values()]) if pooled else np.zeros(0)
    n_gt = sum(v[2] for v in pooled.values())
    if conf.size == 0 or n_gt == 0:
        return 0.0, 0.0, 1.0

    best = (-1.0, 0.0, 0.0, 1.0)  # f1, precision, recall, cutoff
    for cutoff in sorted(set(conf.tolist()), reverse=True):
        keep = conf >= cutoff
        n_tp = int(np.count_nonzero(tp & keep))
        n_pred = int(np.count_nonzero(keep))
        precision = n_tp / n_pred if n_pred else 0.0
        recall = n_tp / n_gt
        f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
        if f1 > best[0]:
            best = (f1, precision, recall, cutoff)
    return best[1], best[2], best[3]


def write_reports_csv(path, reports: dict[str, EvalReport]) -> None:
    """Side-by-side summary table, one row per labelled report."""
    lines = ["label,precision,recall,map50,map50_95"]
    for label, r in reports.items():
        lines.append(f"{label},{r.precision:.6f},{r.recall:.6f},"
                     f"{r.map50:.6f},{r.map50_95:.6f}")
    Path(path).write_text("\n".join(lines) + "\n")


# ---------------------------------------------------------------------------
# image quality

def _image_data(img) -> np.ndarray:
    data = img.data if isinstance(img, Image) else np.asarray(img, dtype=np.float64)
    if data.ndim == 2:
        data = data[:, :, None]
    return data


def _gaussian_kernel(size: int, sigma: float) -> np.ndarray:
    half = (size - 1) / 2.0
    x = np.arange(size) - half
    g = np.exp(-0.5 * (x / sigma) ** 2)
    k = np.outer(g, g)
    return k / k.sum()


def ssim(a, b) -> float:
    """Mean local structural similarity over a Gaussian window.

    11x11 window, sigma 1.5, k1=0.01, k2=0.03, dynamic range 1.0; computed
    per channel on the float data and averaged over channels.
    """
    da, db = _image_data(a), _image_data(b)
    if da.shape != db.shape:
        raise DimensionMismatch(f"image shapes differ: {da.shape} vs {db.shape}")
    if da.shape[0] < SSIM_WINDOW or da.shape[1] < SSIM_WINDOW:
        raise ValueError(f"images must be at least {SSIM_WINDOW}x{SSIM_WINDOW}")

    kernel = _gaussian_kernel(SSIM_WINDOW, SSIM_SIGMA)
    c1 = (SSIM_K1 * 1.0) ** 2
    c2 = (SSIM_K2 * 1.0) ** 2

    values = []
    for ch in range(da.shape[2]):
        x, y = da[:, :, ch], db[:, :, ch]
        mu_x = convolve2d(x, kernel, mode="valid")
        mu_y = convolve2d(y, kernel, mode="valid")
        var_x = convolve2d(x * x, kernel, mode="valid") - mu_x * mu_x
        var_y = convolve2d(y * y, kernel, mode="valid") - mu_y * mu_y
        cov = convolve2d(x * y, kernel, mode="valid") - mu_x * mu_y
        num = (2.0 * mu_x * mu_y + c1) * (2.0 * cov + c2)
        den = (mu_x * mu_x + mu_y * mu_y + c1) * (var_x + var_y + c2)
        values.append(np.mean(num / den))
    return float(np.mean(values))


def psnr(a, b) -> float:
    """Peak signal-to-noise ratio in dB for unit-range float images.

    Returns the documented cap of 99 dB when the MSE falls below 1e-12
    (identical or near-identical inputs).
    """
    da, db = _image_data(a), _image_data(b)
    if da.shape != db.shape:
        raise DimensionMismatch(f"image shapes differ: {da.shape} vs {db.shape}")
    mse = float(np.mean((da - db) ** 2))
    if mse < _PSNR_MSE_FLOOR:
        return PSNR_CAP_DB
    return 10.0 * math.log10(1.0 / mse)
