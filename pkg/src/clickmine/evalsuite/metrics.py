"""Pure metric functions.

Size buckets split on mask area at 32^2 and 96^2. AP follows the COCO
protocol: greedy score-ordered matching per evaluation unit at mask-IoU
thresholds 0.50:0.05:0.95, 101-point interpolated precision averaged over
thresholds; AR is the matched-GT fraction at up to 100 detections, averaged
over the same thresholds. Predictions matched to out-of-bucket ground truth
are ignored rather than counted as false positives.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..cpn import propose_clicks
from ..masks import mask_iou, point_in_mask

SIZE_BUCKETS = {"small": (0, 32 * 32), "medium": (32 * 32, 96 * 96),
                "large": (96 * 96, float("inf"))}
AP_IOU_THRESHOLDS = tuple(np.arange(0.5, 0.96, 0.05).round(2))
PR_SWEEP = tuple(np.arange(0.05, 0.951, 0.05).round(2))
MAX_DETECTIONS = 100


def bucket_of(area: float) -> str:
    for name, (lo, hi) in SIZE_BUCKETS.items():
        if lo < area <= hi:
            return name
    return "large"


@dataclass
class PRCurve:
    points: list[tuple[float, float, float]]  # (threshold, precision, recall)
    auc: float


def heatmap_auc_pr(samples: list[tuple[np.ndarray, list[np.ndarray]]],
                   window: int = 8,
                   thresholds: tuple[float, ...] = PR_SWEEP) -> PRCurve:
    """Precision-recall of proposed clicks over (heatmap, group masks) pairs.

    At each threshold: precision is the fraction of proposed clicks landing
    inside any ground-truth mask (1.0 when no clicks are proposed), recall is
    the fraction of masks hit by at least one click. AUC is the trapezoid over
    recall with a (recall 0, precision 1) anchor.
    """
    points = []
    for thr in thresholds:
        n_clicks = 0
        n_true = 0
        n_masks = 0
        n_hit = 0
        for heatmap, gt_masks in samples:
            clicks = propose_clicks(heatmap, window=window, threshold=thr)
            n_clicks += len(clicks)
            n_masks += len(gt_masks)
            for x, y, _ in clicks:
                if any(point_in_mask(m, x, y) for m in gt_masks):
                    n_true += 1
            for m in gt_masks:
                if any(point_in_mask(m, x, y) for x, y, _ in clicks):
                    n_hit += 1
        precision = n_true / n_clicks if n_clicks else 1.0
        recall = n_hit / n_masks if n_masks else 0.0
        points.append((float(thr), precision, recall))

    curve = sorted([(r, p) for _, p, r in points] + [(0.0, 1.0)])
    auc = 0.0
    for (r0, p0), (r1, p1) in zip(curve, curve[1:]):
        auc += (r1 - r0) * (p0 + p1) / 2
    return PRCurve(points=points, auc=float(auc))


def _match_unit(preds: list[tuple[np.ndarray, float]], gts: list[np.ndarray],
                gt_in_bucket: list[bool], thr: float):
    """Greedy score-ordered matching for one evaluation unit.

    Returns per-prediction flags ("tp" | "fp" | "ignore") in the unit's
    score order, plus the matched in-bucket GT count.
    """
    order = sorted(range(len(preds)), key=lambda i: -preds[i][1])
    taken = [False] * len(gts)
    flags = {}
    matched_in_bucket = 0
    for i in order:
        mask = preds[i][0]
        best_iou, best_j = 0.0, -1
        best_ign_iou, best_ign_j = 0.0, -1
        for j, g in enumerate(gts):
            if taken[j]:
                continue
            iou = mask_iou(mask, g)
            if iou < thr:
                continue
            if gt_in_bucket[j]:
                if iou > best_iou:
                    best_iou, best_j = iou, j
            elif iou > best_ign_iou:
                best_ign_iou, best_ign_j = iou, j
        if best_j >= 0:
            taken[best_j] = True
            flags[i] = "tp"
            matched_in_bucket += 1
        elif best_ign_j >= 0:
            taken[best_ign_j] = True
            flags[i] = "ignore"
        else:
            flags[i] = "fp"
    return flags, matched_in_bucket


def _ap_from_flags(scored_flags: list[tuple[float, str]], n_gt: int) -> float:
    """101-point interpolated AP from (score, flag) records."""
    if n_gt == 0:
        return 0.0
    records = sorted(scored_flags, key=lambda t: -t[0])
    tp = fp = 0
    precisions, recalls = [], []
    for _, flag in records:
        if flag == "ignore":
            continue
        if flag == "tp":
            tp += 1
        else:
            fp += 1
        precisions.append(tp / (tp + fp))
        recalls.append(tp / n_gt)
    if not precisions:
        return 0.0
    precisions = np.array(precisions)
    recalls = np.array(recalls)
    # non-increasing precision envelope
    for i in range(len(precisions) - 2, -1, -1):
        precisions[i] = max(precisions[i], precisions[i + 1])
    ap = 0.0
    for r in np.linspace(0, 1, 101):
        above = precisions[recalls >= r - 1e-12]
        ap += float(above[0]) if above.size else 0.0
    return ap / 101


def mask_ap_ar(units: list[tuple[list[tuple[np.ndarray, float]], list[np.ndarray]]],
               iou_thresholds: tuple[float, ...] = AP_IOU_THRESHOLDS,
               max_detections: int = MAX_DETECTIONS) -> dict[str, dict[str, float]]:
    """AP and AR per size bucket plus overall.

    `units` is a list of (predictions, gt_masks) pairs, predictions as
    (mask, score). Returns {"all": {"ap":, "ar":}, "small": ..., ...}; empty
    buckets report ap = ar = 0.
    """
    buckets = ["all", "small", "medium", "large"]
    out = {}
    for bucket in buckets:
        ap_per_thr = []
        ar_per_thr = []
        n_gt_total = 0
        for thr in iou_thresholds:
            scored_flags = []
            matched = 0
            n_gt = 0
            for preds, gts in units:
                preds = sorted(preds, key=lambda t: -t[1])[:max_detections]
                in_bucket = [bucket == "all" or bucket_of(g.sum()) == bucket
                             for g in gts]
                n_gt += sum(in_bucket)
                flags, m = _match_unit(preds, gts, in_bucket, thr)
                matched += m
                for i, (mask, score) in enumerate(preds):
                    scored_flags.append((score, flags[i]))
            n_gt_total = n_gt
            ap_per_thr.append(_ap_from_flags(scored_flags, n_gt))
            ar_per_thr.append(matched / n_gt if n_gt else 0.0)
        out[bucket] = {"ap": float(np.mean(ap_per_thr)) if n_gt_total else 0.0,
                       "ar": float(np.mean(ar_per_thr)) if n_gt_total else 0.0,
                       "n_gt": n_gt_total}
    return out
