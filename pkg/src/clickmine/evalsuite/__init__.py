"""Metrics and experiment protocols: click-heatmap AUC-PR, size-bucketed
mask AP/AR, IoU-versus-clicks curves, and the ablation grids."""

from .metrics import (
    AP_IOU_THRESHOLDS,
    PRCurve,
    SIZE_BUCKETS,
    bucket_of,
    heatmap_auc_pr,
    mask_ap_ar,
)
from .protocols import (
    evaluate_group_selection,
    evaluate_similarity_method,
    iou_vs_clicks,
)
from .ablation import run_ablation
from .report import svg_line_chart, write_report

__all__ = [
    "AP_IOU_THRESHOLDS",
    "PRCurve",
    "SIZE_BUCKETS",
    "bucket_of",
    "heatmap_auc_pr",
    "mask_ap_ar",
    "evaluate_group_selection",
    "evaluate_similarity_method",
    "iou_vs_clicks",
    "run_ablation",
    "svg_line_chart",
    "write_report",
]
