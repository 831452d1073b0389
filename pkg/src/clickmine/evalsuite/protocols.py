"""Experiment protocols built on the metric functions.

All protocols are deterministic: simulated clicks are placed at distance-map
peaks (ties break at the lowest row-major index), and scene iteration order
is fixed by the manifest.
"""

from __future__ import annotations

import numpy as np

from ..baselines import dot_product_heatmap, pyramid_patch_match
from ..clickseg import ClickSet, InstanceMask
from ..ids import IdsParams, PipelineModels, run_ids
from ..masks import mask_bbox, mask_iou
from ..synthgen import SyntheticScene, distance_map
from .metrics import bucket_of, heatmap_auc_pr, mask_ap_ar


def peak_click(mask: np.ndarray) -> tuple[int, int]:
    """Distance-map peak of a mask (lowest row-major index on ties)."""
    dm = distance_map(mask)
    idx = int(np.argmax(dm))
    r, c = np.unravel_index(idx, dm.shape)
    return int(c), int(r)


def groups_of(scene: SyntheticScene) -> dict[int, list[np.ndarray]]:
    groups: dict[int, list[np.ndarray]] = {}
    for inst in scene.instances:
        groups.setdefault(inst.group_id, []).append(inst.mask)
    return groups


# ------------------------------------------------------------ IoU vs clicks

def iou_vs_clicks(segment_fn, scenes: list[SyntheticScene],
                  max_clicks: int = 5) -> dict[str, list[float]]:
    """Mean mask IoU as positive clicks accumulate, bucketed by GT size.

    segment_fn(scene, ClickSet) must return the predicted binary mask for the
    clicked object (multiple clicks all target the same instance). Click 1
    lands on the GT distance-map peak; each later click lands on the peak of
    the current false-negative region, stopping early (holding the IoU) once
    that region is empty.
    """
    sums: dict[str, np.ndarray] = {b: np.zeros(max_clicks)
                                   for b in ("all", "small", "medium", "large")}
    counts: dict[str, int] = {b: 0 for b in sums}

    for scene in scenes:
        for inst in scene.instances:
            gt = inst.mask
            bucket = bucket_of(gt.sum())
            clicks = [peak_click(gt)]
            ious = []
            for t in range(max_clicks):
                pred = segment_fn(scene, ClickSet(clicks))
                iou = mask_iou(pred, gt) if pred is not None else 0.0
                ious.append(iou)
                if t + 1 == max_clicks:
                    break
                fn_region = gt & ~(pred if pred is not None
                                   else np.zeros_like(gt))
                if not fn_region.any():
                    ious.extend([iou] * (max_clicks - t - 1))
                    break
                clicks.append(peak_click(fn_region))
            curve = np.array(ious[:max_clicks])
            for b in ("all", bucket):
                sums[b] += curve
                counts[b] += 1

    out: dict = {b: list(sums[b] / counts[b]) if counts[b] else [0.0] * max_clicks
                 for b in sums}
    out["counts"] = counts
    return out


# ------------------------------------------------------- similarity heatmaps

def evaluate_similarity_method(method: str, scenes: list[SyntheticScene],
                               pyramids, cpn=None, window: int = 8):
    """AUC-PR of a similarity heatmap method over every group of every scene.

    The query is each group's first instance mask (ground truth), the targets
    are all of that group's masks. method is one of cpn | dot | patch.
    """
    samples = []
    for scene, pyramid in zip(scenes, pyramids):
        for gid, masks in sorted(groups_of(scene).items()):
            query = masks[0]
            if method == "cpn":
                if cpn is None:
                    raise ValueError("cpn model required for method 'cpn'")
                hm = cpn.predict_heatmap(pyramid, query)
            elif method == "dot":
                hm = dot_product_heatmap(pyramid.numpy(4), query)
            elif method == "patch":
                hm = pyramid_patch_match(pyramid, query)
            else:
                raise ValueError(f"unknown similarity method {method!r}")
            samples.append((hm, masks))
    return heatmap_auc_pr(samples, window=window)


# --------------------------------------------------------- group selection

class _AcceptAllVerifier:
    """PVM-off stand-in: every proposal passes with score 1."""

    def verify(self, target, proposals, pyramid, image):
        return [(p, 1.0) for p in proposals]


def evaluate_group_selection(models: PipelineModels, scenes: list[SyntheticScene],
                             pyramids, use_ids: bool = True, use_pvm: bool = True,
                             params: IdsParams | None = None):
    """Table-style AP/AR of the full selection pipeline on synthetic scenes.

    One evaluation unit per (scene, group): the target click lands on the
    group's first instance; predictions are the accepted masks. IDS off means
    a single proposal round (iterations=1); PVM off accepts every proposal.
    """
    params = params or IdsParams()
    if not use_ids:
        params = IdsParams(iterations=1, top_k=params.top_k,
                           exemplar_count=params.exemplar_count,
                           nms_kernel=params.nms_kernel,
                           confidence=params.confidence)
    active = PipelineModels(
        segmenter=models.segmenter, cpn=models.cpn,
        verifier=models.verifier if use_pvm else _AcceptAllVerifier())

    units = []
    for scene, pyramid in zip(scenes, pyramids):
        for gid, masks in sorted(groups_of(scene).items()):
            target_mask = masks[0]
            click = peak_click(target_mask)
            results = active.segmenter.segment_clicks(pyramid, ClickSet([click]))
            initial = results[0] if results else None
            if initial is None:
                units.append(([], masks))
                continue
            state, _ = run_ids(active, initial, pyramid, scene.image, params)
            preds = [(m.mask, m.score) for m, _ in state.accepted]
            units.append((preds, masks))
    return mask_ap_ar(units)
