"""Iterative group selection: each round queries the proposal network with
the current exemplar masks, turns surviving heatmap peaks into clicks, drops
clicks already covered by accepted masks, segments every accepted click, and
keeps the masks the verifier accepts against the original target.

The accepted click set only grows; the accepted mask set is recomputed every
round from scratch (a previously kept proposal can drop out if verification
rejects it later), with the initial mask always retained.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .backbone import FeaturePyramid
from .clickseg import ClickSet, InstanceMask
from .cpn import propose_clicks
from .masks import point_in_mask

IDS_ITERATIONS = 5
IDS_TOP_K = 10
IDS_EXEMPLARS = 3
IDS_NMS_KERNEL = 5
IDS_CONFIDENCE = 0.2


@dataclass
class IdsParams:
    iterations: int = IDS_ITERATIONS
    top_k: int = IDS_TOP_K
    exemplar_count: int = IDS_EXEMPLARS
    nms_kernel: int = IDS_NMS_KERNEL
    confidence: float = IDS_CONFIDENCE


@dataclass
class PipelineModels:
    """The trained stack the loop drives; any objects with these surfaces do."""

    segmenter: object  # .segment_clicks(pyramid, ClickSet) -> [InstanceMask|None]
    cpn: object        # .multi_exemplar_heatmap(pyramid, [mask]) -> heatmap
    verifier: object   # .verify(target, proposals, pyramid, image) -> [(mask, score)]


@dataclass
class SelectionState:
    exemplars: list[InstanceMask]
    accepted: list[tuple[InstanceMask, float]]  # (mask, verification score)
    accepted_clicks: list[tuple[int, int]]
    iteration: int


@dataclass
class IterationSnapshot:
    iteration: int
    new_clicks: list[tuple[int, int, float]]
    accepted_clicks: list[tuple[int, int]]
    accepted: list[tuple[InstanceMask, float]]


def dedupe_clicks(clicks: list, accepted_masks: list[np.ndarray]) -> list:
    """Drop clicks whose pixel lies inside any accepted mask."""
    out = []
    for click in clicks:
        x, y = click[0], click[1]
        if any(point_in_mask(m, x, y) for m in accepted_masks):
            continue
        out.append(click)
    return out


def run_ids(models: PipelineModels, initial: InstanceMask,
            pyramid: FeaturePyramid, image: np.ndarray,
            params: IdsParams | None = None
            ) -> tuple[SelectionState, list[IterationSnapshot]]:
    """The selection loop; at most params.iterations rounds, early exit on a
    round that proposes nothing new."""
    if not initial.mask.any():
        raise ValueError("initial mask is empty")
    params = params or IdsParams()

    exemplars: list[InstanceMask] = [initial]
    accepted: list[tuple[InstanceMask, float]] = [(initial, 1.0)]
    c_acc: list[tuple[int, int]] = []
    snapshots: list[IterationSnapshot] = []
    iteration = 0

    for iteration_idx in range(params.iterations):
        heatmap = models.cpn.multi_exemplar_heatmap(
            pyramid, [m.mask for m in exemplars])
        clicks = propose_clicks(heatmap, window=params.nms_kernel,
                                threshold=params.confidence)
        blocked = [m.mask for m, _ in accepted] + [initial.mask]
        clicks = dedupe_clicks(clicks, blocked)
        already = set(c_acc)
        clicks = [c for c in clicks if (c[0], c[1]) not in already]
        new_clicks = clicks[: params.top_k]
        if not new_clicks:
            break
        iteration = iteration_idx + 1
        c_acc = c_acc + [(x, y) for x, y, _ in new_clicks]

        results = models.segmenter.segment_clicks(pyramid, ClickSet(c_acc))
        proposals = [m for m in results if m is not None]
        verified = models.verifier.verify(initial, proposals, pyramid, image)
        accepted = [(initial, 1.0)] + list(verified)

        # exemplars: top-m by detection confidence, verification score breaks ties
        ranked = sorted(accepted, key=lambda t: (-t[0].score, -t[1]))
        exemplars = [m for m, _ in ranked[: params.exemplar_count]]

        snapshots.append(IterationSnapshot(
            iteration=iteration, new_clicks=list(new_clicks),
            accepted_clicks=list(c_acc), accepted=list(accepted)))

    state = SelectionState(exemplars=exemplars, accepted=accepted,
                           accepted_clicks=c_acc, iteration=iteration)
    return state, snapshots
