"""One-click segmentation: clicks are rasterized per pyramid level, projected
and concatenated onto the features, and an anchor-free detection head plus a
dynamic-kernel mask branch turn each click into one instance mask.

Only positive clicks exist. The detection head proposes class-agnostic boxes
at every location of every level; boxes are kept only when they contain a
click, and each click takes the highest-objectness box that contains it.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import torch
from torch import nn
from torch.nn import functional as F

from .backbone import ChannelNorm, FeaturePyramid, FeaturePyramidNet, STRIDES
from .masks import mask_bbox, point_in_mask
from .synthgen import distance_map

CLICK_CHANNELS = 32
MASK_CHANNELS = 8
# dynamic mask head: (MASK_CHANNELS + 2 rel-coord) -> MASK_CHANNELS -> 1
KERNEL_PARAMS = (MASK_CHANNELS + 2) * MASK_CHANNELS + MASK_CHANNELS + MASK_CHANNELS + 1
# FCOS-style per-level scale ranges over max(l, t, r, b), in pixels
LEVEL_RANGES = ((0, 32), (32, 64), (64, 128), (128, 10**9))
MASK_THRESHOLD = 0.5
REL_COORD_SCALE = 32.0


@dataclass
class ClickSet:
    """Ordered unique (x, y) pixel clicks."""

    clicks: list[tuple[int, int]]

    def __init__(self, clicks):
        seen = set()
        unique = []
        for x, y in clicks:
            pt = (int(x), int(y))
            if pt not in seen:
                seen.add(pt)
                unique.append(pt)
        self.clicks = unique

    def __len__(self):
        return len(self.clicks)

    def __iter__(self):
        return iter(self.clicks)


@dataclass
class ClickedPyramid:
    """Pyramid levels with click channels concatenated: (stride, [d+c, h, w])."""

    levels: list[tuple[int, torch.Tensor]]

    def level(self, stride: int) -> torch.Tensor:
        for s, f in self.levels:
            if s == stride:
                return f
        raise KeyError(f"no level with stride {stride}")


@dataclass
class Detection:
    box: tuple[float, float, float, float]
    score: float
    kernel: torch.Tensor
    level_index: int
    cell: tuple[int, int]  # (row, col) on that level
    click: tuple[int, int] | None = None


@dataclass
class InstanceMask:
    mask: np.ndarray
    score: float
    source_click: tuple[int, int]
    box: tuple[float, float, float, float]

    @property
    def area(self) -> int:
        return int(self.mask.sum())


def rasterize_clicks(clicks: ClickSet,
                     shapes: list[tuple[int, tuple[int, int]]]) -> list[np.ndarray]:
    """Binary click map per level; cell (y//stride, x//stride) is set."""
    maps = []
    for stride, (h, w) in shapes:
        m = np.zeros((h, w), dtype=np.float32)
        for x, y in clicks:
            r, c = y // stride, x // stride
            if not (0 <= r < h and 0 <= c < w):
                raise ValueError(f"click ({x}, {y}) outside level {stride} grid")
            m[r, c] = 1.0
        maps.append(m)
    return maps


def pyramid_shapes(pyramid: FeaturePyramid) -> list[tuple[int, tuple[int, int]]]:
    return [(s, tuple(f.shape[1:])) for s, f in pyramid.levels]


class OneClickSegmenter(nn.Module):
    """Detection + segmentation heads over a (click-embedded) pyramid.

    With click_embedding=False the model is the plain class-agnostic variant
    used as the ablation baseline; it sees no click information.
    """

    def __init__(self, backbone: FeaturePyramidNet, click_embedding: bool = True,
                 click_channels: int = CLICK_CHANNELS, seed: int = 0):
        super().__init__()
        self.backbone = backbone
        self.click_embedding = click_embedding
        self.click_channels = click_channels if click_embedding else 0
        d = backbone.width
        head_in = d + self.click_channels
        if click_embedding:
            self.click_convs = nn.ModuleList(
                [nn.Conv2d(1, click_channels, 3, padding=1) for _ in STRIDES])
        tower = []
        for cin in (head_in, 64):
            tower += [nn.Conv2d(cin, 64, 3, padding=1), ChannelNorm(64),
                      nn.ReLU(inplace=True)]
        self.tower = nn.Sequential(*tower)
        self.obj_head = nn.Conv2d(64, 1, 3, padding=1)
        self.box_head = nn.Conv2d(64, 4, 3, padding=1)
        self.kernel_head = nn.Conv2d(64, KERNEL_PARAMS, 3, padding=1)
        self.mask_tower = nn.Sequential(
            nn.Conv2d(head_in, 32, 3, padding=1), ChannelNorm(32), nn.ReLU(inplace=True),
            nn.Conv2d(32, 16, 3, padding=1), ChannelNorm(16), nn.ReLU(inplace=True),
            nn.Conv2d(16, MASK_CHANNELS, 1))
        self.reset_parameters(seed)

    def reset_parameters(self, seed: int) -> None:
        gen = torch.Generator().manual_seed(seed)
        for m in self.modules():
            if isinstance(m, nn.Conv2d):
                fan_in = m.in_channels * m.kernel_size[0] * m.kernel_size[1]
                std = (2.0 / fan_in) ** 0.5
                with torch.no_grad():
                    m.weight.copy_(torch.randn(m.weight.shape, generator=gen) * std)
                    if m.bias is not None:
                        m.bias.zero_()
        # rare-positive prior on objectness
        with torch.no_grad():
            self.obj_head.bias.fill_(-3.0)

    # ------------------------------------------------------------ embedding

    def click_features(self, click_maps: list[torch.Tensor]) -> list[torch.Tensor]:
        """Project per-level click maps ([B, 1, h, w]) to click channels."""
        return [conv(m) for conv, m in zip(self.click_convs, click_maps)]

    def embed_clicks(self, pyramid: FeaturePyramid, clicks: ClickSet) -> ClickedPyramid:
        """Concatenate projected click maps onto a single-image pyramid."""
        if not self.click_embedding:
            return ClickedPyramid(levels=list(pyramid.levels))
        maps = rasterize_clicks(clicks, pyramid_shapes(pyramid))
        out = []
        with torch.no_grad():
            for (stride, feat), conv, m in zip(pyramid.levels, self.click_convs, maps):
                cm = torch.from_numpy(m)[None, None]
                out.append((stride, torch.cat([feat, conv(cm)[0]], dim=0)))
        return ClickedPyramid(levels=out)

    # -------------------------------------------------------------- forward

    def head_outputs(self, embedded: list[torch.Tensor]):
        """Run detection heads on click-embedded batched levels.

        Returns (obj_logits, box_params, kernels) lists plus stride-4 mask
        features; box distances are softplus(raw) * stride.
        """
        obj, box, kern = [], [], []
        for level, feat in enumerate(embedded):
            t = self.tower(feat)
            obj.append(self.obj_head(t))
            raw = self.box_head(t)
            box.append(F.softplus(raw) * STRIDES[level])
            kern.append(self.kernel_head(t))
        mask_feats = self.mask_tower(embedded[0])
        return obj, box, kern, mask_feats

    def training_forward(self, images: torch.Tensor,
                         click_maps: list[torch.Tensor] | None):
        """Batched forward for training; images [B, 3, H, W] /32-divisible."""
        feats = self.backbone(images)
        if self.click_embedding:
            if click_maps is None:
                raise ValueError("click_embedding model needs click maps")
            clicks = self.click_features(click_maps)
            embedded = [torch.cat([f, c], dim=1) for f, c in zip(feats, clicks)]
        else:
            embedded = feats
        return self.head_outputs(embedded)

    # ------------------------------------------------------------ inference

    @torch.no_grad()
    def _single_image_outputs(self, pyramid: FeaturePyramid, clicks: ClickSet):
        levels = [f[None] for _, f in pyramid.levels]
        if self.click_embedding:
            maps = rasterize_clicks(clicks, pyramid_shapes(pyramid))
            cms = [torch.from_numpy(m)[None, None] for m in maps]
            click_feats = self.click_features(cms)
            embedded = [torch.cat([f, c], dim=1) for f, c in zip(levels, click_feats)]
        else:
            embedded = levels
        return self.head_outputs(embedded)

    @torch.no_grad()
    def detect(self, pyramid: FeaturePyramid, clicks: ClickSet) -> list[Detection | None]:
        """Best click-overlapping box per click; None when no box contains it."""
        if len(clicks) == 0:
            return []
        self.eval()
        obj, box, kern, _ = self._single_image_outputs(pyramid, clicks)
        per_level = []
        for li, (stride, _) in enumerate(pyramid.levels):
            scores = torch.sigmoid(obj[li][0, 0])
            h, w = scores.shape
            rr, cc = torch.meshgrid(torch.arange(h), torch.arange(w), indexing="ij")
            cx = (cc.float() + 0.5) * stride
            cy = (rr.float() + 0.5) * stride
            l, t, r, b = box[li][0]
            boxes = torch.stack([cx - l, cy - t, cx + r, cy + b], dim=0)
            per_level.append((scores, boxes))

        out: list[Detection | None] = []
        for x, y in clicks:
            best = None
            for li, (scores, boxes) in enumerate(per_level):
                contains = ((boxes[0] <= x) & (x <= boxes[2]) &
                            (boxes[1] <= y) & (y <= boxes[3]))
                if not contains.any():
                    continue
                masked = torch.where(contains, scores, torch.zeros_like(scores) - 1)
                idx = int(masked.argmax())
                r_, c_ = divmod(idx, scores.shape[1])
                score = float(scores[r_, c_])
                if best is None or score > best[0]:
                    bx = tuple(float(v) for v in boxes[:, r_, c_])
                    best = (score, bx, li, (r_, c_))
            if best is None:
                out.append(None)
            else:
                score, bx, li, cell = best
                kernel = kern[li][0, :, cell[0], cell[1]].clone()
                out.append(Detection(box=bx, score=score, kernel=kernel,
                                     level_index=li, cell=cell, click=(x, y)))
        return out

    @torch.no_grad()
    def detect_all(self, pyramid: FeaturePyramid, score_thresh: float = 0.3,
                   max_det: int = 100, nms_iou: float = 0.6) -> list[Detection]:
        """All confident boxes (no click filter); used by the no-click baseline."""
        self.eval()
        obj, box, kern, _ = self._single_image_outputs(pyramid, ClickSet([]))
        cands = []
        for li, (stride, _) in enumerate(pyramid.levels):
            scores = torch.sigmoid(obj[li][0, 0])
            h, w = scores.shape
            for idx in torch.nonzero(scores >= score_thresh):
                r_, c_ = int(idx[0]), int(idx[1])
                cx, cy = (c_ + 0.5) * stride, (r_ + 0.5) * stride
                l, t, rr, bb = (float(v) for v in box[li][0, :, r_, c_])
                cands.append((float(scores[r_, c_]),
                              (cx - l, cy - t, cx + rr, cy + bb), li, (r_, c_)))
        cands.sort(key=lambda c: -c[0])
        kept: list[Detection] = []
        from .masks import boxes_iou
        for score, bx, li, cell in cands:
            if len(kept) >= max_det:
                break
            if any(boxes_iou(bx, k.box) > nms_iou for k in kept):
                continue
            kernel = kern[li][0, :, cell[0], cell[1]].clone()
            kept.append(Detection(box=bx, score=score, kernel=kernel,
                                  level_index=li, cell=cell))
        return kept

    @torch.no_grad()
    def segment(self, pyramid: FeaturePyramid,
                detections: list[Detection | None]) -> list[InstanceMask | None]:
        """Dynamic-kernel mask per detection, thresholded at 0.5 and upsampled.

        A result is None when its detection is None, the thresholded mask is
        empty, or (for click detections) the mask misses its source click.
        """
        self.eval()
        live = [d for d in detections if d is not None]
        if not live:
            return [None] * len(detections)
        levels = [f[None] for _, f in pyramid.levels]
        if self.click_embedding:
            clicks = ClickSet([d.click for d in live if d.click is not None])
            maps = rasterize_clicks(clicks, pyramid_shapes(pyramid))
            cms = [torch.from_numpy(m)[None, None] for m in maps]
            click_feats = self.click_features(cms)
            embedded = [torch.cat([f, c], dim=1) for f, c in zip(levels, click_feats)]
        else:
            embedded = levels
        mask_feats = self.mask_tower(embedded[0])[0]
        h, w = pyramid.image_size

        out: list[InstanceMask | None] = []
        for det in detections:
            if det is None:
                out.append(None)
                continue
            logits = dynamic_mask_logits(mask_feats, det.kernel, det.cell,
                                         STRIDES[det.level_index])
            full = F.interpolate(logits[None, None], scale_factor=4,
                                 mode="bilinear", align_corners=False)[0, 0]
            prob_full = torch.sigmoid(full)
            mask = (prob_full[:h, :w] >= MASK_THRESHOLD).numpy()
            if det.click is not None and not point_in_mask(mask, *det.click):
                out.append(None)
                continue
            if not mask.any():
                out.append(None)
                continue
            out.append(InstanceMask(mask=mask, score=det.score,
                                    source_click=det.click or (-1, -1), box=det.box))
        return out

    @torch.no_grad()
    def segment_clicks(self, pyramid: FeaturePyramid,
                       clicks: ClickSet) -> list[InstanceMask | None]:
        return self.segment(pyramid, self.detect(pyramid, clicks))


def dynamic_mask_logits(mask_feats: torch.Tensor, kernel: torch.Tensor,
                        cell: tuple[int, int], stride: int) -> torch.Tensor:
    """Apply a 97-parameter dynamic head at stride 4; returns logits.

    mask_feats: [MASK_CHANNELS, h, w]; rel-coord channels are centered on the
    detection cell's image-space center.
    """
    c = MASK_CHANNELS
    mh, mw = mask_feats.shape[1:]
    cy = (cell[0] + 0.5) * stride
    cx = (cell[1] + 0.5) * stride
    ys = (torch.arange(mh).float() + 0.5) * 4.0
    xs = (torch.arange(mw).float() + 0.5) * 4.0
    rel_y = ((ys - cy) / REL_COORD_SCALE)[:, None].expand(mh, mw)
    rel_x = ((xs - cx) / REL_COORD_SCALE)[None, :].expand(mh, mw)
    x = torch.cat([mask_feats, rel_x[None], rel_y[None]], dim=0)

    i = 0
    w1 = kernel[i: i + (c + 2) * c].reshape(c, c + 2); i += (c + 2) * c
    b1 = kernel[i: i + c]; i += c
    w2 = kernel[i: i + c]; i += c
    b2 = kernel[i]
    hdn = F.relu(torch.einsum("oc,chw->ohw", w1, x) + b1[:, None, None])
    return torch.einsum("c,chw->hw", w2, hdn) + b2


def dynamic_mask_probs(mask_feats: torch.Tensor, kernel: torch.Tensor,
                       cell: tuple[int, int], stride: int) -> torch.Tensor:
    return torch.sigmoid(dynamic_mask_logits(mask_feats, kernel, cell, stride))


# ------------------------------------------------------------------ losses

def dice_loss(p: torch.Tensor, g: torch.Tensor, eps: float = 1e-6) -> torch.Tensor:
    """1 - 2*sum(pg) / (sum(p^2) + sum(g^2) + eps); p, g in [0, 1]."""
    num = 2.0 * (p * g).sum()
    den = (p * p).sum() + (g * g).sum() + eps
    return 1.0 - num / den


def focal_objectness_loss(logits: torch.Tensor, targets: torch.Tensor,
                          alpha: float = 0.25, gamma: float = 2.0) -> torch.Tensor:
    """Sigmoid focal loss normalized by the positive count (min 1)."""
    p = torch.sigmoid(logits)
    ce = F.binary_cross_entropy_with_logits(logits, targets, reduction="none")
    p_t = p * targets + (1 - p) * (1 - targets)
    alpha_t = alpha * targets + (1 - alpha) * (1 - targets)
    loss = alpha_t * (1 - p_t) ** gamma * ce
    n_pos = targets.sum().clamp(min=1.0)
    return loss.sum() / n_pos


def iou_box_loss(pred: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
    """Mean (1 - IoU) over positive locations; inputs are (l, t, r, b) > 0."""
    pl, pt, pr, pb = pred.unbind(dim=-1)
    tl, tt, tr, tb = target.unbind(dim=-1)
    inter_w = torch.min(pl, tl) + torch.min(pr, tr)
    inter_h = torch.min(pt, tt) + torch.min(pb, tb)
    inter = inter_w.clamp(min=0) * inter_h.clamp(min=0)
    area_p = (pl + pr) * (pt + pb)
    area_t = (tl + tr) * (tt + tb)
    union = area_p + area_t - inter
    iou = inter / union.clamp(min=1e-9)
    return (1.0 - iou).mean()


@dataclass
class DsnTargets:
    """Per-level assignment plus per-instance mask supervision points."""

    obj: list[torch.Tensor]          # [B, 1, h, w] binary
    box: list[torch.Tensor]          # [B, 4, h, w] l, t, r, b (positives only)
    positives: list[torch.Tensor]    # [B, 1, h, w] bool
    # (batch, level, row, col, instance_key); <= cap per instance
    mask_points: list[tuple[int, int, int, int, tuple[int, int]]]
    gt_masks: dict[tuple[int, int], torch.Tensor]  # stride-4 soft targets


def build_targets(batch_instances: list[list[np.ndarray]],
                  image_size: tuple[int, int],
                  points_per_instance: int = 4) -> DsnTargets:
    """FCOS-style assignment for a batch of scenes.

    batch_instances[b] is the list of GT masks chosen for scene b. A level
    location is positive when it falls inside an instance box and the max
    regression distance fits the level's scale range; conflicts go to the
    smaller box.
    """
    h, w = image_size
    shapes = [(s, (h // s, w // s)) for s in STRIDES]
    bsz = len(batch_instances)
    obj = [torch.zeros(bsz, 1, lh, lw) for _, (lh, lw) in shapes]
    boxt = [torch.zeros(bsz, 4, lh, lw) for _, (lh, lw) in shapes]
    pos = [torch.zeros(bsz, 1, lh, lw, dtype=torch.bool) for _, (lh, lw) in shapes]
    mask_points: list[tuple[int, int, int, int, tuple[int, int]]] = []
    gt_masks: dict[tuple[int, int], torch.Tensor] = {}

    for b, instances in enumerate(batch_instances):
        boxes = []
        for mi, m in enumerate(instances):
            x0, y0, x1, y1 = mask_bbox(m)
            boxes.append((x0, y0, x1 + 1.0, y1 + 1.0, (x1 + 1.0 - x0) * (y1 + 1.0 - y0), mi))
            gt_masks[(b, mi)] = torch.from_numpy(m.astype(np.float32))
        for li, (stride, (lh, lw)) in enumerate(shapes):
            lo, hi = LEVEL_RANGES[li]
            rr, cc = np.mgrid[0:lh, 0:lw]
            cx = (cc + 0.5) * stride
            cy = (rr + 0.5) * stride
            best_area = np.full((lh, lw), np.inf)
            assigned = np.full((lh, lw), -1, dtype=int)
            ltrb = np.zeros((4, lh, lw), dtype=np.float32)
            for (x0, y0, x1, y1, area, mi) in boxes:
                l = cx - x0
                t = cy - y0
                r = x1 - cx
                btm = y1 - cy
                inside = (l > 0) & (t > 0) & (r > 0) & (btm > 0)
                mx = np.maximum(np.maximum(l, r), np.maximum(t, btm))
                fits = inside & (mx > lo) & (mx <= hi) & (area < best_area)
                if not fits.any():
                    continue
                best_area = np.where(fits, area, best_area)
                assigned = np.where(fits, mi, assigned)
                for k, v in enumerate((l, t, r, btm)):
                    ltrb[k] = np.where(fits, v, ltrb[k])
            level_pos = assigned >= 0
            obj[li][b, 0] = torch.from_numpy(level_pos.astype(np.float32))
            boxt[li][b] = torch.from_numpy(ltrb)
            pos[li][b, 0] = torch.from_numpy(level_pos)
            # nearest-to-center positives supervise the mask head
            for (x0, y0, x1, y1, area, mi) in boxes:
                ys, xs = np.nonzero(assigned == mi)
                if ys.size == 0:
                    continue
                bcx, bcy = (x0 + x1) / 2, (y0 + y1) / 2
                d = np.hypot((xs + 0.5) * stride - bcx, (ys + 0.5) * stride - bcy)
                order = np.argsort(d, kind="stable")[:points_per_instance]
                for oi in order:
                    mask_points.append((b, li, int(ys[oi]), int(xs[oi]), (b, mi)))
    return DsnTargets(obj=obj, box=boxt, positives=pos,
                      mask_points=mask_points, gt_masks=gt_masks)


def training_loss(outputs, targets: DsnTargets) -> dict[str, torch.Tensor]:
    """Focal objectness + IoU box + DICE mask losses; raises on non-finite."""
    obj_out, box_out, kern_out, mask_feats = outputs
    obj_logits = torch.cat([o.flatten() for o in obj_out])
    obj_targets = torch.cat([t.flatten() for t in targets.obj])
    l_obj = focal_objectness_loss(obj_logits, obj_targets)

    pred_boxes, target_boxes = [], []
    for li in range(len(obj_out)):
        p = targets.positives[li]
        if p.any():
            sel = p.expand_as(box_out[li])
            pred_boxes.append(box_out[li].permute(0, 2, 3, 1)[p[:, 0]])
            target_boxes.append(targets.box[li].permute(0, 2, 3, 1)[p[:, 0]])
    if pred_boxes:
        l_box = iou_box_loss(torch.cat(pred_boxes), torch.cat(target_boxes))
    else:
        l_box = obj_logits.sum() * 0.0

    dice_terms = []
    for (b, li, r, c, key) in targets.mask_points:
        kernel = kern_out[li][b, :, r, c]
        logits = dynamic_mask_logits(mask_feats[b], kernel, (r, c), STRIDES[li])
        # supervise at full resolution through the same bilinear upsampling
        # the inference path applies, so sub-cell boundaries are learnable
        full = F.interpolate(logits[None, None], scale_factor=4,
                             mode="bilinear", align_corners=False)[0, 0]
        gt = targets.gt_masks[key]
        prob = torch.sigmoid(full[: gt.shape[0], : gt.shape[1]])
        dice_terms.append(dice_loss(prob, gt))
    l_mask = torch.stack(dice_terms).mean() if dice_terms else obj_logits.sum() * 0.0

    total = l_obj + l_box + l_mask
    components = {"objectness": l_obj, "box": l_box, "mask": l_mask, "total": total}
    for name, v in components.items():
        if not torch.isfinite(v):
            raise RuntimeError(
                f"non-finite loss component {name}: "
                + ", ".join(f"{k}={float(v2):.4g}" for k, v2 in components.items()))
    return components


# ------------------------------------------------------------ click sampling

def randomized_click(mask: np.ndarray, r: float, rng: np.random.Generator) -> tuple[int, int]:
    """Uniform click over {d >= (1 - r) * d_max} of the mask's distance map."""
    if not 0.0 <= r <= 1.0:
        raise ValueError(f"randomness must be in [0, 1], got {r}")
    dm = distance_map(mask)
    d_max = dm.max()
    if d_max <= 0:
        raise ValueError("mask is empty")
    ys, xs = np.nonzero((dm >= (1.0 - r) * d_max) & mask)
    i = int(rng.integers(0, len(ys)))
    return int(xs[i]), int(ys[i])


def sample_training_clicks(mask: np.ndarray, rng: np.random.Generator,
                           n: int, center_bias: float = 0.7) -> ClickSet:
    """n center-biased clicks: uniform over {d >= center_bias * d_max}."""
    if not 1 <= n <= 5:
        raise ValueError(f"n must be in [1, 5], got {n}")
    dm = distance_map(mask)
    d_max = dm.max()
    if d_max <= 0:
        raise ValueError("mask is empty")
    ys, xs = np.nonzero((dm >= center_bias * d_max) & mask)
    idx = rng.integers(0, len(ys), size=n)
    return ClickSet([(int(xs[i]), int(ys[i])) for i in idx])
