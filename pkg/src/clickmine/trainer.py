"""Three-stage training: the click segmenter (with its backbone) first, then
the proposal network and the verifier against the frozen pyramid.

Training is deterministic for a fixed (config, seed): data order comes from a
dedicated numpy generator, torch is seeded once per run, and metrics are
logged per epoch as line-delimited JSON.
"""

from __future__ import annotations

import hashlib
import json
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch

from .backbone import image_to_tensor
from .clickseg import (
    ClickSet,
    OneClickSegmenter,
    build_targets,
    rasterize_clicks,
    sample_training_clicks,
    training_loss,
)
from .cpn import ClickProposalNetwork, focal_heatmap_loss, gt_heatmap
from .masks import mask_iou
from .pipeline import Stack, build_stack, load_stack, save_stage, stage_path
from .pvm import ProposalVerifier, make_triplet, pvm_loss
from .synthgen import load_manifest, load_scene

STAGE_DEFAULT_LR = {"dsn": 0.01, "cpn": 0.002, "pvm": 0.01}
GRAD_CLIP_NORM = 5.0


@dataclass
class TrainConfig:
    stage: str
    manifest: str
    out_dir: str
    epochs: int = 8
    learning_rate: float | None = None  # stage default when None
    lr_decay_epochs: tuple[int, ...] = ()
    batch_size: int = 4
    seed: int = 0
    momentum: float = 0.9
    click_embedding: bool = True
    instance_fraction: float = 0.5
    limit_scenes: int | None = None
    width: int = 32
    dsn_checkpoint: str | None = None  # defaults to out_dir/dsn.ckpt
    cpn_kwargs: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.stage not in ("dsn", "cpn", "pvm"):
            raise ValueError(f"unknown stage {self.stage!r}")
        if self.epochs <= 0 or self.batch_size <= 0:
            raise ValueError("epochs and batch_size must be positive")

    @property
    def lr(self) -> float:
        return (self.learning_rate if self.learning_rate is not None
                else STAGE_DEFAULT_LR[self.stage])

    def config_hash(self) -> str:
        doc = json.dumps(asdict(self), sort_keys=True, default=str)
        return hashlib.sha256(doc.encode()).hexdigest()[:16]


@dataclass
class TrainResult:
    checkpoint: Path
    metrics_log: Path
    history: list[dict]


@dataclass
class SceneSample:
    image: np.ndarray
    masks: list[np.ndarray]
    groups: list[int]


def load_training_scenes(manifest_path: str | Path,
                         limit: int | None = None) -> list[SceneSample]:
    manifest = load_manifest(manifest_path)
    root = Path(manifest_path).parent
    n = len(manifest["scenes"])
    if limit is not None:
        n = min(n, limit)
    out = []
    for i in range(n):
        scene = load_scene(manifest, i, root)
        out.append(SceneSample(image=scene.image,
                               masks=[inst.mask for inst in scene.instances],
                               groups=[inst.group_id for inst in scene.instances]))
    return out


def _epoch_lr(config: TrainConfig, epoch: int) -> float:
    lr = config.lr
    for decay in config.lr_decay_epochs:
        if epoch >= decay:
            lr *= 0.1
    return lr


def _write_log(path: Path, history: list[dict]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        for rec in history:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")


# --------------------------------------------------------------- DSN stage

def dsn_batch_step(model: OneClickSegmenter, batch: list[SceneSample],
                   rng: np.random.Generator, instance_fraction: float = 0.5):
    """One forward/loss over a batch of same-size scenes.

    Per scene at most `instance_fraction` of the instances are selected (at
    least one), each gets 1-5 center-biased clicks, and only the selected
    instances are positives. The no-click variant trains on every instance.
    """
    h, w = batch[0].image.shape[:2]
    images = torch.stack([image_to_tensor(s.image) for s in batch])
    chosen_masks = []
    click_maps = None
    if model.click_embedding:
        shapes = [(s, (h // s, w // s)) for s in (4, 8, 16, 32)]
        per_level = [[] for _ in shapes]
        for sample in batch:
            n = len(sample.masks)
            k = max(1, int(np.floor(n * instance_fraction))) if n else 0
            idx = rng.choice(n, size=k, replace=False) if n else []
            picked = [sample.masks[i] for i in idx]
            clicks = []
            for m in picked:
                n_clicks = int(rng.integers(1, 6))
                clicks.extend(sample_training_clicks(m, rng, n_clicks))
            maps = rasterize_clicks(ClickSet(clicks), shapes)
            for li, m in enumerate(maps):
                per_level[li].append(torch.from_numpy(m)[None])
            chosen_masks.append(picked)
        click_maps = [torch.stack(level) for level in per_level]
    else:
        for sample in batch:
            chosen_masks.append(list(sample.masks))
        rng.random()  # keep the rng stream aligned across variants

    targets = build_targets(chosen_masks, (h, w))
    outputs = model.training_forward(images, click_maps)
    return training_loss(outputs, targets)


def train_dsn(config: TrainConfig, scenes: list[SceneSample]) -> tuple[OneClickSegmenter, list[dict]]:
    torch.manual_seed(config.seed)
    stack = build_stack(width=config.width, seed=config.seed,
                        click_embedding=config.click_embedding)
    model = stack.segmenter
    rng = np.random.default_rng(config.seed)
    opt = torch.optim.SGD(model.parameters(), lr=config.lr,
                          momentum=config.momentum)
    history = []
    order = np.arange(len(scenes))
    for epoch in range(config.epochs):
        lr = _epoch_lr(config, epoch)
        for g in opt.param_groups:
            g["lr"] = lr
        rng.shuffle(order)
        losses = []
        comps_sum: dict[str, float] = {}
        for start in range(0, len(order), config.batch_size):
            batch = [scenes[i] for i in order[start: start + config.batch_size]]
            comps = dsn_batch_step(model, batch, rng, config.instance_fraction)
            opt.zero_grad()
            comps["total"].backward()
            torch.nn.utils.clip_grad_norm_(model.parameters(), GRAD_CLIP_NORM)
            opt.step()
            losses.append(float(comps["total"].detach()))
            for k, v in comps.items():
                comps_sum[k] = comps_sum.get(k, 0.0) + float(v.detach())
        n_batches = max(1, len(losses))
        rec = {"stage": "dsn", "epoch": epoch, "lr": lr,
               "mean_loss": float(np.mean(losses)) if losses else 0.0}
        rec.update({f"mean_{k}": v / n_batches for k, v in comps_sum.items()})
        history.append(rec)
    return model, history


# --------------------------------------------------------------- CPN stage

def cpn_scene_loss(cpn: ClickProposalNetwork, stack: Stack, sample: SceneSample,
                   rng: np.random.Generator, pyramid=None):
    """Focal heatmap loss for one randomly chosen group of one scene."""
    if pyramid is None:
        pyramid = stack.backbone.extract(sample.image)
    groups: dict[int, list[int]] = {}
    for i, g in enumerate(sample.groups):
        groups.setdefault(g, []).append(i)
    gids = sorted(groups)
    gid = gids[int(rng.integers(0, len(gids)))]
    members = groups[gid]
    query_idx = members[int(rng.integers(0, len(members)))]
    query_mask = sample.masks[query_idx]
    group_masks = [sample.masks[i] for i in members]

    logits = cpn.predict_heatmap_logits(pyramid, query_mask)
    target = torch.from_numpy(
        gt_heatmap(group_masks, tuple(logits.shape)).astype(np.float32))
    pred = torch.sigmoid(logits)
    return focal_heatmap_loss(pred, target)


def train_cpn(config: TrainConfig, scenes: list[SceneSample],
              stack: Stack) -> tuple[ClickProposalNetwork, list[dict]]:
    torch.manual_seed(config.seed)
    cpn = ClickProposalNetwork(feature_width=config.width,
                               seed=config.seed + 2, **config.cpn_kwargs)
    rng = np.random.default_rng(config.seed)
    opt = torch.optim.SGD(cpn.parameters(), lr=config.lr,
                          momentum=config.momentum)
    pyramids = [stack.backbone.extract(s.image) for s in scenes]
    history = []
    order = np.arange(len(scenes))
    for epoch in range(config.epochs):
        lr = _epoch_lr(config, epoch)
        for g in opt.param_groups:
            g["lr"] = lr
        rng.shuffle(order)
        losses = []
        for start in range(0, len(order), config.batch_size):
            idxs = order[start: start + config.batch_size]
            batch_losses = [cpn_scene_loss(cpn, stack, scenes[i], rng, pyramids[i])
                            for i in idxs]
            loss = torch.stack(batch_losses).mean()
            if not torch.isfinite(loss):
                raise RuntimeError("non-finite CPN loss")
            opt.zero_grad()
            loss.backward()
            torch.nn.utils.clip_grad_norm_(cpn.parameters(), GRAD_CLIP_NORM)
            opt.step()
            losses.append(float(loss.detach()))
        history.append({"stage": "cpn", "epoch": epoch, "lr": lr,
                        "mean_loss": float(np.mean(losses)) if losses else 0.0})
    return cpn, history


# --------------------------------------------------------------- PVM stage

def sample_pairs(sample: SceneSample, rng: np.random.Generator,
                 max_pairs: int = 8) -> list[tuple[int, int, int]]:
    """(i, j, label) index pairs within one scene, positives = same group."""
    groups: dict[int, list[int]] = {}
    for i, g in enumerate(sample.groups):
        groups.setdefault(g, []).append(i)
    positives = []
    for members in groups.values():
        if len(members) >= 2:
            for a in range(len(members)):
                for b in range(a + 1, len(members)):
                    positives.append((members[a], members[b], 1))
    negatives = []
    gids = sorted(groups)
    for gi in range(len(gids)):
        for gj in range(gi + 1, len(gids)):
            for a in groups[gids[gi]]:
                for b in groups[gids[gj]]:
                    negatives.append((a, b, 0))
    rng.shuffle(positives)
    rng.shuffle(negatives)
    half = max_pairs // 2
    pairs = positives[:half] + negatives[:half]
    rng.shuffle(pairs)
    return pairs


def pvm_scene_loss(verifier: ProposalVerifier, stack: Stack, sample: SceneSample,
                   rng: np.random.Generator, pyramid=None):
    if pyramid is None:
        pyramid = stack.backbone.extract(sample.image)
    pairs = sample_pairs(sample, rng)
    if not pairs:
        return None
    triplets, labels = [], []
    for i, j, y in pairs:
        triplets.append(make_triplet(sample.image, pyramid, sample.masks[i]))
        triplets.append(make_triplet(sample.image, pyramid, sample.masks[j]))
        labels.append(float(y))
    z = verifier.embed_batch(triplets)
    z_a, z_b = z[0::2], z[1::2]
    return pvm_loss(z_a, z_b, torch.tensor(labels), verifier)["total"]


def train_pvm(config: TrainConfig, scenes: list[SceneSample],
              stack: Stack) -> tuple[ProposalVerifier, list[dict]]:
    torch.manual_seed(config.seed)
    verifier = ProposalVerifier(feature_width=config.width, seed=config.seed + 3)
    rng = np.random.default_rng(config.seed)
    opt = torch.optim.SGD(verifier.parameters(), lr=config.lr,
                          momentum=config.momentum)
    pyramids = [stack.backbone.extract(s.image) for s in scenes]
    history = []
    order = np.arange(len(scenes))
    for epoch in range(config.epochs):
        lr = _epoch_lr(config, epoch)
        for g in opt.param_groups:
            g["lr"] = lr
        rng.shuffle(order)
        losses = []
        for start in range(0, len(order), config.batch_size):
            idxs = order[start: start + config.batch_size]
            batch_losses = [pvm_scene_loss(verifier, stack, scenes[i], rng, pyramids[i])
                            for i in idxs]
            batch_losses = [l for l in batch_losses if l is not None]
            if not batch_losses:
                continue
            loss = torch.stack(batch_losses).mean()
            opt.zero_grad()
            loss.backward()
            torch.nn.utils.clip_grad_norm_(verifier.parameters(), GRAD_CLIP_NORM)
            opt.step()
            losses.append(float(loss.detach()))
        history.append({"stage": "pvm", "epoch": epoch, "lr": lr,
                        "mean_loss": float(np.mean(losses)) if losses else 0.0})
    return verifier, history


# ------------------------------------------------------------- entry point

def train_stage(config: TrainConfig) -> TrainResult:
    """Train one stage; cpn/pvm require the dsn checkpoint and freeze it."""
    out_dir = Path(config.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    scenes = load_training_scenes(config.manifest, config.limit_scenes)
    if not scenes:
        raise ValueError(f"no scenes in manifest {config.manifest}")
    t0 = time.time()

    if config.stage == "dsn":
        model, history = train_dsn(config, scenes)
        module = model
    else:
        dsn_path = Path(config.dsn_checkpoint or stage_path(out_dir, "dsn"))
        if not dsn_path.exists():
            raise FileNotFoundError(
                f"stage '{config.stage}' requires the dsn checkpoint: {dsn_path}")
        stack = build_stack(width=config.width)
        from .checkpoint import load_module
        load_module(dsn_path, stack.segmenter)
        for p in stack.segmenter.parameters():
            p.requires_grad_(False)
        stack.segmenter.eval()
        if config.stage == "cpn":
            module, history = train_cpn(config, scenes, stack)
        else:
            module, history = train_pvm(config, scenes, stack)

    meta = {"stage": config.stage, "config_hash": config.config_hash(),
            "epochs": config.epochs, "train_time_s": time.time() - t0}
    ckpt = save_stage(out_dir, config.stage, module, meta)
    log_path = out_dir / f"{config.stage}_metrics.jsonl"
    _write_log(log_path, history)
    return TrainResult(checkpoint=ckpt, metrics_log=log_path, history=history)


# ---------------------------------------------------------- overfit smokes

def overfit_dsn(scenes: list[SceneSample], steps: int = 300, lr: float = 0.05,
                seed: int = 0, width: int = 32) -> tuple[Stack, float]:
    """Memorize one small batch; returns (stack, batch mask IoU).

    IoU is the mean over instances of the predicted mask against its GT,
    clicking each instance at its distance-map peak.
    """
    torch.manual_seed(seed)
    stack = build_stack(width=width, seed=seed)
    model = stack.segmenter
    opt = torch.optim.SGD(model.parameters(), lr=lr, momentum=0.9)
    rng = np.random.default_rng(seed)
    for step in range(steps):
        comps = dsn_batch_step(model, scenes, rng, instance_fraction=1.0)
        opt.zero_grad()
        comps["total"].backward()
        torch.nn.utils.clip_grad_norm_(model.parameters(), GRAD_CLIP_NORM)
        opt.step()

    from .evalsuite.protocols import peak_click
    model.eval()
    ious = []
    for sample in scenes:
        pyramid = stack.backbone.extract(sample.image)
        for gt in sample.masks:
            click = peak_click(gt)
            results = model.segment_clicks(pyramid, ClickSet([click]))
            pred = results[0].mask if results and results[0] is not None else None
            ious.append(mask_iou(pred, gt) if pred is not None else 0.0)
    return stack, float(np.mean(ious)) if ious else 0.0


def overfit_cpn(scenes: list[SceneSample], stack: Stack, steps: int = 300,
                lr: float = 0.01, seed: int = 0, width: int = 32):
    """Memorize the group heatmaps of one batch; returns (cpn, auc_pr)."""
    torch.manual_seed(seed)
    cpn = ClickProposalNetwork(feature_width=width, seed=seed + 2)
    opt = torch.optim.SGD(cpn.parameters(), lr=lr, momentum=0.9)
    rng = np.random.default_rng(seed)
    pyramids = [stack.backbone.extract(s.image) for s in scenes]
    for step in range(steps):
        losses = [cpn_scene_loss(cpn, stack, s, rng, p)
                  for s, p in zip(scenes, pyramids)]
        loss = torch.stack(losses).mean()
        opt.zero_grad()
        loss.backward()
        torch.nn.utils.clip_grad_norm_(cpn.parameters(), GRAD_CLIP_NORM)
        opt.step()

    from .evalsuite.metrics import heatmap_auc_pr
    cpn.eval()
    samples = []
    for sample, pyramid in zip(scenes, pyramids):
        groups: dict[int, list[int]] = {}
        for i, g in enumerate(sample.groups):
            groups.setdefault(g, []).append(i)
        for gid in sorted(groups):
            masks = [sample.masks[i] for i in groups[gid]]
            hm = cpn.predict_heatmap(pyramid, masks[0])
            samples.append((hm, masks))
    return cpn, heatmap_auc_pr(samples).auc


def overfit_pvm(scenes: list[SceneSample], stack: Stack, steps: int = 300,
                lr: float = 0.02, seed: int = 0, width: int = 32):
    """Memorize pair labels of one batch; returns (verifier, pair accuracy)."""
    torch.manual_seed(seed)
    verifier = ProposalVerifier(feature_width=width, seed=seed + 3)
    opt = torch.optim.SGD(verifier.parameters(), lr=lr, momentum=0.9)
    rng = np.random.default_rng(seed)
    pyramids = [stack.backbone.extract(s.image) for s in scenes]
    for step in range(steps):
        losses = [pvm_scene_loss(verifier, stack, s, rng, p)
                  for s, p in zip(scenes, pyramids)]
        losses = [l for l in losses if l is not None]
        loss = torch.stack(losses).mean()
        opt.zero_grad()
        loss.backward()
        torch.nn.utils.clip_grad_norm_(verifier.parameters(), GRAD_CLIP_NORM)
        opt.step()

    verifier.eval()
    correct = total = 0
    eval_rng = np.random.default_rng(seed + 500)
    for sample, pyramid in zip(scenes, pyramids):
        for i, j, y in sample_pairs(sample, eval_rng, max_pairs=16):
            z_i = verifier.embed(make_triplet(sample.image, pyramid, sample.masks[i]))
            z_j = verifier.embed(make_triplet(sample.image, pyramid, sample.masks[j]))
            pred = verifier.similarity(z_i, z_j) >= 0.5
            correct += int(pred == bool(y))
            total += 1
    return verifier, correct / total if total else 0.0
