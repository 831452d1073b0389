"""Dataset generation and manifest I/O.

A dataset is a directory of PNG images plus one JSON manifest. Instance and
region masks are stored either inline as run-length encodings (default) or
as 8-bit PNG rasters next to the images; the manifest declares which.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from ..masks import rle_decode, rle_encode
from .background import StuffRegion
from .library import build_library
from .scene import SceneConfig, SceneInstance, SyntheticScene, synthesize_scene

MANIFEST_VERSION = 1
MANIFEST_NAME = "manifest.json"


@dataclass
class DatasetConfig:
    scene: SceneConfig = field(default_factory=SceneConfig)
    mask_format: str = "rle"  # "rle" | "png"

    def __post_init__(self):
        if self.mask_format not in ("rle", "png"):
            raise ValueError(f"mask_format must be 'rle' or 'png', got {self.mask_format!r}")


def _save_png(path: Path, array: np.ndarray) -> None:
    try:
        Image.fromarray(array).save(path, format="PNG")
    except OSError as exc:
        raise OSError(f"failed writing {path}: {exc}") from exc


def _mask_entry(mask: np.ndarray, cfg: DatasetConfig, out_dir: Path,
                name: str) -> dict:
    if cfg.mask_format == "rle":
        return {"rle": rle_encode(mask)}
    rel = f"masks/{name}.png"
    path = out_dir / rel
    path.parent.mkdir(parents=True, exist_ok=True)
    _save_png(path, (mask.astype(np.uint8) * 255))
    return {"mask_path": rel}


def scene_records(scene: SyntheticScene, cfg: DatasetConfig, out_dir: Path,
                  index: int) -> dict:
    """Build one manifest record, writing the image (and PNG masks) to disk."""
    image_rel = f"images/{index:05d}.png"
    image_path = out_dir / image_rel
    image_path.parent.mkdir(parents=True, exist_ok=True)
    _save_png(image_path, scene.image)

    instances = []
    for j, inst in enumerate(scene.instances):
        entry = _mask_entry(inst.mask, cfg, out_dir, f"{index:05d}_inst{j:03d}")
        entry.update(group_id=inst.group_id, source=inst.source,
                     region_index=inst.region_index)
        instances.append(entry)
    regions = []
    for j, region in enumerate(scene.regions):
        entry = _mask_entry(region.mask, cfg, out_dir, f"{index:05d}_reg{j:02d}")
        entry.update(label=region.label, texture_seed=region.texture_seed)
        regions.append(entry)
    return {"image": image_rel, "seed": scene.rng_seed,
            "instances": instances, "regions": regions}


def generate_dataset(cfg: DatasetConfig, n_scenes: int, seed: int,
                     out_dir: str | Path) -> Path:
    """Generate n scenes deterministically; returns the manifest path.

    Scene i gets an integer seed drawn from a generator seeded with `seed`,
    so the whole dataset is a pure function of (cfg, n_scenes, seed).
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    scene_seeds = rng.integers(0, 2**63 - 1, size=n_scenes)
    library = build_library(cfg.scene.library_size, cfg.scene.library_seed,
                            cfg.scene.sample_radius)

    records = []
    for i in range(n_scenes):
        scene = synthesize_scene(cfg.scene, int(scene_seeds[i]), library=library)
        record = scene_records(scene, cfg, out_dir, i)
        empty_regions = sorted({j for j, _ in enumerate(scene.regions)}
                               - {inst.region_index for inst in scene.instances})
        if empty_regions:
            record["empty_regions"] = empty_regions
        records.append(record)

    manifest = {
        "version": MANIFEST_VERSION,
        "mask_format": cfg.mask_format,
        "image_size": [cfg.scene.height, cfg.scene.width],
        "seed": seed,
        "scene_config": asdict(cfg.scene),
        "scenes": records,
    }
    manifest_path = out_dir / MANIFEST_NAME
    try:
        manifest_path.write_text(json.dumps(manifest, sort_keys=True, indent=1))
    except OSError as exc:
        raise OSError(f"failed writing {manifest_path}: {exc}") from exc
    return manifest_path


def load_manifest(path: str | Path) -> dict:
    path = Path(path)
    try:
        manifest = json.loads(path.read_text())
    except OSError as exc:
        raise OSError(f"failed reading {path}: {exc}") from exc
    if manifest.get("version") != MANIFEST_VERSION:
        raise ValueError(f"unsupported manifest version {manifest.get('version')!r}")
    return manifest


def _load_mask(entry: dict, root: Path) -> np.ndarray:
    if "rle" in entry:
        return rle_decode(entry["rle"])
    return np.asarray(Image.open(root / entry["mask_path"])) > 0


def load_scene(manifest: dict, index: int, root: str | Path) -> SyntheticScene:
    """Reconstruct a scene from its manifest record."""
    root = Path(root)
    rec = manifest["scenes"][index]
    image = np.asarray(Image.open(root / rec["image"]).convert("RGB"))
    instances = [SceneInstance(_load_mask(e, root), e["group_id"], e["source"],
                               e["region_index"])
                 for e in rec["instances"]]
    regions = [StuffRegion(_load_mask(e, root), e["label"], e["texture_seed"])
               for e in rec["regions"]]
    return SyntheticScene(image=image, instances=instances, regions=regions,
                          rng_seed=rec["seed"])
