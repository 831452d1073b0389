"""Ablation grids: the 2x2 {IDS, PVM} table, proposal-network design
variants (retrained per variant), and the selection-loop hyperparameter
sweeps. Each row carries its metrics and wall-clock seconds."""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from pathlib import Path

from ..ids import IdsParams
from ..pipeline import load_stack
from ..synthgen import load_manifest, load_scene
from .protocols import evaluate_group_selection, evaluate_similarity_method


@dataclass
class AblationConfig:
    checkpoint_dir: str
    manifest: str
    max_scenes: int = 40
    sweeps: tuple[str, ...] = ("ids_pvm", "ids_hyper")
    ids_iterations: tuple[int, ...] = (1, 3, 5)
    ids_exemplars: tuple[int, ...] = (1, 3)
    ids_top_k: tuple[int, ...] = (5, 10)
    cpn_variants: tuple[dict, ...] = (
        {"level_order": (4, 8, 16), "zero_out": True, "query_size": 3},
        {"level_order": (4, 8, 16), "zero_out": False, "query_size": 3},
        {"level_order": (16, 8, 4), "zero_out": True, "query_size": 3},
        {"level_order": (4, 8, 16), "zero_out": True, "query_size": 5},
        {"level_order": (4, 8, 16), "zero_out": True, "query_size": 7},
    )
    cpn_train_epochs: int = 4
    width: int = 32
    seed: int = 0


def _load_val(config: AblationConfig):
    manifest = load_manifest(config.manifest)
    root = Path(config.manifest).parent
    n = min(config.max_scenes, len(manifest["scenes"]))
    return [load_scene(manifest, i, root) for i in range(n)]


def run_ablation(config: AblationConfig) -> dict:
    """Run the requested sweeps; returns {"tables": {...}, "runtime_s": ...}."""
    t_start = time.time()
    stack = load_stack(config.checkpoint_dir, width=config.width)
    scenes = _load_val(config)
    pyramids = [stack.backbone.extract(s.image) for s in scenes]
    models = stack.models()
    tables: dict[str, list[dict]] = {}

    if "ids_pvm" in config.sweeps:
        rows = []
        for use_ids in (False, True):
            for use_pvm in (False, True):
                t0 = time.time()
                metrics = evaluate_group_selection(models, scenes, pyramids,
                                                   use_ids=use_ids, use_pvm=use_pvm)
                rows.append({"ids": use_ids, "pvm": use_pvm,
                             "ap": metrics["all"]["ap"], "ar": metrics["all"]["ar"],
                             "per_bucket": metrics,
                             "wall_clock_s": time.time() - t0})
        tables["ids_pvm"] = rows

    if "ids_hyper" in config.sweeps:
        rows = []
        base = IdsParams()
        for n in config.ids_iterations:
            rows.append(_hyper_row(models, scenes, pyramids, "iterations", n,
                                   IdsParams(iterations=n, top_k=base.top_k,
                                             exemplar_count=base.exemplar_count)))
        for m in config.ids_exemplars:
            rows.append(_hyper_row(models, scenes, pyramids, "exemplars", m,
                                   IdsParams(exemplar_count=m)))
        for k in config.ids_top_k:
            rows.append(_hyper_row(models, scenes, pyramids, "top_k", k,
                                   IdsParams(top_k=k)))
        tables["ids_hyper"] = rows

    if "cpn" in config.sweeps:
        # design variants are separate models: retrain each before scoring
        from ..trainer import TrainConfig, load_training_scenes, train_cpn
        train_scenes = load_training_scenes(config.manifest)
        rows = []
        for variant in config.cpn_variants:
            t0 = time.time()
            tc = TrainConfig(stage="cpn", manifest=config.manifest,
                             out_dir=config.checkpoint_dir,
                             epochs=config.cpn_train_epochs, seed=config.seed,
                             width=config.width, cpn_kwargs=dict(variant))
            cpn_model, _ = train_cpn(tc, train_scenes, stack)
            cpn_model.eval()
            curve = evaluate_similarity_method("cpn", scenes, pyramids,
                                               cpn=cpn_model)
            rows.append({**variant, "auc_pr": curve.auc,
                         "wall_clock_s": time.time() - t0})
        tables["cpn"] = rows

    return {"tables": tables, "runtime_s": time.time() - t_start}


def _hyper_row(models, scenes, pyramids, name: str, value, params: IdsParams) -> dict:
    t0 = time.time()
    metrics = evaluate_group_selection(models, scenes, pyramids,
                                       use_ids=True, use_pvm=True, params=params)
    return {"param": name, "value": value,
            "ap": metrics["all"]["ap"], "ar": metrics["all"]["ar"],
            "wall_clock_s": time.time() - t0}
