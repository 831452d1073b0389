"""Scratch pilot: small-scale end-to-end training to validate the directional
criteria before freezing the acceptance benchmark configs. Not part of the
package."""
import json
import sys
import time
import warnings

warnings.filterwarnings("ignore")
import numpy as np
import torch

from clickmine.synthgen import DatasetConfig, SceneConfig, generate_dataset
from clickmine.trainer import (TrainConfig, load_training_scenes, train_dsn,
                               train_cpn, train_pvm)
from clickmine.pipeline import build_stack, Stack
from clickmine.clickseg import ClickSet
from clickmine.evalsuite.protocols import (peak_click, groups_of,
                                           evaluate_similarity_method,
                                           evaluate_group_selection,
                                           iou_vs_clicks)
from clickmine.evalsuite.metrics import mask_ap_ar
from clickmine.ids import PipelineModels
from clickmine.synthgen import load_manifest, load_scene
from pathlib import Path

N_TRAIN = int(sys.argv[1]) if len(sys.argv) > 1 else 400
N_VAL = int(sys.argv[2]) if len(sys.argv) > 2 else 60
EPOCHS = int(sys.argv[3]) if len(sys.argv) > 3 else 2

t_all = time.time()
root = Path(".testcache/pilot")
root.mkdir(parents=True, exist_ok=True)
scene_cfg = SceneConfig()  # 128x128 defaults

train_dir = root / f"train{N_TRAIN}"
val_dir = root / f"val{N_VAL}"
if not (train_dir / "manifest.json").exists():
    t0 = time.time()
    generate_dataset(DatasetConfig(scene=scene_cfg), N_TRAIN, 100, train_dir)
    print(f"gen train: {time.time()-t0:.0f}s", flush=True)
if not (val_dir / "manifest.json").exists():
    generate_dataset(DatasetConfig(scene=scene_cfg), N_VAL, 999, val_dir)

manifest = str(train_dir / "manifest.json")
scenes = load_training_scenes(manifest)
print(f"train scenes: {len(scenes)}", flush=True)

# ---- DSN with and without click embedding
cfgs = {
    True: TrainConfig(stage="dsn", manifest=manifest, out_dir=str(root),
                      epochs=EPOCHS, seed=0, click_embedding=True),
    False: TrainConfig(stage="dsn", manifest=manifest, out_dir=str(root),
                       epochs=EPOCHS, seed=0, click_embedding=False),
}
stacks = {}
for ce, cfg in cfgs.items():
    t0 = time.time()
    model, hist = train_dsn(cfg, scenes)
    stacks[ce] = model
    print(f"dsn click={ce}: {time.time()-t0:.0f}s "
          f"loss {hist[0]['mean_loss']:.3f}->{hist[-1]['mean_loss']:.3f}", flush=True)

# ---- CPN + PVM on the click-embedded stack
stack = Stack(segmenter=stacks[True], cpn=None, verifier=None)
for p in stack.segmenter.parameters():
    p.requires_grad_(False)
stack.segmenter.eval()

t0 = time.time()
cpn_cfg = TrainConfig(stage="cpn", manifest=manifest, out_dir=str(root),
                      epochs=EPOCHS, seed=0)
cpn, hist = train_cpn(cpn_cfg, scenes, stack)
print(f"cpn: {time.time()-t0:.0f}s loss {hist[0]['mean_loss']:.4f}->{hist[-1]['mean_loss']:.4f}", flush=True)

t0 = time.time()
pvm_cfg = TrainConfig(stage="pvm", manifest=manifest, out_dir=str(root),
                      epochs=EPOCHS, seed=0)
pvm, hist = train_pvm(pvm_cfg, scenes, stack)
print(f"pvm: {time.time()-t0:.0f}s loss {hist[0]['mean_loss']:.4f}->{hist[-1]['mean_loss']:.4f}", flush=True)

cpn.eval(); pvm.eval()

# ---- val scenes
val_manifest = load_manifest(val_dir / "manifest.json")
val_scenes = [load_scene(val_manifest, i, val_dir) for i in range(N_VAL)]
pyr_click = [stacks[True].backbone.extract(s.image) for s in val_scenes]
pyr_noclk = [stacks[False].backbone.extract(s.image) for s in val_scenes]

# ---- 1. click-embedding AP comparison
def eval_click_variant():
    units = []
    for scene, pyr in zip(val_scenes, pyr_click):
        preds = []
        clicks = [peak_click(i.mask) for i in scene.instances]
        res = stacks[True].segment_clicks(pyr, ClickSet(clicks))
        preds = [(r.mask, r.score) for r in res if r is not None]
        units.append((preds, [i.mask for i in scene.instances]))
    return mask_ap_ar(units)

def eval_noclick_variant():
    units = []
    for scene, pyr in zip(val_scenes, pyr_noclk):
        clicks = [peak_click(i.mask) for i in scene.instances]
        dets = stacks[False].detect_all(pyr, score_thresh=0.25)
        masks = stacks[False].segment(pyr, dets)
        cand = [(m.mask, m.score) for m in masks if m is not None]
        # keep masks overlapping any click
        kept = [(m, s) for m, s in cand
                if any(m[y, x] for x, y in clicks if 0 <= y < m.shape[0])]
        units.append((kept, [i.mask for i in scene.instances]))
    return mask_ap_ar(units)

t0 = time.time()
ap_click = eval_click_variant()
ap_noclick = eval_noclick_variant()
print(f"AP click={ap_click['all']['ap']*100:.1f} noclick={ap_noclick['all']['ap']*100:.1f} "
      f"(margin {100*(ap_click['all']['ap']-ap_noclick['all']['ap']):.1f}) [{time.time()-t0:.0f}s]", flush=True)

# ---- 2. IoU vs clicks
index = {id(s): i for i, s in enumerate(val_scenes)}
def segment_union(scene, clicks):
    pyr = pyr_click[index[id(scene)]]
    res = stacks[True].segment_clicks(pyr, clicks)
    masks = [r.mask for r in res if r is not None]
    return np.logical_or.reduce(masks) if masks else None

t0 = time.time()
curves = iou_vs_clicks(segment_union, val_scenes[:20])
print("iou-vs-clicks small:", [round(v, 3) for v in curves["small"]], flush=True)
print("iou-vs-clicks medium:", [round(v, 3) for v in curves["medium"]],
      f"[{time.time()-t0:.0f}s]", flush=True)

# ---- 3. similarity methods
t0 = time.time()
auc_cpn = evaluate_similarity_method("cpn", val_scenes, pyr_click, cpn=cpn).auc
auc_dot = evaluate_similarity_method("dot", val_scenes, pyr_click).auc
auc_patch = evaluate_similarity_method("patch", val_scenes, pyr_click).auc
print(f"AUC cpn={auc_cpn:.3f} dot={auc_dot:.3f} patch={auc_patch:.3f} [{time.time()-t0:.0f}s]", flush=True)

# ---- 4. 2x2 grid
models = PipelineModels(segmenter=stacks[True], cpn=cpn, verifier=pvm)
t0 = time.time()
grid = {}
for ids_on in (False, True):
    for pvm_on in (False, True):
        m = evaluate_group_selection(models, val_scenes[:25], pyr_click[:25],
                                     use_ids=ids_on, use_pvm=pvm_on)
        grid[(ids_on, pvm_on)] = (m["all"]["ap"], m["all"]["ar"])
        print(f"  ids={ids_on} pvm={pvm_on}: AP {m['all']['ap']*100:.1f} AR {m['all']['ar']*100:.1f}", flush=True)
print(f"grid [{time.time()-t0:.0f}s]; total {time.time()-t_all:.0f}s", flush=True)
