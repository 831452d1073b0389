"""Single entrypoint: synth / train / eval / ablate / serve / demo.

Exit codes: 0 success, 2 usage errors (argparse), 1 runtime failures. Every
subcommand is deterministic for a fixed --seed. The demo drives exactly the
same pipeline objects the HTTP service serves, so the two cannot drift.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from pathlib import Path

import numpy as np


def _env(name: str, default):
    return os.environ.get(f"CLICKMINE_{name}", default)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="clickmine",
                                description="click-guided segmentation toolkit")
    sub = p.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("synth", help="generate a synthetic dataset")
    sp.add_argument("--config", type=str, default=None,
                    help="JSON file with DatasetConfig/SceneConfig overrides")
    sp.add_argument("--out", type=str, required=True)
    sp.add_argument("--scenes", type=int, default=100)
    sp.add_argument("--seed", type=int, default=0)
    sp.set_defaults(func=cmd_synth)

    tp = sub.add_parser("train", help="train one stage")
    tp.add_argument("--stage", choices=("dsn", "cpn", "pvm"), required=True)
    tp.add_argument("--manifest", type=str, required=True)
    tp.add_argument("--out", type=str, required=True)
    tp.add_argument("--epochs", type=int, default=8)
    tp.add_argument("--lr", type=float, default=None)
    tp.add_argument("--batch-size", type=int, default=4)
    tp.add_argument("--seed", type=int, default=0)
    tp.add_argument("--limit-scenes", type=int, default=None)
    tp.add_argument("--lr-decay-epochs", type=int, nargs="*", default=())
    tp.add_argument("--no-click-embedding", action="store_true")
    tp.set_defaults(func=cmd_train)

    ep = sub.add_parser("eval", help="run an evaluation suite")
    ep.add_argument("--suite", choices=("pr", "auc", "iou-clicks", "ablation"),
                    required=True)
    ep.add_argument("--similarity", choices=("cpn", "dot", "patch"),
                    default="cpn")
    ep.add_argument("--manifest", type=str, required=True)
    ep.add_argument("--checkpoints", type=str, required=True)
    ep.add_argument("--out", type=str, required=True)
    ep.add_argument("--max-scenes", type=int, default=40)
    ep.add_argument("--seed", type=int, default=0)
    ep.set_defaults(func=cmd_eval)

    ap = sub.add_parser("ablate", help="alias of: eval --suite ablation")
    ap.add_argument("--manifest", type=str, required=True)
    ap.add_argument("--checkpoints", type=str, required=True)
    ap.add_argument("--out", type=str, required=True)
    ap.add_argument("--max-scenes", type=int, default=40)
    ap.add_argument("--seed", type=int, default=0)
    ap.set_defaults(func=cmd_ablate)

    vp = sub.add_parser("serve", help="serve the interactive HTTP API")
    vp.add_argument("--port", type=int, default=int(_env("PORT", 8000)))
    vp.add_argument("--host", type=str, default=_env("HOST", "127.0.0.1"))
    vp.add_argument("--checkpoints", type=str,
                    default=_env("CHECKPOINTS", None), required=False)
    vp.add_argument("--max-image-bytes", type=int,
                    default=int(_env("MAX_IMAGE_BYTES", 8 * 1024 * 1024)))
    vp.add_argument("--max-pixels", type=int,
                    default=int(_env("MAX_PIXELS", 1024 * 1024)))
    vp.add_argument("--session-ttl", type=float,
                    default=float(_env("SESSION_TTL", 3600)))
    vp.set_defaults(func=cmd_serve)

    dp = sub.add_parser("demo", help="headless click -> group selection run")
    dp.add_argument("--image", type=str, required=True)
    dp.add_argument("--click", type=str, required=True, metavar="X,Y")
    dp.add_argument("--checkpoints", type=str, required=True)
    dp.add_argument("--out", type=str, required=True)
    dp.add_argument("--find-similar", action=argparse.BooleanOptionalAction,
                    default=True)
    dp.add_argument("--seed", type=int, default=0)
    dp.set_defaults(func=cmd_demo)
    return p


# ---------------------------------------------------------------- commands

def cmd_synth(args) -> int:
    from .synthgen import DatasetConfig, SceneConfig, generate_dataset

    overrides = {}
    if args.config:
        overrides = json.loads(Path(args.config).read_text())
    scene_kwargs = overrides.get("scene", {})
    scene_kwargs = {**scene_kwargs}
    if "sample_radius" in scene_kwargs:
        scene_kwargs["sample_radius"] = tuple(scene_kwargs["sample_radius"])
    if "seeds_per_region" in scene_kwargs:
        scene_kwargs["seeds_per_region"] = tuple(scene_kwargs["seeds_per_region"])
    cfg = DatasetConfig(scene=SceneConfig(**scene_kwargs),
                        mask_format=overrides.get("mask_format", "rle"))
    path = generate_dataset(cfg, args.scenes, args.seed, args.out)
    print(f"wrote {args.scenes} scenes; manifest: {path}")
    return 0


def cmd_train(args) -> int:
    from .trainer import TrainConfig, train_stage

    config = TrainConfig(stage=args.stage, manifest=args.manifest,
                         out_dir=args.out, epochs=args.epochs,
                         learning_rate=args.lr, batch_size=args.batch_size,
                         seed=args.seed, limit_scenes=args.limit_scenes,
                         lr_decay_epochs=tuple(args.lr_decay_epochs),
                         click_embedding=not args.no_click_embedding)
    result = train_stage(config)
    final = result.history[-1]["mean_loss"] if result.history else float("nan")
    print(f"stage {args.stage}: {len(result.history)} epochs, "
          f"final mean loss {final:.4f}; checkpoint: {result.checkpoint}")
    return 0


def _load_val(manifest_path: str, max_scenes: int):
    from .synthgen import load_manifest, load_scene

    manifest = load_manifest(manifest_path)
    root = Path(manifest_path).parent
    n = min(max_scenes, len(manifest["scenes"]))
    return [load_scene(manifest, i, root) for i in range(n)]


def cmd_eval(args) -> int:
    from .evalsuite import svg_line_chart, write_report
    from .pipeline import load_stack

    t0 = time.time()
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    config_doc = {"suite": args.suite, "similarity": args.similarity,
                  "manifest": args.manifest, "checkpoints": args.checkpoints,
                  "max_scenes": args.max_scenes, "seed": args.seed}

    if args.suite == "ablation":
        from .evalsuite.ablation import AblationConfig, run_ablation

        report = run_ablation(AblationConfig(
            checkpoint_dir=args.checkpoints, manifest=args.manifest,
            max_scenes=args.max_scenes, seed=args.seed,
            sweeps=("ids_pvm", "ids_hyper", "cpn")))
        write_report(out_dir / "report.json", config_doc, report["tables"],
                     report["runtime_s"])
        print(f"ablation tables written to {out_dir / 'report.json'}")
        return 0

    require = ("dsn", "cpn", "pvm") if args.similarity == "cpn" else ("dsn",)
    stack = load_stack(args.checkpoints, require=require)
    scenes = _load_val(args.manifest, args.max_scenes)
    pyramids = [stack.backbone.extract(s.image) for s in scenes]

    if args.suite in ("pr", "auc"):
        from .evalsuite.protocols import evaluate_similarity_method

        curve = evaluate_similarity_method(
            args.similarity, scenes, pyramids,
            cpn=stack.cpn if args.similarity == "cpn" else None)
        metrics = {"auc_pr": curve.auc,
                   "points": [{"threshold": t, "precision": p, "recall": r}
                              for t, p, r in curve.points]}
        svg_line_chart(
            {args.similarity: [(r, p) for _, p, r in sorted(
                curve.points, key=lambda x: x[2])]},
            out_dir / "pr_curve.svg", title="precision-recall",
            x_label="recall", y_label="precision")
        write_report(out_dir / "report.json", config_doc, metrics,
                     time.time() - t0)
        print(f"{args.similarity} AUC-PR: {curve.auc:.4f}")
        return 0

    # iou-clicks
    from .evalsuite.protocols import iou_vs_clicks
    from .clickseg import ClickSet

    index = {id(s): i for i, s in enumerate(scenes)}

    def segment_union(scene, clicks: ClickSet):
        pyramid = pyramids[index[id(scene)]]
        results = stack.segmenter.segment_clicks(pyramid, clicks)
        masks = [r.mask for r in results if r is not None]
        if not masks:
            return None
        return np.logical_or.reduce(masks)

    curves = iou_vs_clicks(segment_union, scenes)
    svg_line_chart(
        {b: list(enumerate(curves[b], start=1)) for b in
         ("all", "small", "medium", "large") if curves["counts"][b]},
        out_dir / "iou_vs_clicks.svg", title="IoU vs clicks",
        x_label="clicks", y_label="IoU")
    write_report(out_dir / "report.json", config_doc, curves, time.time() - t0)
    print("IoU vs clicks (all):",
          " ".join(f"{v:.3f}" for v in curves["all"]))
    return 0


def cmd_ablate(args) -> int:
    args.suite = "ablation"
    args.similarity = "cpn"
    return cmd_eval(args)


def cmd_serve(args) -> int:
    import uvicorn

    from .pipeline import load_stack
    from .service import ServiceConfig, create_app

    if not args.checkpoints:
        print("error: --checkpoints (or CLICKMINE_CHECKPOINTS) is required",
              file=sys.stderr)
        return 1
    stack = load_stack(args.checkpoints)
    app = create_app(stack.models(), ServiceConfig(
        max_image_bytes=args.max_image_bytes, max_pixels=args.max_pixels,
        session_ttl_s=args.session_ttl))
    uvicorn.run(app, host=args.host, port=args.port, log_level="info")
    return 0


def cmd_demo(args) -> int:
    from PIL import Image

    from .clickseg import ClickSet
    from .cpn import heatmap_to_image
    from .ids import run_ids
    from .masks import rle_encode
    from .pipeline import load_stack

    try:
        x, y = (int(v) for v in args.click.split(","))
    except ValueError:
        print(f"error: --click wants X,Y integers, got {args.click!r}",
              file=sys.stderr)
        return 1
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)

    stack = load_stack(args.checkpoints)
    models = stack.models()
    image = np.asarray(Image.open(args.image).convert("RGB"))
    pyramid = stack.backbone.extract(image)

    results = models.segmenter.segment_clicks(pyramid, ClickSet([(x, y)]))
    initial = results[0] if results else None
    summary: dict = {"click": [x, y], "image": str(args.image)}
    accepted = []
    if initial is None:
        summary["masks"] = 0
        summary["note"] = "no object found at the click"
    elif args.find_similar:
        state, snaps = run_ids(models, initial, pyramid, image)
        accepted = state.accepted
        summary["masks"] = len(accepted)
        summary["accepted_clicks"] = [[cx, cy] for cx, cy in state.accepted_clicks]
        summary["iterations"] = [
            {"iteration": s.iteration,
             "new_clicks": [[a, b, c] for a, b, c in s.new_clicks],
             "mask_count": len(s.accepted)} for s in snaps]
        heatmap = models.cpn.multi_exemplar_heatmap(
            pyramid, [m.mask for m in state.exemplars])
        Image.fromarray(heatmap_to_image(heatmap)).save(out_dir / "heatmap.png")
    else:
        accepted = [(initial, 1.0)]
        summary["masks"] = 1

    doc = {"width": image.shape[1], "height": image.shape[0],
           "index": [{"id": i, "score": m.score, "similarity": sim,
                      "click": list(m.source_click)}
                     for i, (m, sim) in enumerate(accepted)],
           "masks": [rle_encode(m.mask) for m, _ in accepted]}
    (out_dir / "masks.json").write_text(json.dumps(doc, sort_keys=True))

    overlay = image.copy()
    palette = [(230, 60, 60), (60, 200, 90), (70, 110, 240), (240, 180, 40),
               (180, 70, 220), (40, 210, 210)]
    for i, (m, _) in enumerate(accepted):
        color = np.array(palette[i % len(palette)], dtype=np.float64)
        overlay[m.mask] = (overlay[m.mask] * 0.45 + color * 0.55).astype(np.uint8)
    Image.fromarray(overlay).save(out_dir / "overlay.png")
    (out_dir / "summary.json").write_text(json.dumps(summary, sort_keys=True))
    print(f"demo wrote {summary['masks']} masks to {out_dir}")
    return 0


# ------------------------------------------------------------------- driver

def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse: 0 for --help, 2 for usage errors
        return int(exc.code or 0)
    try:
        return args.func(args)
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (OSError, ValueError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
