import json

import numpy as np
import pytest
from PIL import Image

from clickmine import cli
from clickmine.synthgen import load_manifest


def test_help_exits_zero(capsys):
    assert cli.run(["--help"]) == 0
    out = capsys.readouterr().out
    assert "synth" in out and "serve" in out


def test_unknown_subcommand_exits_two(capsys):
    assert cli.run(["frobnicate"]) == 2


def test_unknown_flag_exits_two(capsys):
    assert cli.run(["synth", "--bogus"]) == 2


def test_missing_required_flag_exits_two(capsys):
    assert cli.run(["train", "--stage", "dsn"]) == 2


def test_synth_writes_dataset(tmp_path, capsys):
    out = tmp_path / "ds"
    config = tmp_path / "cfg.json"
    config.write_text(json.dumps({"scene": {"height": 64, "width": 64,
                                            "library_size": 5}}))
    code = cli.run(["synth", "--config", str(config), "--out", str(out),
                    "--scenes", "2", "--seed", "3"])
    assert code == 0
    manifest = load_manifest(out / "manifest.json")
    assert len(manifest["scenes"]) == 2
    assert manifest["scene_config"]["height"] == 64


def test_synth_deterministic_given_seed(tmp_path):
    for sub in ("a", "b"):
        cli.run(["synth", "--out", str(tmp_path / sub), "--scenes", "1",
                 "--seed", "7"])
    m1 = (tmp_path / "a" / "manifest.json").read_bytes()
    m2 = (tmp_path / "b" / "manifest.json").read_bytes()
    assert m1 == m2


def test_train_then_demo_smoke(tmp_path, capsys):
    # tiny end-to-end: synth -> train all stages (minimal) -> demo
    ds = tmp_path / "ds"
    ck = tmp_path / "ck"
    config = tmp_path / "cfg.json"
    config.write_text(json.dumps({"scene": {"height": 64, "width": 64,
                                            "library_size": 5}}))
    assert cli.run(["synth", "--config", str(config), "--out", str(ds),
                    "--scenes", "4", "--seed", "1"]) == 0
    manifest = str(ds / "manifest.json")
    for stage in ("dsn", "cpn", "pvm"):
        code = cli.run(["train", "--stage", stage, "--manifest", manifest,
                        "--out", str(ck), "--epochs", "1", "--batch-size", "2",
                        "--seed", "0"])
        assert code == 0

    # demo on the first generated scene image
    image_path = ds / "images" / "00000.png"
    out = tmp_path / "demo"
    code = cli.run(["demo", "--image", str(image_path), "--click", "32,32",
                    "--checkpoints", str(ck), "--out", str(out)])
    assert code == 0
    summary = json.loads((out / "summary.json").read_text())
    assert summary["click"] == [32, 32]
    assert (out / "masks.json").exists()
    assert (out / "overlay.png").exists()
    doc = json.loads((out / "masks.json").read_text())
    assert len(doc["masks"]) == summary["masks"]
    overlay = np.asarray(Image.open(out / "overlay.png"))
    assert overlay.shape == (64, 64, 3)


def test_demo_bad_click_format(tmp_path, capsys):
    img = tmp_path / "x.png"
    Image.fromarray(np.zeros((64, 64, 3), dtype=np.uint8)).save(img)
    code = cli.run(["demo", "--image", str(img), "--click", "oops",
                    "--checkpoints", str(tmp_path), "--out", str(tmp_path / "o")])
    assert code == 1


def test_eval_missing_checkpoints_exits_one(tmp_path, capsys):
    config = tmp_path / "cfg.json"
    config.write_text(json.dumps({"scene": {"height": 64, "width": 64}}))
    cli.run(["synth", "--config", str(config), "--out", str(tmp_path / "ds"),
             "--scenes", "1", "--seed", "0"])
    code = cli.run(["eval", "--suite", "auc", "--similarity", "dot",
                    "--manifest", str(tmp_path / "ds" / "manifest.json"),
                    "--checkpoints", str(tmp_path / "nothing"),
                    "--out", str(tmp_path / "out")])
    assert code == 1
    err = capsys.readouterr().err
    assert "dsn" in err


def test_serve_requires_checkpoints(capsys, monkeypatch):
    monkeypatch.delenv("CLICKMINE_CHECKPOINTS", raising=False)
    assert cli.run(["serve"]) == 1
