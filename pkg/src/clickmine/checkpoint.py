"""Checkpoint files: a named tensor map stored as .npz with a JSON header
(version, per-tensor shapes, optional metadata). Round-trips are bit-exact."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np
import torch

CHECKPOINT_VERSION = 1


def save_checkpoint(path: str | Path, tensors: dict[str, np.ndarray],
                    meta: dict | None = None) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    header = {
        "version": CHECKPOINT_VERSION,
        "shapes": {k: list(v.shape) for k, v in tensors.items()},
        "meta": meta or {},
    }
    # note: ascontiguousarray would promote 0-d scalars to 1-d
    arrays = {f"t/{k}": np.asarray(v, order="C") for k, v in tensors.items()}
    arrays["__header__"] = np.frombuffer(
        json.dumps(header, sort_keys=True).encode(), dtype=np.uint8)
    try:
        with open(path, "wb") as fh:
            np.savez(fh, **arrays)
    except OSError as exc:
        raise OSError(f"failed writing checkpoint {path}: {exc}") from exc


def load_checkpoint(path: str | Path) -> tuple[dict[str, np.ndarray], dict]:
    path = Path(path)
    try:
        data = np.load(path)
    except OSError as exc:
        raise OSError(f"failed reading checkpoint {path}: {exc}") from exc
    header = json.loads(bytes(data["__header__"]).decode())
    if header["version"] != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {header['version']!r}")
    tensors = {}
    for key in data.files:
        if not key.startswith("t/"):
            continue
        name = key[2:]
        arr = data[key]
        if list(arr.shape) != header["shapes"][name]:
            raise ValueError(f"shape mismatch for {name!r} in {path}")
        tensors[name] = arr
    return tensors, header["meta"]


def module_tensors(module: torch.nn.Module) -> dict[str, np.ndarray]:
    """Snapshot a module's state as numpy arrays."""
    return {k: v.detach().cpu().numpy().copy()
            for k, v in module.state_dict().items()}


def load_module_tensors(module: torch.nn.Module,
                        tensors: dict[str, np.ndarray]) -> None:
    state = {k: torch.from_numpy(np.asarray(v, order="C").copy())
             for k, v in tensors.items()}
    module.load_state_dict(state)


def save_module(path: str | Path, module: torch.nn.Module,
                meta: dict | None = None) -> None:
    save_checkpoint(path, module_tensors(module), meta)


def load_module(path: str | Path, module: torch.nn.Module) -> dict:
    tensors, meta = load_checkpoint(path)
    load_module_tensors(module, tensors)
    return meta
