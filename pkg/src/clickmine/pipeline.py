"""Model stack assembly and checkpoint wiring shared by the trainer, the
evaluation protocols, the HTTP service and the CLI."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

from .backbone import FeaturePyramidNet
from .checkpoint import load_module, save_module
from .clickseg import OneClickSegmenter
from .cpn import ClickProposalNetwork
from .ids import PipelineModels
from .pvm import ProposalVerifier

STAGE_FILES = {"dsn": "dsn.ckpt", "cpn": "cpn.ckpt", "pvm": "pvm.ckpt"}


@dataclass
class Stack:
    segmenter: OneClickSegmenter
    cpn: ClickProposalNetwork
    verifier: ProposalVerifier

    @property
    def backbone(self) -> FeaturePyramidNet:
        return self.segmenter.backbone

    def models(self) -> PipelineModels:
        return PipelineModels(segmenter=self.segmenter, cpn=self.cpn,
                              verifier=self.verifier)


def build_stack(width: int = 32, seed: int = 0, click_embedding: bool = True,
                cpn_kwargs: dict | None = None) -> Stack:
    backbone = FeaturePyramidNet(width=width, seed=seed)
    segmenter = OneClickSegmenter(backbone, click_embedding=click_embedding,
                                  seed=seed + 1)
    cpn = ClickProposalNetwork(feature_width=width, seed=seed + 2,
                               **(cpn_kwargs or {}))
    verifier = ProposalVerifier(feature_width=width, seed=seed + 3)
    return Stack(segmenter=segmenter, cpn=cpn, verifier=verifier)


def stage_path(checkpoint_dir: str | Path, stage: str) -> Path:
    return Path(checkpoint_dir) / STAGE_FILES[stage]


def save_stage(checkpoint_dir: str | Path, stage: str, module,
               meta: dict | None = None) -> Path:
    path = stage_path(checkpoint_dir, stage)
    save_module(path, module, meta)
    return path


def load_stack(checkpoint_dir: str | Path, width: int = 32,
               require: tuple[str, ...] = ("dsn", "cpn", "pvm")) -> Stack:
    """Build a stack and load each stage; missing files raise by name."""
    stack = build_stack(width=width)
    modules = {"dsn": stack.segmenter, "cpn": stack.cpn, "pvm": stack.verifier}
    for stage in require:
        path = stage_path(checkpoint_dir, stage)
        if not path.exists():
            raise FileNotFoundError(
                f"missing checkpoint for stage '{stage}': {path}")
        load_module(path, modules[stage])
    for p in stack.segmenter.parameters():
        p.requires_grad_(False)
    stack.segmenter.eval()
    stack.cpn.eval()
    stack.verifier.eval()
    return stack
