"""Procedural scene synthesis: textured stuff regions populated with groups
of repeated objects via distance-map-guided copy-paste."""

from .core import (
    augment_sample,
    blend_paste,
    copy_budget,
    distance_map,
    histogram_gate,
    place_full_mask,
)
from .library import DistractorSample, build_library
from .background import StuffRegion, make_regions, render_background
from .scene import (
    Placement,
    SceneConfig,
    SceneInstance,
    SyntheticScene,
    populate_region,
    synthesize_scene,
    validate_scene,
)
from .dataset import (
    DatasetConfig,
    generate_dataset,
    load_manifest,
    load_scene,
    scene_records,
)

__all__ = [
    "augment_sample",
    "blend_paste",
    "copy_budget",
    "distance_map",
    "histogram_gate",
    "place_full_mask",
    "DistractorSample",
    "build_library",
    "StuffRegion",
    "make_regions",
    "render_background",
    "Placement",
    "SceneConfig",
    "SceneInstance",
    "SyntheticScene",
    "populate_region",
    "synthesize_scene",
    "validate_scene",
    "DatasetConfig",
    "generate_dataset",
    "load_manifest",
    "load_scene",
    "scene_records",
]
