"""Procedural synthetic gate scenes and the on-disk dataset format."""

from .dataset import (
    DatasetError,
    config_from_dict,
    config_to_dict,
    dataset_size,
    generate_dataset,
    load_dataset,
    read_manifest,
)
from .render import (
    N_BACKGROUNDS,
    Gate,
    GateSpec,
    GenerationError,
    RenderConfig,
    SceneSample,
    SpawnBounds,
    generate_scene,
    label_gate,
    render,
)

__all__ = [
    "DatasetError", "config_from_dict", "config_to_dict", "dataset_size", "generate_dataset",
    "load_dataset", "read_manifest", "N_BACKGROUNDS", "Gate", "GateSpec", "GenerationError",
    "RenderConfig", "SceneSample", "SpawnBounds", "generate_scene", "label_gate", "render",
]
