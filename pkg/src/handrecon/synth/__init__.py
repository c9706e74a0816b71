"""Synthetic hand-object scenes standing in for real datasets and perception."""
from .dataset import list_scenes, read_scene, write_scene
from .scene import (
    NoiseConfig,
    SceneConfig,
    SceneGenerationError,
    SceneSample,
    generate_scene,
    perception_oracle,
    render_masks,
    sample_layout,
    stereo_cameras,
)
from .shapes import CATEGORIES, GRASP_TYPES, HandSpec, ObjectSpec

__all__ = [
    "CATEGORIES",
    "GRASP_TYPES",
    "HandSpec",
    "NoiseConfig",
    "ObjectSpec",
    "SceneConfig",
    "SceneGenerationError",
    "SceneSample",
    "generate_scene",
    "list_scenes",
    "perception_oracle",
    "read_scene",
    "render_masks",
    "sample_layout",
    "stereo_cameras",
    "write_scene",
]
