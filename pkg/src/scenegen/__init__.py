"""Text-prompted object generation inside a box of a cached RGB-D scene.

Pipeline: :mod:`scene_cache` loads the frozen RGB-D context,
:mod:`geometry` turns three clicks into an oriented box, :mod:`field` holds
the hash-grid radiance field confined to it, :mod:`compositor` renders and
composites with scene-aware occlusion, :mod:`guidance` distills an
inpainting denoiser's score into image gradients, :mod:`objectives` adds
context regularizers, :mod:`trainer` runs the loop, :mod:`harness`
evaluates, and :mod:`service`/:mod:`cli` expose it all.
"""

from .errors import (CacheFormatError, CheckpointError, ConfigError,
                     DegenerateSelectionError, ProviderError, SceneGenError,
                     ValidationError)
from .geometry import (CameraView, ClickSelection, OrientedBox3D, Ray,
                       RayBoxHit, back_project, box_from_text, box_to_text,
                       build_box, intersect_ray_box, intersect_rays_box,
                       look_at_camera, pixel_rays, project, project_box_mask)
from .scene_cache import (NO_SURFACE_DEPTH, SceneCache, SceneViewRGBD,
                          load_cache, make_desk_cache, make_synthetic_scene,
                          save_cache)
from .field import (HashGridConfig, ObjectField, load_checkpoint,
                    save_checkpoint)
from .compositor import RenderOutput, composite, render_rays, render_view
from .guidance import (GuidanceRequest, HttpProvider, NoiseSchedule,
                       TargetOracleProvider, create_provider_app, sds_step)
from .objectives import (LossWeights, PatchFeatureExtractor, ReferenceStats,
                         opacity_entropy_loss, sparsity_loss, total_loss)
from .trainer import TrainConfig, TrainResult, train
from .harness import eval_prompt_fidelity, scene_preservation

__version__ = "0.1.0"

__all__ = [
    "SceneGenError", "ValidationError", "DegenerateSelectionError",
    "CacheFormatError", "CheckpointError", "ConfigError", "ProviderError",
    "CameraView", "ClickSelection", "OrientedBox3D", "Ray", "RayBoxHit",
    "back_project", "project", "pixel_rays", "build_box",
    "intersect_ray_box", "intersect_rays_box", "project_box_mask",
    "box_to_text", "box_from_text", "look_at_camera",
    "SceneCache", "SceneViewRGBD", "NO_SURFACE_DEPTH", "load_cache",
    "save_cache", "make_synthetic_scene", "make_desk_cache",
    "HashGridConfig", "ObjectField", "save_checkpoint", "load_checkpoint",
    "RenderOutput", "render_view", "render_rays", "composite",
    "NoiseSchedule", "GuidanceRequest", "TargetOracleProvider",
    "HttpProvider", "create_provider_app", "sds_step",
    "LossWeights", "ReferenceStats", "PatchFeatureExtractor",
    "sparsity_loss", "opacity_entropy_loss", "total_loss",
    "TrainConfig", "TrainResult", "train",
    "eval_prompt_fidelity", "scene_preservation",
    "__version__",
]
