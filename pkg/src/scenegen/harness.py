"""Evaluation protocols: prompt fidelity and scene preservation.

The fidelity protocol mirrors the usual text-to-3D evaluation: render the
object from a seeded selection of views, crop to its silhouette, and score
each crop against the prompt with a pluggable image-text scorer (any
callable; heavyweight embedding models stay out of this package).  Scene
preservation quantifies the promise that pixels away from the object are
untouched: PSNR between composite and cached view outside the dilated
object support, reported per view and as the minimum.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
from scipy import ndimage

from .compositor import render_view
from .errors import ValidationError
from .geometry import OrientedBox3D
from .scene_cache import SceneCache
from .seeding import rng

SCHEMA_VERSION = 1
PSNR_CAP_DB = 120.0


@dataclass
class EvalReport:
    schema_version: int
    kind: str
    prompt: str
    per_view: list
    summary: dict
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "schema_version": self.schema_version,
            "kind": self.kind,
            "prompt": self.prompt,
            "per_view": self.per_view,
            "summary": self.summary,
            "extra": self.extra,
        }

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_dict(), indent=2))


def _object_bbox_crop(image: np.ndarray, opacity: np.ndarray,
                      box_mask: np.ndarray, threshold: float = 0.5,
                      pad: int = 2) -> np.ndarray:
    """Crop the composite to the object's bbox (fallback: box silhouette)."""
    support = opacity >= threshold
    if not support.any():
        support = box_mask
    if not support.any():
        raise ValidationError("object is not visible in this view")
    ys, xs = np.nonzero(support)
    h, w = opacity.shape
    top = max(int(ys.min()) - pad, 0)
    bot = min(int(ys.max()) + pad + 1, h)
    left = max(int(xs.min()) - pad, 0)
    right = min(int(xs.max()) + pad + 1, w)
    return image[top:bot, left:right]


def eval_prompt_fidelity(field_model, cache: SceneCache, box: OrientedBox3D,
                         prompt: str, scorer, n_views: int = 10,
                         seed: int = 0, n_samples: int = 64) -> EvalReport:
    """Seeded multi-view crop-and-score protocol.

    ``scorer(crops, prompt)`` gets a list of (h,w,3) float arrays and
    returns one float per crop (higher = better match).  Views are drawn
    with replacement from the cache so the protocol works with any number
    of cached cameras.
    """
    if n_views < 1:
        raise ValidationError("n_views must be positive")
    gen = rng(seed, "eval.views")
    ids = [int(i) for i in gen.integers(len(cache.views), size=n_views)]

    crops, rows = [], []
    with torch.no_grad():
        for pick, idx in enumerate(ids):
            view = cache.views[idx]
            out = render_view(field_model, view, box, n_samples=n_samples)
            crop = _object_bbox_crop(out.image.numpy(),
                                     out.opacity.numpy(),
                                     out.box_mask.numpy())
            crops.append(crop)
            rows.append({"pick": pick, "view_id": view.view_id,
                         "crop_shape": list(crop.shape[:2])})

    scores = [float(s) for s in scorer(crops, prompt)]
    if len(scores) != len(crops):
        raise ValidationError("scorer must return one score per crop")
    for row, score in zip(rows, scores):
        row["score"] = score
    return EvalReport(
        SCHEMA_VERSION, "prompt_fidelity", prompt, rows,
        {"mean_score": float(np.mean(scores)),
         "min_score": float(np.min(scores)),
         "n_views": n_views},
        extra={"seed": seed})


def mean_rgb_scorer(crops, prompt: str):
    """Trivial deterministic placeholder scorer: mean brightness.

    Exists so the protocol runs end to end without an embedding model;
    real evaluations plug in an external image-text scorer.
    """
    return [float(np.mean(c)) for c in crops]


def scene_preservation(field_model, cache: SceneCache, box: OrientedBox3D,
                       opacity_threshold: float = 1e-3, dilate_px: int = 3,
                       n_samples: int = 64) -> EvalReport:
    """PSNR between composite and cached color away from the object.

    The object support (opacity above threshold, dilated) and the box
    silhouette are excluded, so the metric sees exactly the pixels the
    pipeline promises never to touch.  Identical pixels give the cap value.
    """
    rows = []
    with torch.no_grad():
        for view in cache.views:
            out = render_view(field_model, view, box, n_samples=n_samples)
            opacity = out.opacity.numpy()
            support = opacity >= opacity_threshold
            if dilate_px > 0:
                support = ndimage.binary_dilation(support,
                                                  iterations=dilate_px)
            outside = ~(support | out.box_mask.numpy())
            if not outside.any():
                rows.append({"view_id": view.view_id, "psnr_db": None,
                             "outside_pixels": 0})
                continue
            diff = out.image.numpy()[outside] - view.color[outside]
            mse = float(np.mean(diff.astype(np.float64) ** 2))
            if mse <= 0.0:
                psnr = PSNR_CAP_DB
            else:
                psnr = min(10.0 * np.log10(1.0 / mse), PSNR_CAP_DB)
            rows.append({"view_id": view.view_id, "psnr_db": float(psnr),
                         "outside_pixels": int(outside.sum())})

    valid = [r["psnr_db"] for r in rows if r["psnr_db"] is not None]
    if not valid:
        raise ValidationError("no view has pixels outside the object")
    return EvalReport(
        SCHEMA_VERSION, "scene_preservation", "", rows,
        {"min_psnr_db": float(min(valid)),
         "mean_psnr_db": float(np.mean(valid))},
        extra={"opacity_threshold": opacity_threshold,
               "dilate_px": dilate_px})
