"""Training objectives beyond distillation: context regularizers.

Opacity regularizers fight floaters (sparsity pushes mass down, entropy
pushes per-ray opacity to commit to 0 or 1); appearance regularizers pull
the object's saturation statistics and patch-feature statistics toward the
surrounding scene so the inserted content does not look pasted on.  The
combined loss tracks a per-component record and aborts by name on the first
non-finite component.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field as dc_field
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F

from .errors import SceneGenError, ValidationError
from .seeding import rng

ENTROPY_CLAMP = 1e-5


@dataclass(frozen=True)
class LossWeights:
    """Static weights; the opacity terms additionally ramp with the step."""

    sds: float = 1.0
    opacity_lo: float = 30.0     # cosine ramp start for sparsity + entropy
    opacity_hi: float = 300.0
    sparsity: float = 1.0        # unit multipliers on the ramped weight,
    entropy: float = 1.0         # so either opacity term can be ablated
    saturation: float = 500.0
    style: float = 500.0
    support_threshold: float = 0.5   # opacity above this counts as object
    shadow_threshold: float = 0.2    # intensity below this is ignored

    def opacity_weight(self, step: int, total_steps: int) -> float:
        """Cosine ramp from lo at step 0 to hi at the final step."""
        if total_steps <= 0:
            return self.opacity_hi
        frac = min(max(step / total_steps, 0.0), 1.0)
        return self.opacity_lo + (self.opacity_hi - self.opacity_lo) \
            * (1.0 - math.cos(math.pi * frac)) / 2.0


def sparsity_loss(opacity: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
    """Mean opacity over the rays that intersect the box."""
    m = mask.bool()
    if not m.any():
        return opacity.sum() * 0.0
    return opacity[m].mean()


def opacity_entropy_loss(opacity: torch.Tensor,
                         mask: torch.Tensor) -> torch.Tensor:
    """Mean binary entropy of per-ray opacity, clamped for stability."""
    m = mask.bool()
    if not m.any():
        return opacity.sum() * 0.0
    o = opacity[m].clamp(ENTROPY_CLAMP, 1.0 - ENTROPY_CLAMP)
    return -(o * torch.log(o) + (1.0 - o) * torch.log(1.0 - o)).mean()


def rgb_saturation(rgb: torch.Tensor) -> torch.Tensor:
    """HSV saturation S = (max - min) / max, with S = 0 for black."""
    mx = rgb.max(dim=-1).values
    mn = rgb.min(dim=-1).values
    return torch.where(mx > 0, (mx - mn) / mx.clamp_min(1e-12),
                       torch.zeros_like(mx))


def intensity(rgb: torch.Tensor) -> torch.Tensor:
    return rgb.mean(dim=-1)


class PatchFeatureExtractor:
    """Fixed random projection of local patches, a cheap style descriptor.

    Patches of side ``patch`` (stride ``stride``) are flattened and mapped
    through a frozen Gaussian projection.  Deterministic given the seed, and
    differentiable in the image.
    """

    def __init__(self, patch: int = 5, stride: int = 2, dim: int = 24,
                 seed: int = 1234):
        self.patch = patch
        self.stride = stride
        self.dim = dim
        flat = patch * patch * 3
        proj = rng(seed, "style.proj").standard_normal((flat, dim))
        self.projection = torch.from_numpy(
            (proj / math.sqrt(flat)).astype(np.float32))

    def __call__(self, image: torch.Tensor):
        """Returns (features (N, dim), centers (N, 2) int (row, col))."""
        if image.ndim != 3 or image.shape[2] != 3:
            raise ValidationError("extractor expects an (H,W,3) image")
        h, w = image.shape[:2]
        if h < self.patch or w < self.patch:
            raise ValidationError("image smaller than the patch size")
        chw = image.permute(2, 0, 1).unsqueeze(0)
        cols = F.unfold(chw, self.patch, stride=self.stride)   # (1, 3pp, N)
        feats = cols.squeeze(0).transpose(0, 1) \
            @ self.projection.to(image.dtype)
        half = self.patch // 2
        rows = torch.arange(0, h - self.patch + 1, self.stride) + half
        cols_ix = torch.arange(0, w - self.patch + 1, self.stride) + half
        rr, cc = torch.meshgrid(rows, cols_ix, indexing="ij")
        centers = torch.stack([rr.reshape(-1), cc.reshape(-1)], dim=-1)
        return feats, centers


@dataclass
class ReferenceStats:
    """Appearance statistics of the scene surrounding the box."""

    sat_mean: float
    sat_var: float
    features: torch.Tensor    # (N, dim) detached reference patch features

    @classmethod
    def from_scene(cls, image: torch.Tensor, box_mask: np.ndarray,
                   extractor: PatchFeatureExtractor,
                   shadow_threshold: float = 0.2) -> "ReferenceStats":
        """Stats over scene pixels outside the box projection.

        Dark pixels (mean intensity below the shadow threshold) are treated
        as shadow and excluded from the saturation statistics.
        """
        img = image if isinstance(image, torch.Tensor) \
            else torch.from_numpy(np.asarray(image, dtype=np.float32))
        mask = torch.from_numpy(np.asarray(box_mask, dtype=bool))
        valid = (~mask) & (intensity(img) >= shadow_threshold)
        if not valid.any():
            raise ValidationError("no usable reference pixels outside the box")
        sat = rgb_saturation(img[valid])
        feats, centers = extractor(img)
        outside = ~mask[centers[:, 0], centers[:, 1]]
        if not outside.any():
            raise ValidationError("no reference patches outside the box")
        return cls(float(sat.mean()), float(sat.var(unbiased=False)),
                   feats[outside].detach())


def saturation_loss(object_rgb: torch.Tensor, opacity: torch.Tensor,
                    stats: ReferenceStats, support_threshold: float = 0.5,
                    shadow_threshold: float = 0.2) -> torch.Tensor:
    """Match opacity-weighted saturation mean/variance to the reference.

    Only confident object pixels (opacity above the support threshold) that
    are not in shadow (intensity at or above the shadow threshold) count.
    Returns zero while no pixel qualifies, so early training is unaffected.
    """
    support = (opacity > support_threshold) \
        & (intensity(object_rgb) >= shadow_threshold)
    if not support.any():
        return object_rgb.sum() * 0.0
    sat = rgb_saturation(object_rgb[support])
    wts = opacity[support]
    total = wts.sum()
    mean = (wts * sat).sum() / total
    var = (wts * (sat - mean) ** 2).sum() / total
    return (mean - stats.sat_mean) ** 2 + (var - stats.sat_var) ** 2


def style_loss(image: torch.Tensor, support_mask: torch.Tensor,
               stats: ReferenceStats,
               extractor: PatchFeatureExtractor) -> torch.Tensor:
    """Global + local patch-feature alignment with the scene.

    Global: squared distance between feature means and variances.  Local:
    for every object patch, squared distance to its nearest reference patch
    (a contextual match that tolerates spatial rearrangement).  Object
    patches are those whose centers fall on confident object pixels.
    """
    feats, centers = extractor(image)
    on_obj = support_mask[centers[:, 0], centers[:, 1]]
    if not on_obj.any():
        return image.sum() * 0.0
    obj = feats[on_obj]
    ref = stats.features
    g = ((obj.mean(0) - ref.mean(0)) ** 2).sum() \
        + ((obj.var(0, unbiased=False) - ref.var(0, unbiased=False)) ** 2).sum()
    d2 = torch.cdist(obj, ref) ** 2
    local = d2.min(dim=1).values.mean()
    return g + local


# ---------------------------------------------------------------------------
# Assembly
# ---------------------------------------------------------------------------

@dataclass
class LossBundle:
    total: torch.Tensor
    record: dict


def total_loss(render, sds, stats: ReferenceStats | None,
               weights: LossWeights, step: int, total_steps: int,
               extractor: PatchFeatureExtractor | None = None) -> LossBundle:
    """Combine distillation and regularizers; abort by name on non-finite."""
    lam = weights.opacity_weight(step, total_steps)
    components = {}
    components["sds"] = weights.sds * sds.surrogate_loss
    components["sparsity"] = lam * weights.sparsity * sparsity_loss(
        render.opacity, render.mask)
    components["entropy"] = lam * weights.entropy * opacity_entropy_loss(
        render.opacity, render.mask)
    if stats is not None:
        components["saturation"] = weights.saturation * saturation_loss(
            render.object_rgb, render.opacity, stats,
            weights.support_threshold, weights.shadow_threshold)
        if extractor is not None and weights.style > 0:
            support = (render.opacity > weights.support_threshold)
            components["style"] = weights.style * style_loss(
                render.image, support, stats, extractor)

    record = {"step": step, "lambda": lam, "timestep": sds.timestep}
    total = None
    for name, value in components.items():
        v = float(value.detach())
        if not math.isfinite(v):
            raise SceneGenError(
                f"loss component '{name}' became non-finite at step {step}")
        record[name] = v
        total = value if total is None else total + value
    record["total"] = float(total.detach())
    return LossBundle(total, record)


def append_loss_record(path, record: dict):
    """NDJSON append; one line per training step."""
    with open(path, "a") as fh:
        fh.write(json.dumps(record) + "\n")


def read_loss_records(path):
    out = []
    p = Path(path)
    if not p.exists():
        return out
    for line in p.read_text().splitlines():
        line = line.strip()
        if line:
            out.append(json.loads(line))
    return out
