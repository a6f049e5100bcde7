"""Volume rendering of the box field and compositing over cached views.

Per pixel ray the field is integrated only over the parameter range where
the ray is inside the box, with the far end clipped at the cached scene
surface.  Opacity uses the closed form O = 1 - exp(-sum sigma*delta), and the
composite is I = G*O + (1-O)*S.  Pixels whose ray misses the box, or whose
box entry lies behind the visible scene surface, are left untouched byte for
byte (the occlusion gate).
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
from PIL import Image

from .errors import ValidationError
from .geometry import OrientedBox3D, box_to_text, pixel_rays
from .scene_cache import NO_SURFACE_DEPTH, SceneViewRGBD
from .seeding import rng as make_rng

BACKGROUND_MODES = ("scene", "white", "black", "gray", "color", "noise")


@dataclass
class RaySampleSet:
    """Samples for a batch of gated rays through the box."""

    origins: torch.Tensor    # (R,3)
    dirs: torch.Tensor       # (R,3) unit
    t_vals: torch.Tensor     # (R,K) sample parameters
    deltas: torch.Tensor     # (R,) per-ray constant segment width

    @property
    def positions(self) -> torch.Tensor:
        return (self.origins.unsqueeze(1)
                + self.t_vals.unsqueeze(-1) * self.dirs.unsqueeze(1))


@dataclass
class RenderOutput:
    """One rendered view plus the layers that produced it."""

    view_id: int
    image: torch.Tensor        # (H,W,3) composite
    object_rgb: torch.Tensor   # (H,W,3) G, zero off-mask
    opacity: torch.Tensor      # (H,W) O, zero off-mask
    mask: torch.Tensor         # (H,W) bool, rays integrating the box
    box_mask: torch.Tensor     # (H,W) bool, rays hitting the box (pre-gate)
    background: torch.Tensor   # (H,W,3) base layer of the composite
    background_mode: str

    @property
    def height(self):
        return self.image.shape[0]

    @property
    def width(self):
        return self.image.shape[1]


def sample_segments(t_near: np.ndarray, t_far: np.ndarray, n_samples: int,
                    jitter: np.random.Generator | None = None):
    """Midpoint (or stratified) sample parameters for [t_near, t_far].

    Returns (t_vals (R,K), deltas (R,)); deltas are the constant segment
    width (t_far - t_near)/K regardless of jitter.
    """
    if n_samples < 1:
        raise ValidationError("n_samples must be positive")
    span = (t_far - t_near) / n_samples
    if jitter is None:
        offsets = np.full((t_near.shape[0], n_samples), 0.5)
    else:
        offsets = jitter.random((t_near.shape[0], n_samples))
    k = np.arange(n_samples)
    t_vals = t_near[:, None] + (k[None, :] + offsets) * span[:, None]
    return t_vals, span


def integrate_rays(sigma: torch.Tensor, rgb: torch.Tensor,
                   deltas: torch.Tensor):
    """Quadrature of the volume rendering integral over fixed-width segments.

    sigma (R,K), rgb (R,K,3), deltas (R,) -> (object color G (R,3),
    opacity O (R,), per-sample weights (R,K)).
    """
    optical = sigma * deltas.unsqueeze(-1)               # (R,K)
    accum = torch.cumsum(optical, dim=-1)
    trans = torch.exp(-torch.cat(
        [torch.zeros_like(accum[:, :1]), accum[:, :-1]], dim=-1))
    alpha = 1.0 - torch.exp(-optical)
    weights = trans * alpha
    g = (weights.unsqueeze(-1) * rgb).sum(dim=1)
    opacity = 1.0 - torch.exp(-accum[:, -1])
    return g, opacity, weights


def render_rays(field, origins: np.ndarray, dirs: np.ndarray,
                t_near: np.ndarray, t_far: np.ndarray, n_samples: int,
                jitter: np.random.Generator | None = None):
    """Render arbitrary ray segments against a field with .query()."""
    t_vals, span = sample_segments(t_near, t_far, n_samples, jitter)
    o = torch.from_numpy(np.ascontiguousarray(origins, dtype=np.float32))
    d = torch.from_numpy(np.ascontiguousarray(dirs, dtype=np.float32))
    t = torch.from_numpy(t_vals.astype(np.float32))
    samples = RaySampleSet(o, d, t, torch.from_numpy(
        np.ascontiguousarray(span, dtype=np.float32)))
    pts = samples.positions.reshape(-1, 3)
    view_dirs = d.unsqueeze(1).expand(-1, n_samples, -1).reshape(-1, 3)
    sigma, rgb = field.query(pts, view_dirs)
    r, k = t.shape
    return integrate_rays(sigma.reshape(r, k), rgb.reshape(r, k, 3),
                          samples.deltas)


def make_background(view: SceneViewRGBD, mode: str, color=None,
                    seed: int | None = None) -> torch.Tensor:
    """The base layer a render composites onto."""
    if mode not in BACKGROUND_MODES:
        raise ValidationError(f"unknown background mode {mode!r}")
    h, w = view.depth.shape
    if mode == "scene":
        return torch.from_numpy(view.color.copy())
    if mode == "noise":
        vals = make_rng(0 if seed is None else seed).random((h, w, 3))
        return torch.from_numpy(vals.astype(np.float32))
    if mode == "color":
        if color is None:
            raise ValidationError("background mode 'color' needs a color")
        c = np.asarray(color, dtype=np.float32)
    else:
        c = {"white": 1.0, "black": 0.0, "gray": 0.5}[mode] \
            * np.ones(3, dtype=np.float32)
    return torch.from_numpy(np.broadcast_to(c, (h, w, 3)).copy())


def render_view(field, view: SceneViewRGBD, box: OrientedBox3D | None = None,
                n_samples: int = 64, background_mode: str = "scene",
                background_color=None, seed: int | None = None,
                stratified: bool = False,
                ray_chunk: int = 16384) -> RenderOutput:
    """Render the field through one cached camera and composite.

    The scene depth both gates rays (box entry behind the visible surface
    contributes nothing) and clips the integration range, so the object
    never bleeds through geometry in front of or inside the box.
    """
    box = box if box is not None else field.box
    cam = view.camera
    h, w = cam.height, cam.width

    jj, ii = np.meshgrid(np.arange(w), np.arange(h))
    pixels = np.stack([jj, ii], axis=-1).reshape(-1, 2).astype(np.float64)
    origins, dirs = pixel_rays(cam, pixels)

    from .geometry import intersect_rays_box
    hit, t_entry, t_exit = intersect_rays_box(origins, dirs, box)

    # Camera-frame depth rate of each ray, and the scene depth ahead of it.
    dz = dirs @ cam.rotation[:, 2]
    scene_depth = view.depth.reshape(-1).astype(np.float64)
    usable_depth = np.where(scene_depth >= NO_SURFACE_DEPTH / 2, np.inf,
                            scene_depth)

    box_depth = np.where(hit, t_entry * dz, np.inf)
    occluded = box_depth > usable_depth
    t_limit = np.where(np.isfinite(usable_depth) & (dz > 0),
                       usable_depth / np.maximum(dz, 1e-12), np.inf)
    t_far = np.minimum(t_exit, t_limit)
    active = hit & ~occluded & (t_far > t_entry)

    base = make_background(view, background_mode, background_color, seed)
    image = base.clone()
    object_rgb = torch.zeros(h * w, 3)
    opacity = torch.zeros(h * w)

    idx = np.flatnonzero(active)
    if idx.size:
        if stratified:
            jitter = make_rng(seed, "jitter") if seed is not None \
                else np.random.default_rng()
        else:
            jitter = None
        g_parts, o_parts = [], []
        for start in range(0, idx.size, ray_chunk):
            sel = idx[start:start + ray_chunk]
            g, o, _ = render_rays(field, origins[sel], dirs[sel],
                                  t_entry[sel], t_far[sel], n_samples,
                                  jitter)
            g_parts.append(g)
            o_parts.append(o)
        g = torch.cat(g_parts)
        o = torch.cat(o_parts)
        sel_t = torch.from_numpy(idx)
        flat_base = base.reshape(-1, 3)
        composed = g * o.unsqueeze(-1) \
            + (1.0 - o).unsqueeze(-1) * flat_base[sel_t]
        image = flat_base.clone()
        image[sel_t] = composed
        image = image.reshape(h, w, 3)
        object_rgb[sel_t] = g
        opacity[sel_t] = o

    return RenderOutput(
        view_id=view.view_id,
        image=image,
        object_rgb=object_rgb.reshape(h, w, 3),
        opacity=opacity.reshape(h, w),
        mask=torch.from_numpy(active.reshape(h, w).copy()),
        box_mask=torch.from_numpy(hit.reshape(h, w).copy()),
        background=base,
        background_mode=background_mode,
    )


def composite(object_rgb: torch.Tensor, opacity: torch.Tensor,
              base: torch.Tensor) -> torch.Tensor:
    """I = G*O + (1-O)*S with broadcasting over the color channel."""
    o = opacity.unsqueeze(-1)
    return object_rgb * o + (1.0 - o) * base


def _to_png(path: Path, array: np.ndarray):
    quant = np.clip(np.rint(array * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(quant).save(path)


def export_render(out: RenderOutput, box: OrientedBox3D, path,
                  step: int | None = None):
    """Write composite/object/opacity PNGs plus a small manifest."""
    root = Path(path)
    root.mkdir(parents=True, exist_ok=True)
    with torch.no_grad():
        _to_png(root / "composite.png", out.image.detach().numpy())
        _to_png(root / "object.png", out.object_rgb.detach().numpy())
        _to_png(root / "opacity.png", out.opacity.detach().numpy())
    manifest = {
        "view_id": out.view_id,
        "background_mode": out.background_mode,
        "width": out.width,
        "height": out.height,
        "box": box_to_text(box),
    }
    if step is not None:
        manifest["step"] = step
    (root / "render.json").write_text(json.dumps(manifest, indent=2))
    return root
