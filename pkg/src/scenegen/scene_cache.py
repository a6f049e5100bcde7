"""Frozen scene context: per-view RGB-D images with cameras.

The scene arrives pre-rendered (any upstream renderer can produce the
directory layout below) and is immutable after load; the optimizer only ever
reads it.  Layout::

    cameras.json        [{view_id, intrinsics (row-major 9), cam_to_world
                          (row-major 16), width, height}, ...]
    scene.json          {format_version, world_scale, color_format, provenance}
    color/<view_id>.png or .f32   (f32 = raw little-endian float32 H*W*3)
    depth/<view_id>.f32           (raw little-endian float32 H*W, row-major)

Depth uses the maximum finite float32 as the "no surface" sentinel; rays
there are never scene-occluded.  A small analytic ray caster
(:func:`make_synthetic_scene`) produces caches with exactly known depth for
tests and demos.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from PIL import Image

from .errors import CacheFormatError, ValidationError
from .geometry import CameraView, look_at_camera

FORMAT_VERSION = 1
NO_SURFACE_DEPTH = float(np.finfo(np.float32).max)


@dataclass(frozen=True)
class SceneViewRGBD:
    """One cached scene render: color, depth and the camera that made them."""

    view_id: int
    color: np.ndarray   # (H,W,3) float32 in [0,1]
    depth: np.ndarray   # (H,W) float32, world units; NO_SURFACE_DEPTH = none
    camera: CameraView

    def __post_init__(self):
        color = np.asarray(self.color, dtype=np.float32)
        depth = np.asarray(self.depth, dtype=np.float32)
        object.__setattr__(self, "color", color)
        object.__setattr__(self, "depth", depth)
        self.validate()

    def validate(self):
        vid = self.view_id
        if self.color.ndim != 3 or self.color.shape[2] != 3:
            raise CacheFormatError(f"view {vid}: color must be (H,W,3)")
        if self.depth.shape != self.color.shape[:2]:
            raise CacheFormatError(
                f"view {vid}: depth {self.depth.shape} does not match color "
                f"{self.color.shape[:2]}")
        if (self.camera.height, self.camera.width) != self.color.shape[:2]:
            raise CacheFormatError(
                f"view {vid}: camera resolution "
                f"{(self.camera.height, self.camera.width)} does not match "
                f"images {self.color.shape[:2]}")
        if not np.all(np.isfinite(self.color)):
            raise CacheFormatError(f"view {vid}: color has non-finite values")
        if self.color.min() < 0 or self.color.max() > 1:
            raise CacheFormatError(f"view {vid}: color outside [0,1]")
        if not np.all(np.isfinite(self.depth)) or self.depth.min() < 0:
            raise CacheFormatError(f"view {vid}: invalid depth values")
        if self.camera.view_id != vid:
            raise CacheFormatError(f"view {vid}: camera id mismatch")

    def depth_lookup(self, u: float, v: float) -> float:
        """Bilinear depth at a sub-pixel coordinate (integer = pixel center).

        Returns +inf when any contributing pixel has no surface (or zero
        depth), so callers can reject the click.
        """
        h, w = self.depth.shape
        u = min(max(float(u), 0.0), w - 1.0)
        v = min(max(float(v), 0.0), h - 1.0)
        j0, i0 = int(np.floor(u)), int(np.floor(v))
        j1, i1 = min(j0 + 1, w - 1), min(i0 + 1, h - 1)
        fu, fv = u - j0, v - i0
        corners = self.depth[[i0, i0, i1, i1], [j0, j1, j0, j1]].astype(np.float64)
        if np.any(corners >= NO_SURFACE_DEPTH / 2) or np.any(corners <= 0):
            return float("inf")
        wts = np.array([(1 - fu) * (1 - fv), fu * (1 - fv),
                        (1 - fu) * fv, fu * fv])
        return float(np.dot(corners, wts))


@dataclass(frozen=True)
class SceneCache:
    """Ordered, validated collection of cached scene views."""

    views: tuple
    world_scale: float = 1.0
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        views = tuple(self.views)
        object.__setattr__(self, "views", views)
        if not views:
            raise CacheFormatError("a scene cache needs at least one view")
        ids = [v.view_id for v in views]
        if len(set(ids)) != len(ids):
            raise CacheFormatError(f"duplicate view ids: {sorted(ids)}")

    def __len__(self):
        return len(self.views)

    def view(self, view_id: int) -> SceneViewRGBD:
        for v in self.views:
            if v.view_id == view_id:
                return v
        raise KeyError(f"no view with id {view_id}")

    @property
    def view_ids(self):
        return [v.view_id for v in self.views]


# ---------------------------------------------------------------------------
# Disk format
# ---------------------------------------------------------------------------

def save_cache(cache: SceneCache, path, color_format: str = "png") -> None:
    """Write a cache directory; deterministic bytes for deterministic input."""
    if color_format not in ("png", "f32"):
        raise ValidationError(f"unknown color_format {color_format!r}")
    root = Path(path)
    (root / "color").mkdir(parents=True, exist_ok=True)
    (root / "depth").mkdir(parents=True, exist_ok=True)

    cameras = []
    for v in sorted(cache.views, key=lambda v: v.view_id):
        cam = v.camera
        cameras.append({
            "view_id": v.view_id,
            "intrinsics": [float(x) for x in cam.intrinsics.flatten()],
            "cam_to_world": [float(x) for x in cam.cam_to_world.flatten()],
            "width": cam.width,
            "height": cam.height,
        })
        depth = np.ascontiguousarray(v.depth, dtype="<f4")
        (root / "depth" / f"{v.view_id}.f32").write_bytes(depth.tobytes())
        if color_format == "png":
            quant = np.clip(np.rint(v.color * 255.0), 0, 255).astype(np.uint8)
            Image.fromarray(quant).save(root / "color" / f"{v.view_id}.png")
        else:
            buf = np.ascontiguousarray(v.color, dtype="<f4")
            (root / "color" / f"{v.view_id}.f32").write_bytes(buf.tobytes())

    (root / "cameras.json").write_text(json.dumps(cameras, indent=2))
    meta = {
        "format_version": FORMAT_VERSION,
        "world_scale": cache.world_scale,
        "color_format": color_format,
        "provenance": cache.provenance,
    }
    (root / "scene.json").write_text(json.dumps(meta, indent=2))


def load_cache(path) -> SceneCache:
    """Load and validate a cache directory; errors name the offending view."""
    root = Path(path)
    cam_file = root / "cameras.json"
    if not cam_file.exists():
        raise CacheFormatError(f"missing cameras.json in {root}")
    try:
        cam_records = json.loads(cam_file.read_text())
    except json.JSONDecodeError as exc:
        raise CacheFormatError(f"cameras.json is not valid JSON: {exc}") from exc

    meta = {}
    if (root / "scene.json").exists():
        meta = json.loads((root / "scene.json").read_text())
        if meta.get("format_version", FORMAT_VERSION) > FORMAT_VERSION:
            raise CacheFormatError(
                f"cache format version {meta['format_version']} is newer than "
                f"supported ({FORMAT_VERSION})")

    views = []
    for rec in cam_records:
        try:
            vid = int(rec["view_id"])
            camera = CameraView(
                vid,
                np.array(rec["intrinsics"], dtype=np.float64).reshape(3, 3),
                np.array(rec["cam_to_world"], dtype=np.float64).reshape(4, 4),
                int(rec["width"]), int(rec["height"]))
        except (KeyError, ValueError, ValidationError) as exc:
            raise CacheFormatError(
                f"bad camera record {rec.get('view_id', '?')}: {exc}") from exc

        depth_file = root / "depth" / f"{vid}.f32"
        if not depth_file.exists():
            raise CacheFormatError(f"view {vid}: missing {depth_file.name}")
        depth = np.frombuffer(depth_file.read_bytes(), dtype="<f4")
        if depth.size != camera.width * camera.height:
            raise CacheFormatError(
                f"view {vid}: depth buffer has {depth.size} values, expected "
                f"{camera.width * camera.height}")
        depth = depth.reshape(camera.height, camera.width)

        png = root / "color" / f"{vid}.png"
        f32 = root / "color" / f"{vid}.f32"
        if png.exists():
            color = np.asarray(Image.open(png).convert("RGB"),
                               dtype=np.float32) / 255.0
        elif f32.exists():
            color = np.frombuffer(f32.read_bytes(), dtype="<f4")
            if color.size != camera.width * camera.height * 3:
                raise CacheFormatError(
                    f"view {vid}: color buffer size {color.size} is wrong")
            color = color.reshape(camera.height, camera.width, 3)
        else:
            raise CacheFormatError(f"view {vid}: no color image found")

        views.append(SceneViewRGBD(vid, color, depth, camera))

    return SceneCache(tuple(views),
                      world_scale=float(meta.get("world_scale", 1.0)),
                      provenance=dict(meta.get("provenance", {})))


# ---------------------------------------------------------------------------
# Analytic synthetic scenes
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Plane:
    """Infinite plane through ``point`` with unit ``normal``.

    ``checker`` optionally alternates albedo with ``checker_albedo`` on a
    square grid of ``checker_scale`` world units.
    """
    point: tuple
    normal: tuple
    albedo: tuple = (0.6, 0.6, 0.6)
    checker_albedo: tuple | None = None
    checker_scale: float = 0.25


@dataclass(frozen=True)
class Sphere:
    center: tuple
    radius: float
    albedo: tuple = (0.8, 0.3, 0.3)


@dataclass(frozen=True)
class AxisBox:
    min_corner: tuple
    max_corner: tuple
    albedo: tuple = (0.4, 0.4, 0.7)


def _plane_hits(prim: Plane, origins, dirs):
    n = np.asarray(prim.normal, dtype=np.float64)
    n = n / np.linalg.norm(n)
    p0 = np.asarray(prim.point, dtype=np.float64)
    denom = dirs @ n
    t = np.where(np.abs(denom) > 1e-12, ((p0 - origins) @ n) / np.where(
        np.abs(denom) > 1e-12, denom, 1.0), np.inf)
    t = np.where(t > 1e-9, t, np.inf)
    normals = np.broadcast_to(n, dirs.shape)
    return t, normals


def _sphere_hits(prim: Sphere, origins, dirs):
    c = np.asarray(prim.center, dtype=np.float64)
    oc = origins - c
    b = np.sum(oc * dirs, axis=-1)
    disc = b * b - (np.sum(oc * oc, axis=-1) - prim.radius ** 2)
    sq = np.sqrt(np.maximum(disc, 0.0))
    t0 = -b - sq
    t1 = -b + sq
    t = np.where(t0 > 1e-9, t0, np.where(t1 > 1e-9, t1, np.inf))
    t = np.where(disc > 0, t, np.inf)
    pts = origins + t[..., None] * dirs
    normals = (pts - c) / prim.radius
    return t, normals


def _box_hits(prim: AxisBox, origins, dirs):
    lo = np.asarray(prim.min_corner, dtype=np.float64)
    hi = np.asarray(prim.max_corner, dtype=np.float64)
    inv = 1.0 / np.where(np.abs(dirs) > 1e-12, dirs, 1e-12)
    ta = (lo - origins) * inv
    tb = (hi - origins) * inv
    tmin = np.minimum(ta, tb)
    tmax = np.maximum(ta, tb)
    t0 = tmin.max(axis=-1)
    t1 = tmax.min(axis=-1)
    t = np.where((t1 > np.maximum(t0, 1e-9)) & (t0 > 1e-9), t0, np.inf)
    # Face normal: the axis achieving the entry time, signed by ray direction.
    axis = np.argmax(tmin, axis=-1)
    normals = np.zeros_like(dirs)
    idx = np.arange(dirs.shape[0])
    normals[idx, axis] = -np.sign(dirs[idx, axis])
    return t, normals


_HIT_FNS = {Plane: _plane_hits, Sphere: _sphere_hits, AxisBox: _box_hits}


def _albedo_at(prim, points):
    base = np.asarray(prim.albedo, dtype=np.float64)
    colors = np.broadcast_to(base, points.shape).copy()
    if isinstance(prim, Plane) and prim.checker_albedo is not None:
        n = np.asarray(prim.normal, dtype=np.float64)
        n = n / np.linalg.norm(n)
        # Build in-plane axes for the checker parameterization.
        a = np.array([1.0, 0.0, 0.0])
        if abs(np.dot(a, n)) > 0.9:
            a = np.array([0.0, 1.0, 0.0])
        u = np.cross(n, a)
        u /= np.linalg.norm(u)
        v = np.cross(n, u)
        rel = points - np.asarray(prim.point, dtype=np.float64)
        iu = np.floor(rel @ u / prim.checker_scale).astype(np.int64)
        iv = np.floor(rel @ v / prim.checker_scale).astype(np.int64)
        alt = (iu + iv) % 2 == 1
        colors[alt] = np.asarray(prim.checker_albedo, dtype=np.float64)
    return colors


def make_synthetic_scene(primitives: Sequence, cameras: Sequence[CameraView],
                         light_dir=(0.3, -0.2, -0.9), ambient: float = 0.35,
                         background=(0.85, 0.9, 0.95),
                         world_scale: float = 1.0) -> SceneCache:
    """Analytic ray-cast RGB-D renders of plane/sphere/box primitives.

    Lambert shading with a single directional light (``light_dir`` points
    from the light toward the scene) plus an ambient floor; pixels hitting
    nothing get the background color and the no-surface depth sentinel.
    """
    if not cameras:
        raise ValidationError("at least one camera is required")
    light = -np.asarray(light_dir, dtype=np.float64)
    light = light / np.linalg.norm(light)
    bg = np.asarray(background, dtype=np.float64)

    views = []
    for cam in cameras:
        from .geometry import pixel_rays
        jj, ii = np.meshgrid(np.arange(cam.width), np.arange(cam.height))
        pixels = np.stack([jj, ii], axis=-1).astype(np.float64)
        origins, dirs = pixel_rays(cam, pixels)
        o = origins.reshape(-1, 3)
        d = dirs.reshape(-1, 3)

        best_t = np.full(o.shape[0], np.inf)
        color = np.broadcast_to(bg, o.shape).copy()
        for prim in primitives:
            t, normals = _HIT_FNS[type(prim)](prim, o, d)
            closer = t < best_t
            if not closer.any():
                continue
            pts = o[closer] + t[closer, None] * d[closer]
            alb = _albedo_at(prim, pts)
            lam = np.maximum(normals[closer] @ light, 0.0)
            shade = ambient + (1.0 - ambient) * lam
            color[closer] = alb * shade[:, None]
            best_t[closer] = t[closer]

        hit = np.isfinite(best_t)
        pts = o + np.where(hit, best_t, 0.0)[:, None] * d
        depth = np.where(hit, cam.world_to_cam(pts)[:, 2], NO_SURFACE_DEPTH)
        views.append(SceneViewRGBD(
            cam.view_id,
            np.clip(color, 0, 1).reshape(cam.height, cam.width, 3).astype(np.float32),
            depth.reshape(cam.height, cam.width).astype(np.float32),
            cam))

    return SceneCache(tuple(views), world_scale=world_scale,
                      provenance={"source": "scenegen-synthetic"})


def desk_primitives(with_occluder: bool = False, extra=()):
    """Checkered ground plane + a matte sphere; optional occluding wall."""
    prims = [
        Plane(point=(0, 0, 0), normal=(0, 0, 1), albedo=(0.55, 0.52, 0.48),
              checker_albedo=(0.35, 0.33, 0.31), checker_scale=0.2),
        Sphere(center=(0.45, 0.35, 0.12), radius=0.12, albedo=(0.25, 0.45, 0.7)),
    ]
    if with_occluder:
        prims.append(AxisBox(min_corner=(-0.5, -0.02, 0.0),
                             max_corner=(0.5, 0.02, 0.45),
                             albedo=(0.5, 0.42, 0.35)))
    prims.extend(extra)
    return prims


def desk_cameras(n_views: int = 4, size: int = 64, radius: float = 1.4,
                 height: float = 1.0, fov_scale: float = 1.1):
    """Cameras on a circle looking at the origin from above."""
    cams = []
    f = fov_scale * size
    for i in range(n_views):
        ang = 2 * np.pi * (i + 0.5) / n_views
        eye = (radius * np.cos(ang), radius * np.sin(ang), height)
        cams.append(look_at_camera(i, eye, (0, 0, 0.05), (0, 0, 1),
                                   fx=f, fy=f, width=size, height=size))
    return cams


def make_desk_cache(n_views: int = 4, size: int = 64,
                    with_occluder: bool = False, extra=()) -> SceneCache:
    """The standard small test scene used across the test suite and demos."""
    return make_synthetic_scene(desk_primitives(with_occluder, extra),
                                desk_cameras(n_views, size))
