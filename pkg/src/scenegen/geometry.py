"""Cameras, rays and the click-to-box workflow.

Conventions: OpenCV-style pinhole cameras (x right, y down, z forward in the
camera frame); pixel coordinates are continuous with integer values at pixel
centers, so pixel (u, v) = (cx, cy) lies on the optical axis.  World-space
boxes are oriented: a rotation whose columns are the box axes plus per-axis
half extents.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import DegenerateSelectionError, ValidationError

_ORTHO_TOL = 1e-6
_PARALLEL_EPS = 1e-12


def _as_array(x, shape, name: str) -> np.ndarray:
    arr = np.asarray(x, dtype=np.float64)
    if arr.shape != shape:
        raise ValidationError(f"{name} must have shape {shape}, got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValidationError(f"{name} contains non-finite values")
    return arr


@dataclass(frozen=True)
class CameraView:
    """One predefined camera: intrinsics, pose and image size."""

    view_id: int
    intrinsics: np.ndarray      # (3,3) [[fx,0,cx],[0,fy,cy],[0,0,1]]
    cam_to_world: np.ndarray    # (4,4) rigid transform
    width: int
    height: int

    def __post_init__(self):
        K = _as_array(self.intrinsics, (3, 3), "intrinsics")
        T = _as_array(self.cam_to_world, (4, 4), "cam_to_world")
        object.__setattr__(self, "intrinsics", K)
        object.__setattr__(self, "cam_to_world", T)
        if K[0, 0] <= 0 or K[1, 1] <= 0:
            raise ValidationError("focal lengths must be positive")
        cx, cy = K[0, 2], K[1, 2]
        if not (0 <= cx <= self.width - 1 and 0 <= cy <= self.height - 1):
            raise ValidationError("principal point lies outside the image")
        R = T[:3, :3]
        if np.max(np.abs(R @ R.T - np.eye(3))) > _ORTHO_TOL:
            raise ValidationError("cam_to_world rotation is not orthonormal")
        if not np.allclose(T[3], [0, 0, 0, 1], atol=1e-9):
            raise ValidationError("cam_to_world last row must be [0,0,0,1]")

    @property
    def rotation(self) -> np.ndarray:
        return self.cam_to_world[:3, :3]

    @property
    def origin(self) -> np.ndarray:
        return self.cam_to_world[:3, 3]

    @property
    def view_dir(self) -> np.ndarray:
        """World-space forward (+z) direction of the camera."""
        return self.cam_to_world[:3, 2]

    def world_to_cam(self, points: np.ndarray) -> np.ndarray:
        """Map world points (...,3) into the camera frame."""
        p = np.asarray(points, dtype=np.float64)
        return (p - self.origin) @ self.rotation

    def cam_to_world_points(self, points: np.ndarray) -> np.ndarray:
        p = np.asarray(points, dtype=np.float64)
        return p @ self.rotation.T + self.origin


@dataclass(frozen=True)
class ClickSelection:
    """Three image clicks plus the box size ratios."""

    view_id: int
    clicks: tuple            # three (u, v) sub-pixel coordinates
    size_ratios: tuple       # (k_x, k_y, k_z), strictly positive

    def __post_init__(self):
        clicks = tuple((float(u), float(v)) for u, v in self.clicks)
        ratios = tuple(float(k) for k in self.size_ratios)
        object.__setattr__(self, "clicks", clicks)
        object.__setattr__(self, "size_ratios", ratios)
        if len(clicks) != 3:
            raise ValidationError("exactly three clicks are required")
        if len(ratios) != 3 or any(k <= 0 for k in ratios):
            raise ValidationError("size ratios must be three positive numbers")
        for i in range(3):
            for j in range(i + 1, 3):
                if clicks[i] == clicks[j]:
                    raise ValidationError("clicks must be pairwise distinct")

    def validate_in_bounds(self, view: CameraView) -> None:
        for u, v in self.clicks:
            if not (0 <= u <= view.width - 1 and 0 <= v <= view.height - 1):
                raise ValidationError(
                    f"click ({u}, {v}) is outside view {view.view_id} "
                    f"({view.width}x{view.height})")


@dataclass(frozen=True)
class OrientedBox3D:
    """User-placed generation region: center, orthonormal axes, half extents."""

    center: np.ndarray        # (3,)
    axes: np.ndarray          # (3,3), columns are unit x/y/z axes
    half_extents: np.ndarray  # (3,), strictly positive

    def __post_init__(self):
        c = _as_array(self.center, (3,), "center")
        A = _as_array(self.axes, (3, 3), "axes")
        h = _as_array(self.half_extents, (3,), "half_extents")
        object.__setattr__(self, "center", c)
        object.__setattr__(self, "axes", A)
        object.__setattr__(self, "half_extents", h)
        if np.max(np.abs(A.T @ A - np.eye(3))) > _ORTHO_TOL:
            raise ValidationError("box axes are not orthonormal")
        if np.linalg.det(A) < 0:
            raise ValidationError("box axes must be right-handed (det=+1)")
        if np.any(h <= 0):
            raise ValidationError("half extents must be strictly positive")

    @property
    def corners(self) -> np.ndarray:
        """The 8 box corners, (8,3), in world space."""
        signs = np.array([[(i >> a & 1) * 2 - 1 for a in range(3)]
                          for i in range(8)], dtype=np.float64)
        return self.center + (signs * self.half_extents) @ self.axes.T

    def contains(self, points: np.ndarray, slack: float = 0.0) -> np.ndarray:
        """Membership test for world points (...,3)."""
        local = (np.asarray(points, dtype=np.float64) - self.center) @ self.axes
        return np.all(np.abs(local) <= self.half_extents + slack, axis=-1)


@dataclass(frozen=True)
class Ray:
    """World-space ray with unit direction and pixel provenance."""

    origin: np.ndarray
    direction: np.ndarray
    view_id: int = -1
    pixel: tuple = (0.0, 0.0)

    def __post_init__(self):
        o = _as_array(self.origin, (3,), "origin")
        d = _as_array(self.direction, (3,), "direction")
        n = np.linalg.norm(d)
        if abs(n - 1.0) > _ORTHO_TOL:
            raise ValidationError("ray direction must be unit length")
        object.__setattr__(self, "origin", o)
        object.__setattr__(self, "direction", d)


@dataclass(frozen=True)
class RayBoxHit:
    """Result of a ray/box slab test."""

    hit: bool
    t_entry: float = 0.0
    t_exit: float = 0.0
    depth_entry: float = 0.0   # camera-frame depth of the entry point

    def __post_init__(self):
        if self.hit and not (0 <= self.t_entry < self.t_exit):
            raise ValidationError("hit requires 0 <= t_entry < t_exit")


# ---------------------------------------------------------------------------
# Projection
# ---------------------------------------------------------------------------

def back_project(view: CameraView, pixel, depth: float) -> np.ndarray:
    """Lift an image point at a camera-frame depth to a world point."""
    depth = float(depth)
    if not np.isfinite(depth) or depth <= 0:
        raise ValidationError(f"depth must be positive and finite, got {depth}")
    u, v = float(pixel[0]), float(pixel[1])
    if not (0 <= u <= view.width - 1 and 0 <= v <= view.height - 1):
        raise ValidationError(f"pixel ({u}, {v}) outside image bounds")
    K = view.intrinsics
    x = (u - K[0, 2]) * depth / K[0, 0]
    y = (v - K[1, 2]) * depth / K[1, 1]
    return view.cam_to_world_points(np.array([x, y, depth]))


def project(view: CameraView, point) -> tuple[np.ndarray, float]:
    """Pinhole-project a world point; returns ((u, v), camera depth).

    Depth <= 0 flags a behind-camera point; the pixel is still returned so
    callers can decide visibility themselves.
    """
    p = view.world_to_cam(_as_array(point, (3,), "point"))
    z = float(p[2])
    if z == 0.0:
        raise ValidationError("point lies on the camera plane (depth 0)")
    K = view.intrinsics
    u = K[0, 0] * p[0] / z + K[0, 2]
    v = K[1, 1] * p[1] / z + K[1, 2]
    return np.array([u, v]), z


def pixel_rays(view: CameraView, pixels: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """World-space unit rays through continuous pixel coordinates (...,2).

    Returns (origins, directions); origins broadcast to the pixel shape.
    """
    px = np.asarray(pixels, dtype=np.float64)
    K = view.intrinsics
    x = (px[..., 0] - K[0, 2]) / K[0, 0]
    y = (px[..., 1] - K[1, 2]) / K[1, 1]
    d_cam = np.stack([x, y, np.ones_like(x)], axis=-1)
    d_world = d_cam @ view.rotation.T
    d_world /= np.linalg.norm(d_world, axis=-1, keepdims=True)
    origins = np.broadcast_to(view.origin, d_world.shape)
    return origins, d_world


def view_ray(view: CameraView, pixel) -> Ray:
    """The camera ray through one pixel."""
    _, d = pixel_rays(view, np.asarray(pixel, dtype=np.float64))
    return Ray(view.origin.copy(), d, view_id=view.view_id,
               pixel=(float(pixel[0]), float(pixel[1])))


# ---------------------------------------------------------------------------
# Box construction from clicks
# ---------------------------------------------------------------------------

def build_box(sel: ClickSelection, view: CameraView,
              depth_lookup: Callable[[float, float], float]) -> OrientedBox3D:
    """Construct the oriented box from three clicked points.

    The three clicks are back-projected through ``depth_lookup``; the box x
    axis is parallel to p1-p2, z is the plane normal (sign chosen to face
    the camera), y completes a right-handed frame.  Each side length is the
    corresponding size ratio times d = |p1-p2|, and the box is anchored so
    the midpoint of its -z face sits on the clicked plane's centroid.
    """
    sel.validate_in_bounds(view)
    pts = []
    for (u, v) in sel.clicks:
        depth = float(depth_lookup(u, v))
        if not np.isfinite(depth) or depth <= 0:
            raise ValidationError(
                f"no usable depth at click ({u:.2f}, {v:.2f}): {depth}")
        pts.append(back_project(view, (u, v), depth))
    p1, p2, p3 = pts

    edge = p1 - p2
    d = float(np.linalg.norm(edge))
    normal = np.cross(p2 - p1, p3 - p1)
    area = 0.5 * float(np.linalg.norm(normal))
    if area <= 1e-8:
        raise DegenerateSelectionError(
            f"clicked points are collinear (triangle area {area:.3e})")

    x_axis = edge / d
    z_axis = normal / np.linalg.norm(normal)
    # Plane normals are sign-ambiguous; grow the box toward the camera.
    if float(np.dot(z_axis, view.view_dir)) > 0:
        z_axis = -z_axis
    y_axis = np.cross(z_axis, x_axis)
    y_axis /= np.linalg.norm(y_axis)
    x_axis = np.cross(y_axis, z_axis)

    k = np.asarray(sel.size_ratios, dtype=np.float64)
    half = 0.5 * k * d
    center = (p1 + p2 + p3) / 3.0 + z_axis * half[2]
    return OrientedBox3D(center, np.stack([x_axis, y_axis, z_axis], axis=1), half)


# ---------------------------------------------------------------------------
# Ray/box intersection
# ---------------------------------------------------------------------------

def intersect_ray_box(ray: Ray, box: OrientedBox3D,
                      view: CameraView | None = None) -> RayBoxHit:
    """Slab test in the box frame; entry clamped to t >= 0.

    When ``view`` is given, ``depth_entry`` is the camera-frame depth of the
    entry point (used by the scene occlusion gate); otherwise it is the
    distance t_entry itself.
    """
    o = (ray.origin - box.center) @ box.axes
    d = ray.direction @ box.axes
    t0, t1 = _slab_interval(o, d, box.half_extents)
    if t1 is None or t1 <= max(t0, 0.0):
        return RayBoxHit(False)
    t_entry = max(t0, 0.0)
    if view is not None:
        entry = ray.origin + t_entry * ray.direction
        depth = float(view.world_to_cam(entry)[2])
    else:
        depth = t_entry
    return RayBoxHit(True, t_entry, t1, depth)


def _slab_interval(o, d, half):
    t0, t1 = -np.inf, np.inf
    for a in range(3):
        if abs(d[a]) < _PARALLEL_EPS:
            if abs(o[a]) > half[a]:
                return 0.0, None
            continue
        inv = 1.0 / d[a]
        ta = (-half[a] - o[a]) * inv
        tb = (half[a] - o[a]) * inv
        if ta > tb:
            ta, tb = tb, ta
        t0 = max(t0, ta)
        t1 = min(t1, tb)
        if t1 <= t0:
            return 0.0, None
    return t0, t1


def intersect_rays_box(origins: np.ndarray, directions: np.ndarray,
                       box: OrientedBox3D):
    """Vectorized slab test for (N,3) rays.

    Returns (hit (N,) bool, t_entry (N,), t_exit (N,)); entries clamped to 0.
    Misses carry zeros.
    """
    o = (np.asarray(origins, dtype=np.float64) - box.center) @ box.axes
    d = np.asarray(directions, dtype=np.float64) @ box.axes
    h = box.half_extents

    parallel = np.abs(d) < _PARALLEL_EPS
    d_safe = np.where(parallel, 1.0, d)
    ta = (-h - o) / d_safe
    tb = (h - o) / d_safe
    lo = np.minimum(ta, tb)
    hi = np.maximum(ta, tb)
    # Parallel axes constrain nothing if the origin is inside the slab,
    # and reject the ray otherwise.
    inside = np.abs(o) <= h
    lo = np.where(parallel, -np.inf, lo)
    hi = np.where(parallel, np.inf, hi)
    reject = np.any(parallel & ~inside, axis=-1)

    t0 = lo.max(axis=-1)
    t1 = hi.min(axis=-1)
    t_entry = np.maximum(t0, 0.0)
    hit = (~reject) & (t1 > t_entry) & (t1 > 0)
    return hit, np.where(hit, t_entry, 0.0), np.where(hit, t1, 0.0)


def entry_depths(view: CameraView, origins, directions, t_entry) -> np.ndarray:
    """Camera-frame depth of ray points origin + t*dir, vectorized."""
    pts = np.asarray(origins) + np.asarray(t_entry)[..., None] * np.asarray(directions)
    return view.world_to_cam(pts)[..., 2]


def project_box_mask(box: OrientedBox3D, view: CameraView) -> np.ndarray:
    """Exact box silhouette: mask[i,j] = 1 iff the pixel ray hits the box."""
    jj, ii = np.meshgrid(np.arange(view.width), np.arange(view.height))
    pixels = np.stack([jj, ii], axis=-1).astype(np.float64)
    origins, dirs = pixel_rays(view, pixels)
    hit, _, _ = intersect_rays_box(origins.reshape(-1, 3), dirs.reshape(-1, 3), box)
    mask = hit.reshape(view.height, view.width)
    if not mask.any():
        behind = all(project(view, c)[1] <= 0 for c in box.corners)
        if behind:
            warnings.warn(f"box is entirely behind camera {view.view_id}; "
                          "returning an empty mask")
    return mask


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------

def box_to_text(box: OrientedBox3D) -> str:
    """Stable text record (fixed field order; round-trip exact floats)."""
    def fmt(values):
        return " ".join(repr(float(v)) for v in values)
    return (f"center {fmt(box.center)}\n"
            f"axes {fmt(box.axes.flatten(order='F'))}\n"
            f"half_extents {fmt(box.half_extents)}\n")


def box_from_text(text: str) -> OrientedBox3D:
    fields = {}
    for line in text.strip().splitlines():
        parts = line.split()
        if not parts:
            continue
        fields[parts[0]] = [float(x) for x in parts[1:]]
    try:
        center = np.array(fields["center"], dtype=np.float64)
        axes = np.array(fields["axes"], dtype=np.float64).reshape(3, 3, order="F")
        half = np.array(fields["half_extents"], dtype=np.float64)
    except (KeyError, ValueError) as exc:
        raise ValidationError(f"malformed box record: {exc}") from exc
    return OrientedBox3D(center, axes, half)


def look_at_camera(view_id: int, eye, target, up, fx: float, fy: float,
                   width: int, height: int,
                   cx: float | None = None, cy: float | None = None) -> CameraView:
    """Convenience constructor: camera at ``eye`` looking at ``target``."""
    eye = np.asarray(eye, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    up = np.asarray(up, dtype=np.float64)
    z = target - eye
    z = z / np.linalg.norm(z)
    x = np.cross(z, up)           # y points down in OpenCV convention
    n = np.linalg.norm(x)
    if n < 1e-9:
        raise ValidationError("up vector is parallel to the viewing direction")
    x /= n
    y = np.cross(z, x)
    T = np.eye(4)
    T[:3, :3] = np.stack([x, y, z], axis=1)
    T[:3, 3] = eye
    cx = (width - 1) / 2.0 if cx is None else cx
    cy = (height - 1) / 2.0 if cy is None else cy
    K = np.array([[fx, 0, cx], [0, fy, cy], [0, 0, 1.0]])
    return CameraView(view_id, K, T, width, height)
