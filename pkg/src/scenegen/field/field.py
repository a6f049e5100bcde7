"""The in-box radiance field: hash-grid features, tiny MLPs, checkpoints.

The field lives in the oriented box's normalized coordinates ([0,1]^3 inside
the box) so the grid capacity is spent entirely on the editable region.
Density comes from a one-hidden-layer trunk over the grid features through a
shifted softplus; color from a two-hidden-layer head over trunk features and
a spherical-harmonic encoding of the view direction (in box frame), through
a sigmoid.

``ObjectField.empty`` builds a field whose density bias is so low that
rendered opacity underflows to exactly zero in float32, which gives the
"compositing an untrained field is a no-op" guarantee bit for bit.
"""

from __future__ import annotations

import hashlib
import io
import math
import os
from pathlib import Path

import numpy as np
import torch
from torch import nn

from ..errors import CheckpointError, ValidationError
from ..geometry import OrientedBox3D, box_from_text, box_to_text
from .hashgrid import HashGridConfig, encode

CHECKPOINT_MAGIC = "scenegen.field"
CHECKPOINT_VERSION = 1

_C0 = 0.28209479177387814
_C1 = 0.4886025119029199
_C2 = (1.0925484305920792, -1.0925484305920792, 0.31539156525252005,
       -1.0925484305920792, 0.5462742152960396)
_C3 = (-0.5900435899266435, 2.890611442640554, -0.4570457994644658,
       0.3731763325901154, -0.4570457994644658, 1.445305721320277,
       -0.5900435899266435)


def sh_basis(degree: int, dirs: torch.Tensor) -> torch.Tensor:
    """Real spherical harmonics of unit directions, degree^2 components."""
    if not 1 <= degree <= 4:
        raise ValidationError(f"sh degree {degree} unsupported")
    out = torch.empty(dirs.shape[:-1] + (degree * degree,),
                      dtype=dirs.dtype, device=dirs.device)
    out[..., 0] = _C0
    if degree > 1:
        x, y, z = dirs[..., 0], dirs[..., 1], dirs[..., 2]
        out[..., 1] = -_C1 * y
        out[..., 2] = _C1 * z
        out[..., 3] = -_C1 * x
    if degree > 2:
        xx, yy, zz = x * x, y * y, z * z
        xy, yz, xz = x * y, y * z, x * z
        out[..., 4] = _C2[0] * xy
        out[..., 5] = _C2[1] * yz
        out[..., 6] = _C2[2] * (2.0 * zz - xx - yy)
        out[..., 7] = _C2[3] * xz
        out[..., 8] = _C2[4] * (xx - yy)
    if degree > 3:
        out[..., 9] = _C3[0] * y * (3.0 * xx - yy)
        out[..., 10] = _C3[1] * xy * z
        out[..., 11] = _C3[2] * y * (4.0 * zz - xx - yy)
        out[..., 12] = _C3[3] * z * (2.0 * zz - 3.0 * xx - 3.0 * yy)
        out[..., 13] = _C3[4] * x * (4.0 * zz - xx - yy)
        out[..., 14] = _C3[5] * z * (xx - yy)
        out[..., 15] = _C3[6] * x * (xx - 3.0 * yy)
    return out


class ObjectField(nn.Module):
    """Hash-grid radiance field confined to one oriented box."""

    def __init__(self, box: OrientedBox3D, grid: HashGridConfig | None = None,
                 hidden_dim: int = 64, geo_features: int = 15,
                 density_bias: float = -10.0, sh_degree: int = 4,
                 seed: int = 0):
        super().__init__()
        self.grid = grid or HashGridConfig()
        self.hidden_dim = hidden_dim
        self.geo_features = geo_features
        self.sh_degree = sh_degree

        gen = torch.Generator().manual_seed(seed)
        table = torch.empty(self.grid.total_rows,
                            self.grid.features_per_level)
        table.uniform_(-1e-4, 1e-4, generator=gen)
        self.table = nn.Parameter(table)

        self.trunk = nn.Sequential(
            nn.Linear(self.grid.output_dim, hidden_dim), nn.ReLU(),
            nn.Linear(hidden_dim, 1 + geo_features))
        self.color_net = nn.Sequential(
            nn.Linear(geo_features + sh_degree * sh_degree, hidden_dim),
            nn.ReLU(),
            nn.Linear(hidden_dim, hidden_dim), nn.ReLU(),
            nn.Linear(hidden_dim, 3))
        for mod in list(self.trunk) + list(self.color_net):
            if isinstance(mod, nn.Linear):
                bound = 1.0 / math.sqrt(mod.in_features)
                mod.weight.data.uniform_(-bound, bound, generator=gen)
                mod.bias.data.uniform_(-bound, bound, generator=gen)

        self.register_buffer("density_bias",
                             torch.tensor(float(density_bias)))
        self.register_buffer("active_levels_buf",
                             torch.tensor(self.grid.n_levels,
                                          dtype=torch.int64))
        self.register_buffer("box_center",
                             torch.from_numpy(box.center.copy()))
        self.register_buffer("box_axes", torch.from_numpy(box.axes.copy()))
        self.register_buffer("box_half",
                             torch.from_numpy(box.half_extents.copy()))

    # -- box frame ---------------------------------------------------------

    @property
    def box(self) -> OrientedBox3D:
        return OrientedBox3D(self.box_center.numpy().copy(),
                             self.box_axes.numpy().copy(),
                             self.box_half.numpy().copy())

    @property
    def active_levels(self) -> int:
        return int(self.active_levels_buf.item())

    def set_active_levels(self, n: int):
        if not 0 <= n <= self.grid.n_levels:
            raise ValidationError(f"active_levels {n} out of range "
                                  f"[0, {self.grid.n_levels}]")
        self.active_levels_buf.fill_(n)

    def world_to_normalized(self, points: torch.Tensor) -> torch.Tensor:
        """World points to box-normalized [0,1]^3 (inside the box)."""
        c = self.box_center.to(points.dtype)
        a = self.box_axes.to(points.dtype)
        h = self.box_half.to(points.dtype)
        return (points - c) @ a / (2.0 * h) + 0.5

    def dirs_to_box(self, dirs: torch.Tensor) -> torch.Tensor:
        return dirs @ self.box_axes.to(dirs.dtype)

    # -- evaluation --------------------------------------------------------

    def encode_positions(self, pos01: torch.Tensor,
                         backend: str | None = None) -> torch.Tensor:
        return encode(pos01, self.table, self.grid, self.active_levels,
                      backend=backend)

    def query_normalized(self, pos01: torch.Tensor, dirs_box: torch.Tensor):
        if pos01.ndim != 2 or pos01.shape[1] != 3:
            raise ValidationError("positions must be (M,3)")
        if dirs_box.shape != pos01.shape:
            raise ValidationError("directions must match positions")
        if not (torch.isfinite(pos01).all() and
                torch.isfinite(dirs_box).all()):
            raise ValidationError("non-finite field query input")
        feats = self.encode_positions(pos01)
        trunk_out = self.trunk(feats)
        sigma = torch.nn.functional.softplus(trunk_out[:, 0]
                                             + self.density_bias)
        geo = trunk_out[:, 1:]
        d = dirs_box / dirs_box.norm(dim=-1, keepdim=True).clamp_min(1e-12)
        sh = sh_basis(self.sh_degree, d)
        rgb = torch.sigmoid(self.color_net(torch.cat([geo, sh], dim=-1)))
        return sigma, rgb

    def query(self, points_world: torch.Tensor, dirs_world: torch.Tensor):
        """Density and view-dependent color at world points (float32)."""
        pts = points_world.to(torch.float32)
        pos01 = self.world_to_normalized(pts)
        return self.query_normalized(pos01,
                                     self.dirs_to_box(dirs_world
                                                      .to(torch.float32)))

    forward = query

    @classmethod
    def empty(cls, box: OrientedBox3D, grid: HashGridConfig | None = None,
              **kwargs) -> "ObjectField":
        """A field whose rendered opacity is exactly zero everywhere.

        softplus(raw - 40) underflows so far below float32 resolution that
        1 - exp(-sum(sigma * delta)) evaluates to exactly 0.
        """
        kwargs.pop("density_bias", None)
        return cls(box, grid=grid, density_bias=-40.0, **kwargs)


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------

def save_checkpoint(field: ObjectField, path, extra: dict | None = None):
    """Atomic versioned checkpoint with a payload integrity digest."""
    payload = {
        "grid": field.grid.to_dict(),
        "hidden_dim": field.hidden_dim,
        "geo_features": field.geo_features,
        "sh_degree": field.sh_degree,
        "box": box_to_text(field.box),
        "state_dict": field.state_dict(),
        "extra": extra or {},
    }
    buf = io.BytesIO()
    torch.save(payload, buf)
    data = buf.getvalue()
    container = {
        "magic": CHECKPOINT_MAGIC,
        "version": CHECKPOINT_VERSION,
        "sha256": hashlib.sha256(data).hexdigest(),
        "payload": data,
    }
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        torch.save(container, fh)
    os.replace(tmp, path)


def load_checkpoint(path) -> tuple:
    """Load a checkpoint; returns (field, extra). Raises CheckpointError."""
    path = Path(path)
    if not path.exists():
        raise CheckpointError(f"checkpoint {path} does not exist")
    try:
        container = torch.load(path, map_location="cpu", weights_only=True)
    except Exception as exc:
        raise CheckpointError(f"unreadable checkpoint {path}: {exc}") from exc
    if not isinstance(container, dict) \
            or container.get("magic") != CHECKPOINT_MAGIC:
        raise CheckpointError(f"{path} is not a field checkpoint")
    if container.get("version", 0) > CHECKPOINT_VERSION:
        raise CheckpointError(
            f"checkpoint version {container.get('version')} is newer than "
            f"supported ({CHECKPOINT_VERSION})")
    data = container.get("payload")
    digest = hashlib.sha256(data).hexdigest()
    if digest != container.get("sha256"):
        raise CheckpointError(f"checkpoint {path} failed its integrity check")
    payload = torch.load(io.BytesIO(data), map_location="cpu",
                         weights_only=True)

    box = box_from_text(payload["box"])
    field = ObjectField(box, grid=HashGridConfig(**payload["grid"]),
                        hidden_dim=payload["hidden_dim"],
                        geo_features=payload["geo_features"],
                        sh_degree=payload["sh_degree"])
    try:
        field.load_state_dict(payload["state_dict"], strict=True)
    except RuntimeError as exc:
        raise CheckpointError(f"checkpoint state mismatch: {exc}") from exc
    return field, payload.get("extra", {})
