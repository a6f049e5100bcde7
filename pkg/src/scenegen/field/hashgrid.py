"""Multi-resolution hash-grid positional encoding.

Each level l has a virtual dense grid of resolution N_l = floor(base *
growth**l); levels whose (N_l+1)**3 vertices fit in the table are stored
densely, finer ones share a 2**table_size_log2 row table addressed by the
XOR-of-primes spatial hash (in uint32 arithmetic).  Features of the 8 cell
corners are trilinearly blended.  Levels at or beyond ``active_levels``
contribute exactly zero, which lets training grow capacity coarse to fine
without touching optimizer state.

Two interchangeable backends compute the same function: a compiled kernel
(``scenegen.field._hash_cy``) and a pure torch fallback used when the
extension is unavailable, or when inputs are float64 or on an accelerator.
Corner indexing and hashing are deliberately bit-identical across the two.
"""

from __future__ import annotations

import os
from dataclasses import dataclass
from functools import lru_cache

import torch

from ..errors import ConfigError, ValidationError

_PRIMES = (1, 2654435761, 805459861)
_U32 = 0xFFFFFFFF

try:
    from . import _hash_cy
except ImportError:
    _hash_cy = None


@dataclass(frozen=True)
class HashGridConfig:
    n_levels: int = 16
    features_per_level: int = 2
    base_resolution: int = 16
    growth_factor: float = 2.0 ** (1.0 / 3.0)
    table_size_log2: int = 19

    def __post_init__(self):
        if self.n_levels < 1 or self.n_levels > 32:
            raise ConfigError(f"n_levels {self.n_levels} out of range")
        if self.features_per_level < 1:
            raise ConfigError("features_per_level must be positive")
        if self.base_resolution < 2:
            raise ConfigError("base_resolution must be at least 2")
        if self.growth_factor < 1.0:
            raise ConfigError("growth_factor must be >= 1")
        if not 4 <= self.table_size_log2 <= 24:
            raise ConfigError("table_size_log2 must be in [4, 24]")

    @property
    def table_size(self) -> int:
        return 1 << self.table_size_log2

    @property
    def resolutions(self) -> tuple:
        # Tiny epsilon so growth factors like 2**(1/3) land exactly on the
        # intended power-of-two resolutions despite float rounding.
        return tuple(int(self.base_resolution * self.growth_factor ** l + 1e-6)
                     for l in range(self.n_levels))

    @property
    def level_hashed(self) -> tuple:
        return tuple((n + 1) ** 3 > self.table_size for n in self.resolutions)

    @property
    def level_sizes(self) -> tuple:
        return tuple(self.table_size if h else (n + 1) ** 3
                     for n, h in zip(self.resolutions, self.level_hashed))

    @property
    def level_offsets(self) -> tuple:
        off, total = [], 0
        for s in self.level_sizes:
            off.append(total)
            total += s
        return tuple(off)

    @property
    def total_rows(self) -> int:
        return sum(self.level_sizes)

    @property
    def output_dim(self) -> int:
        return self.n_levels * self.features_per_level

    def to_dict(self) -> dict:
        return {
            "n_levels": self.n_levels,
            "features_per_level": self.features_per_level,
            "base_resolution": self.base_resolution,
            "growth_factor": self.growth_factor,
            "table_size_log2": self.table_size_log2,
        }


@lru_cache(maxsize=8)
def _corner_bits(device_str: str):
    bits = [[(c >> j) & 1 for j in range(3)] for c in range(8)]
    return torch.tensor(bits, dtype=torch.int64, device=device_str)


def _flat_indices(vertex: torch.Tensor, resolution: int, hashed: bool,
                  size: int) -> torch.Tensor:
    """Vertex (..., 3) int64 -> row index within one level's subtable."""
    if hashed:
        h = (vertex[..., 0] * _PRIMES[0]) & _U32
        h = h ^ ((vertex[..., 1] * _PRIMES[1]) & _U32)
        h = h ^ ((vertex[..., 2] * _PRIMES[2]) & _U32)
        return h & (size - 1)
    n1 = resolution + 1
    return vertex[..., 0] + n1 * (vertex[..., 1] + n1 * vertex[..., 2])


def encode_torch(positions: torch.Tensor, table: torch.Tensor,
                 config: HashGridConfig, active_levels: int) -> torch.Tensor:
    """Pure torch encoding, differentiable in both table and positions."""
    m = positions.shape[0]
    feats = config.features_per_level
    bits = _corner_bits(str(positions.device))
    pos = positions.clamp(0.0, 1.0)

    resolutions = config.resolutions
    hashed = config.level_hashed
    sizes = config.level_sizes
    offsets = config.level_offsets

    outs = []
    for level in range(config.n_levels):
        if level >= active_levels:
            outs.append(torch.zeros(m, feats, dtype=positions.dtype,
                                    device=positions.device))
            continue
        n = resolutions[level]
        x = pos * n
        x0 = x.detach().floor().long().clamp_(0, n - 1)
        frac = x - x0.to(x.dtype)
        vertex = x0.unsqueeze(1) + bits                       # (M,8,3)
        rows = _flat_indices(vertex, n, hashed[level], sizes[level])
        corner_feats = table[rows + offsets[level]]           # (M,8,F)
        w = torch.where(bits.bool(), frac.unsqueeze(1),
                        1.0 - frac.unsqueeze(1)).prod(dim=-1)  # (M,8)
        outs.append((corner_feats * w.unsqueeze(-1)).sum(dim=1))
    return torch.cat(outs, dim=-1)


class _CythonEncode(torch.autograd.Function):
    """Autograd wrapper around the compiled forward/backward kernels."""

    @staticmethod
    def forward(ctx, positions, table, config, active_levels, meta):
        res, off, sizes, hashed = meta
        out = torch.empty(positions.shape[0], config.output_dim,
                          dtype=torch.float32)
        _hash_cy.encode_forward(
            positions.detach().numpy(), table.detach().numpy(), out.numpy(),
            res, off, sizes, hashed, int(active_levels),
            config.features_per_level)
        ctx.save_for_backward(positions, table)
        ctx.config = config
        ctx.active_levels = int(active_levels)
        ctx.meta = meta
        return out

    @staticmethod
    def backward(ctx, grad_out):
        positions, table = ctx.saved_tensors
        res, off, sizes, hashed = ctx.meta
        grad_out = grad_out.contiguous()
        need_pos = ctx.needs_input_grad[0]
        grad_table = torch.zeros_like(table)
        grad_pos = torch.zeros_like(positions) if need_pos else None
        _hash_cy.encode_backward(
            positions.detach().numpy(), table.detach().numpy(),
            grad_out.detach().numpy(), grad_table.numpy(),
            grad_pos.numpy() if need_pos else None,
            res, off, sizes, hashed, ctx.active_levels,
            ctx.config.features_per_level)
        return grad_pos, grad_table, None, None, None


def compiled_available() -> bool:
    return _hash_cy is not None


def resolve_backend(requested: str | None = None) -> str:
    """Pick 'cython' or 'torch'; env SCENEGEN_HASH_BACKEND overrides auto."""
    choice = requested or os.environ.get("SCENEGEN_HASH_BACKEND", "auto")
    if choice not in ("auto", "cython", "torch"):
        raise ConfigError(f"unknown hash backend {choice!r}")
    if choice == "auto":
        return "cython" if compiled_available() else "torch"
    if choice == "cython" and not compiled_available():
        raise ConfigError("cython hash backend requested but the compiled "
                          "extension is not importable")
    return choice


@lru_cache(maxsize=32)
def _meta_arrays(config: HashGridConfig):
    import numpy as np
    return (np.asarray(config.resolutions, dtype=np.int64),
            np.asarray(config.level_offsets, dtype=np.int64),
            np.asarray(config.level_sizes, dtype=np.int64),
            np.asarray(config.level_hashed, dtype=np.uint8))


def encode(positions: torch.Tensor, table: torch.Tensor,
           config: HashGridConfig, active_levels: int,
           backend: str | None = None) -> torch.Tensor:
    """Encode (M,3) positions in [0,1]^3 to (M, n_levels*features)."""
    if positions.ndim != 2 or positions.shape[1] != 3:
        raise ValidationError(f"positions must be (M,3), got "
                              f"{tuple(positions.shape)}")
    if table.shape != (config.total_rows, config.features_per_level):
        raise ValidationError(
            f"table shape {tuple(table.shape)} does not match config "
            f"({config.total_rows}, {config.features_per_level})")
    if not 0 <= active_levels <= config.n_levels:
        raise ValidationError(f"active_levels {active_levels} out of range")

    use = resolve_backend(backend)
    # The compiled kernel is float32 CPU only; route anything else to torch.
    if (use == "cython"
            and positions.device.type == "cpu"
            and positions.dtype == torch.float32
            and table.dtype == torch.float32):
        return _CythonEncode.apply(positions.contiguous(), table, config,
                                   active_levels, _meta_arrays(config))
    return encode_torch(positions, table, config, active_levels)
