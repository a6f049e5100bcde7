"""Deterministic seed derivation.

All randomness in the package is keyed by (master seed, purpose tags) so a
run is reproducible and resumable without serializing generator state: the
stream for step s is recomputed from (seed, "...", s) on demand.
"""

import hashlib

import numpy as np

_MASK63 = (1 << 63) - 1


def child_seed(master: int, *tags) -> int:
    """Derive a stable 63-bit child seed from a master seed and tags."""
    key = repr((int(master),) + tuple(tags)).encode()
    digest = hashlib.sha256(key).digest()
    return int.from_bytes(digest[:8], "little") & _MASK63


def rng(master: int, *tags) -> np.random.Generator:
    """A PCG64 generator seeded from the derived child seed."""
    return np.random.Generator(np.random.PCG64(child_seed(master, *tags)))


def standard_normal(seed: int, shape) -> np.ndarray:
    """Canonical float32 Gaussian draw for a given seed.

    Shared by the score-distillation step and the stub provider so both
    sides regenerate the identical noise sample from the wire-level seed.
    """
    gen = np.random.Generator(np.random.PCG64(int(seed) & _MASK63))
    return gen.standard_normal(shape).astype(np.float32)
