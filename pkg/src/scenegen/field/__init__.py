from .hashgrid import (HashGridConfig, compiled_available, encode,
                       encode_torch, resolve_backend)
from .field import (ObjectField, load_checkpoint, save_checkpoint, sh_basis,
                    CHECKPOINT_MAGIC, CHECKPOINT_VERSION)

__all__ = [
    "HashGridConfig", "ObjectField", "encode", "encode_torch",
    "compiled_available", "resolve_backend", "sh_basis",
    "save_checkpoint", "load_checkpoint",
    "CHECKPOINT_MAGIC", "CHECKPOINT_VERSION",
]
