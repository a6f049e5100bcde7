"""The optimization loop that grows an object inside the box.

Every step renders one cached view (sometimes over an augmented background),
asks the guidance provider for a distillation direction on a crop around the
box, adds the context regularizers, and updates the field.  All stochastic
choices (view, timestep, noise, jitter, augmentation) derive from
(master_seed, purpose, step), so runs are reproducible and a resumed run
continues the exact stream of the original.
"""

from __future__ import annotations

import json
import math
import time
from dataclasses import asdict, dataclass, field as dc_field, replace
from pathlib import Path

import numpy as np
import torch

from .compositor import render_view, export_render
from .errors import ConfigError, ValidationError
from .field import HashGridConfig, ObjectField, load_checkpoint, save_checkpoint
from .geometry import OrientedBox3D
from .guidance import NoiseSchedule, sds_step
from .objectives import (LossWeights, PatchFeatureExtractor, ReferenceStats,
                         append_loss_record, total_loss)
from .scene_cache import SceneCache
from .seeding import child_seed, rng

AUGMENT_MODES = ("color", "noise")


# ---------------------------------------------------------------------------
# Schedules (pure functions of the step; frozen by tests)
# ---------------------------------------------------------------------------

def active_level_schedule(step: int, initial: int = 2, interval: int = 1000,
                          max_levels: int = 16) -> int:
    """Coarse-to-fine: one more hash level every ``interval`` steps."""
    if step < 0:
        raise ValidationError("step must be non-negative")
    return min(initial + step // interval, max_levels)


def augmented_positions(master_seed: int, block: int, k: int = 3,
                        n: int = 10) -> tuple:
    """Which offsets of a block of ``n`` steps use an augmented background.

    Stratified: exactly ``k`` of every ``n`` consecutive steps, positions
    drawn without replacement per block.
    """
    gen = rng(master_seed, "augment.block", block)
    return tuple(sorted(int(i) for i in gen.choice(n, size=k, replace=False)))


def is_augmented_step(master_seed: int, step: int, k: int = 3,
                      n: int = 10) -> bool:
    return (step % n) in augmented_positions(master_seed, step // n, k, n)


def cosine_lr(step: int, total_steps: int, base: float,
              min_factor: float = 0.1) -> float:
    """Cosine decay from ``base`` to ``base * min_factor``."""
    if total_steps <= 0:
        return base
    frac = min(max(step / total_steps, 0.0), 1.0)
    return base * (min_factor + (1.0 - min_factor)
                   * (1.0 + math.cos(math.pi * frac)) / 2.0)


# ---------------------------------------------------------------------------
# Configuration
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TrainConfig:
    prompt: str = ""
    master_seed: int = 0
    total_steps: int = 20000

    # field
    grid: HashGridConfig = dc_field(default_factory=HashGridConfig)
    hidden_dim: int = 64
    geo_features: int = 15
    sh_degree: int = 4
    density_bias: float = -10.0

    # rendering
    n_samples: int = 64
    stratified: bool = True
    provider_size: int = 64
    crop_margin: float = 1.25

    # augmentation
    augment_k: int = 3
    augment_n: int = 10
    augment_modes: tuple = AUGMENT_MODES

    # optimization
    lr_table: float = 1e-2
    lr_decoder: float = 1e-3
    lr_min_factor: float = 0.1
    adam_eps: float = 1e-15
    adam_betas: tuple = (0.9, 0.99)

    # coarse-to-fine
    initial_levels: int = 2
    level_interval: int = 1000

    weights: LossWeights = dc_field(default_factory=LossWeights)
    schedule: NoiseSchedule = dc_field(default_factory=NoiseSchedule)

    reference_view: int | None = None   # view used for appearance statistics
    use_style: bool = True

    preview_every: int = 500
    checkpoint_every: int = 1000

    def __post_init__(self):
        if self.total_steps < 0:
            raise ConfigError("total_steps must be non-negative")
        if not 0 <= self.augment_k <= self.augment_n:
            raise ConfigError("augment_k must lie in [0, augment_n]")
        if not set(self.augment_modes) <= set(AUGMENT_MODES):
            raise ConfigError(f"augment_modes must be drawn from "
                              f"{AUGMENT_MODES}")
        object.__setattr__(self, "augment_modes", tuple(self.augment_modes))
        if self.n_samples < 1:
            raise ConfigError("n_samples must be positive")
        if self.lr_table <= 0 or self.lr_decoder <= 0:
            raise ConfigError("learning rates must be positive")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["grid"] = self.grid.to_dict()
        d["adam_betas"] = list(self.adam_betas)
        return d

    @classmethod
    def from_dict(cls, data: dict) -> "TrainConfig":
        data = dict(data)
        if "grid" in data and isinstance(data["grid"], dict):
            data["grid"] = HashGridConfig(**data["grid"])
        if "weights" in data and isinstance(data["weights"], dict):
            data["weights"] = LossWeights(**data["weights"])
        if "schedule" in data and isinstance(data["schedule"], dict):
            data["schedule"] = NoiseSchedule(**data["schedule"])
        if "adam_betas" in data:
            data["adam_betas"] = tuple(data["adam_betas"])
        if "augment_modes" in data:
            data["augment_modes"] = tuple(data["augment_modes"])
        unknown = set(data) - {f.name for f in
                               cls.__dataclass_fields__.values()}
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls(**data)

    @classmethod
    def load(cls, path, overrides: dict | None = None) -> "TrainConfig":
        try:
            data = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        data.update(overrides or {})
        return cls.from_dict(data)


# ---------------------------------------------------------------------------
# Job lifecycle
# ---------------------------------------------------------------------------

class JobState:
    PENDING = "pending"
    RUNNING = "running"
    COMPLETED = "completed"
    FAILED = "failed"
    CANCELLED = "cancelled"

    TRANSITIONS = {
        PENDING: {RUNNING, CANCELLED},
        RUNNING: {COMPLETED, FAILED, CANCELLED},
        COMPLETED: set(),
        FAILED: set(),
        CANCELLED: set(),
    }

    @classmethod
    def check(cls, old: str, new: str):
        if new not in cls.TRANSITIONS.get(old, set()):
            raise ValidationError(f"illegal job transition {old} -> {new}")


@dataclass
class TrainResult:
    status: str
    steps_done: int
    out_dir: Path
    checkpoint: Path
    field: ObjectField
    last_record: dict | None = None


# ---------------------------------------------------------------------------
# The loop
# ---------------------------------------------------------------------------

def _decoder_params(field: ObjectField):
    return [p for n, p in field.named_parameters() if n != "table"]


def _make_optimizer(field: ObjectField, cfg: TrainConfig) -> torch.optim.Adam:
    return torch.optim.Adam(
        [{"params": [field.table], "lr": cfg.lr_table},
         {"params": _decoder_params(field), "lr": cfg.lr_decoder}],
        betas=cfg.adam_betas, eps=cfg.adam_eps)


def _step_background(cfg: TrainConfig, step: int):
    """(mode, color) for this step's render base layer."""
    if not is_augmented_step(cfg.master_seed, step, cfg.augment_k,
                             cfg.augment_n):
        return "scene", None
    gen = rng(cfg.master_seed, "augment.draw", step)
    mode = cfg.augment_modes[int(gen.integers(len(cfg.augment_modes)))]
    if mode == "color":
        return "color", tuple(float(c) for c in gen.random(3))
    return "noise", None


def _build_reference(cache: SceneCache, box: OrientedBox3D, cfg: TrainConfig,
                     extractor: PatchFeatureExtractor):
    from .geometry import project_box_mask
    vid = cfg.reference_view if cfg.reference_view is not None \
        else cache.views[0].view_id
    view = cache.view(vid)
    box_mask = project_box_mask(box, view.camera)
    stats = ReferenceStats.from_scene(
        torch.from_numpy(view.color), box_mask, extractor,
        cfg.weights.shadow_threshold)
    return stats


def train(cache: SceneCache, box: OrientedBox3D | None,
          provider, cfg: TrainConfig | None, out_dir, *, resume_from=None,
          progress=None, should_stop=None) -> TrainResult:
    """Run (or resume) an optimization job in ``out_dir``.

    ``provider`` is any GuidanceRequest -> noise prediction callable.
    ``progress(step, record)`` fires after every step; ``should_stop()`` is
    polled each step and turns the run into a clean cancellation.  When
    resuming, box and config come from the checkpoint and the passed values
    are ignored.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    ckpt_path = out_dir / "field.ckpt"
    loss_path = out_dir / "losses.ndjson"

    start_step = 0
    if resume_from is not None:
        field, extra = load_checkpoint(resume_from)
        cfg = TrainConfig.from_dict(extra["config"])
        box = field.box    # the checkpoint's box is authoritative
        start_step = int(extra["step"])
        optimizer = _make_optimizer(field, cfg)
        if extra.get("optimizer") is not None:
            optimizer.load_state_dict(extra["optimizer"])
    else:
        field = ObjectField(box, grid=cfg.grid, hidden_dim=cfg.hidden_dim,
                            geo_features=cfg.geo_features,
                            sh_degree=cfg.sh_degree,
                            density_bias=cfg.density_bias,
                            seed=child_seed(cfg.master_seed, "field.init"))
        optimizer = _make_optimizer(field, cfg)

    (out_dir / "config.json").write_text(
        json.dumps(cfg.to_dict(), indent=2))

    extractor = PatchFeatureExtractor() if cfg.use_style else None
    stats = _build_reference(cache, box, cfg,
                             extractor or PatchFeatureExtractor())

    view_list = list(cache.views)
    last_record = None
    status = "completed"
    t_start = time.monotonic()

    def save(step_next: int):
        save_checkpoint(field, ckpt_path, extra={
            "step": step_next,
            "optimizer": optimizer.state_dict(),
            "config": cfg.to_dict(),
        })

    step = start_step
    for step in range(start_step, cfg.total_steps):
        if should_stop is not None and should_stop():
            status = "cancelled"
            break

        field.set_active_levels(active_level_schedule(
            step, cfg.initial_levels, cfg.level_interval, cfg.grid.n_levels))

        vgen = rng(cfg.master_seed, "view.pick", step)
        view = view_list[int(vgen.integers(len(view_list)))]
        mode, color = _step_background(cfg, step)

        render = render_view(
            field, view, box, n_samples=cfg.n_samples,
            background_mode=mode, background_color=color,
            seed=child_seed(cfg.master_seed, "render", step),
            stratified=cfg.stratified)

        if not bool(render.mask.any()):
            record = {"step": step, "skipped": "box not visible",
                      "view_id": view.view_id}
            append_loss_record(loss_path, record)
            if progress is not None:
                progress(step, record)
            continue

        sds = sds_step(
            render.image, torch.from_numpy(view.color),
            render.mask.numpy(), provider, cfg.schedule, cfg.prompt,
            cfg.master_seed, step, margin=cfg.crop_margin,
            provider_size=cfg.provider_size,
            metadata={"view_id": view.view_id, "background_mode": mode,
                      "background_color": color})

        bundle = total_loss(render, sds, stats, cfg.weights, step,
                            cfg.total_steps, extractor)
        bundle.record.update({"view_id": view.view_id,
                              "background": mode,
                              "active_levels": field.active_levels})

        for group, base in zip(optimizer.param_groups,
                               (cfg.lr_table, cfg.lr_decoder)):
            group["lr"] = cosine_lr(step, cfg.total_steps, base,
                                    cfg.lr_min_factor)
        optimizer.zero_grad()
        bundle.total.backward()
        optimizer.step()

        append_loss_record(loss_path, bundle.record)
        last_record = bundle.record
        if progress is not None:
            progress(step, bundle.record)

        done = step + 1
        if cfg.preview_every and done % cfg.preview_every == 0:
            _write_previews(field, box, view_list, cfg, out_dir, done)
        if cfg.checkpoint_every and done % cfg.checkpoint_every == 0:
            save(done)

    steps_done = step + 1 if cfg.total_steps > start_step else start_step
    if status == "cancelled":
        steps_done = step
    save(steps_done)
    (out_dir / "train.json").write_text(json.dumps({
        "status": status,
        "steps_done": steps_done,
        "seconds": round(time.monotonic() - t_start, 3),
    }, indent=2))
    return TrainResult(status, steps_done, out_dir, ckpt_path, field,
                       last_record)


def _write_previews(field, box, views, cfg, out_dir, step, max_views=2):
    pdir = out_dir / "previews"
    pdir.mkdir(exist_ok=True)
    with torch.no_grad():
        for view in views[:max_views]:
            out = render_view(field, view, box,
                              n_samples=max(cfg.n_samples // 2, 8))
            from .compositor import _to_png
            _to_png(pdir / f"step{step:06d}_view{view.view_id}.png",
                    out.image.numpy())


def render_all_views(field, cache: SceneCache, box, cfg: TrainConfig,
                     out_dir, step: int | None = None):
    """Final-quality renders of every cached view, with manifests."""
    out_dir = Path(out_dir)
    with torch.no_grad():
        for view in cache.views:
            out = render_view(field, view, box, n_samples=cfg.n_samples)
            export_render(out, box, out_dir / f"view{view.view_id}",
                          step=step)
    return out_dir
