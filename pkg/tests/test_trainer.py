import json

import numpy as np
import pytest
import torch

from scenegen.errors import ConfigError, ValidationError
from scenegen.field import HashGridConfig, load_checkpoint
from scenegen.geometry import OrientedBox3D
from scenegen.guidance import NoiseSchedule
from scenegen.objectives import read_loss_records
from scenegen.trainer import (JobState, TrainConfig, active_level_schedule,
                              augmented_positions, cosine_lr,
                              is_augmented_step, render_all_views, train)


class TestSchedules:
    def test_active_levels(self):
        assert active_level_schedule(0) == 2
        assert active_level_schedule(999) == 2
        assert active_level_schedule(1000) == 3
        assert active_level_schedule(5500) == 7
        assert active_level_schedule(10 ** 6) == 16
        assert active_level_schedule(100, initial=1, interval=50,
                                     max_levels=4) == 3
        with pytest.raises(ValidationError):
            active_level_schedule(-1)

    def test_augmented_positions_stratified(self):
        for block in range(20):
            pos = augmented_positions(7, block)
            assert len(pos) == 3 and len(set(pos)) == 3
            assert all(0 <= p < 10 for p in pos)
        assert augmented_positions(7, 3) == augmented_positions(7, 3)
        # different blocks eventually differ
        assert len({augmented_positions(7, b) for b in range(10)}) > 1

    def test_exactly_three_in_ten(self):
        for start in range(0, 100, 10):
            n = sum(is_augmented_step(11, s) for s in range(start, start + 10))
            assert n == 3

    def test_cosine_lr(self):
        assert cosine_lr(0, 100, 1e-2) == pytest.approx(1e-2)
        assert cosine_lr(100, 100, 1e-2) == pytest.approx(1e-3)
        assert cosine_lr(50, 100, 1e-2) == pytest.approx(1e-2 * 0.55)
        assert cosine_lr(5, 0, 3.0) == 3.0


class TestConfig:
    def test_round_trip(self):
        cfg = TrainConfig(prompt="a mug", master_seed=9, total_steps=50,
                          grid=HashGridConfig(n_levels=4, table_size_log2=12),
                          augment_modes=("color",))
        back = TrainConfig.from_dict(cfg.to_dict())
        assert back == cfg

    def test_unknown_key_rejected(self):
        with pytest.raises(ConfigError, match="unknown"):
            TrainConfig.from_dict({"promt": "typo"})

    def test_validation(self):
        with pytest.raises(ConfigError):
            TrainConfig(total_steps=-1)
        with pytest.raises(ConfigError):
            TrainConfig(augment_k=11)
        with pytest.raises(ConfigError):
            TrainConfig(augment_modes=("plaid",))
        with pytest.raises(ConfigError):
            TrainConfig(lr_table=0.0)

    def test_load_with_overrides(self, tmp_path):
        p = tmp_path / "cfg.json"
        p.write_text(json.dumps({"prompt": "x", "total_steps": 7}))
        cfg = TrainConfig.load(p, {"total_steps": 9})
        assert cfg.prompt == "x" and cfg.total_steps == 9
        with pytest.raises(ConfigError):
            TrainConfig.load(tmp_path / "missing.json")

    def test_nested_sections_parse(self):
        d = TrainConfig().to_dict()
        assert isinstance(d["grid"], dict)
        cfg = TrainConfig.from_dict(d)
        assert cfg.grid == HashGridConfig()


class TestJobState:
    def test_legal(self):
        JobState.check(JobState.PENDING, JobState.RUNNING)
        JobState.check(JobState.RUNNING, JobState.COMPLETED)
        JobState.check(JobState.RUNNING, JobState.CANCELLED)
        JobState.check(JobState.PENDING, JobState.CANCELLED)

    def test_illegal(self):
        for old, new in [(JobState.COMPLETED, JobState.RUNNING),
                         (JobState.CANCELLED, JobState.RUNNING),
                         (JobState.FAILED, JobState.COMPLETED),
                         (JobState.PENDING, JobState.COMPLETED)]:
            with pytest.raises(ValidationError):
                JobState.check(old, new)


def gray_target(req):
    return np.full(req.noisy.shape, 0.35, dtype=np.float32)


def tiny_config(**kw):
    base = dict(prompt="a small cube", master_seed=21, total_steps=8,
                grid=HashGridConfig(n_levels=4, table_size_log2=12),
                n_samples=8, provider_size=32, use_style=False,
                preview_every=0, checkpoint_every=0,
                schedule=NoiseSchedule())
    base.update(kw)
    return TrainConfig(**base)


@pytest.fixture()
def oracle():
    from scenegen.guidance import TargetOracleProvider
    return TargetOracleProvider(gray_target, NoiseSchedule())


class TestTrainLoop:
    def test_smoke_completes_and_writes_artifacts(self, desk_cache, desk_box,
                                                  oracle, tmp_path):
        cfg = tiny_config()
        seen = []
        result = train(desk_cache, desk_box, oracle, cfg, tmp_path / "run",
                       progress=lambda s, r: seen.append(s))
        assert result.status == "completed"
        assert result.steps_done == 8
        assert seen == list(range(8))
        assert (tmp_path / "run" / "config.json").exists()
        assert result.checkpoint.exists()
        records = read_loss_records(tmp_path / "run" / "losses.ndjson")
        assert len(records) == 8
        for rec in records:
            assert {"sds", "sparsity", "entropy", "total",
                    "view_id", "background"} <= set(rec)
        summary = json.loads((tmp_path / "run" / "train.json").read_text())
        assert summary["status"] == "completed"
        assert summary["steps_done"] == 8

    def test_checkpoint_cadence_and_extra(self, desk_cache, desk_box, oracle,
                                          tmp_path):
        cfg = tiny_config(total_steps=7, checkpoint_every=3)
        result = train(desk_cache, desk_box, oracle, cfg, tmp_path / "run")
        _, extra = load_checkpoint(result.checkpoint)
        assert extra["step"] == 7
        assert extra["config"]["total_steps"] == 7
        assert extra["optimizer"] is not None

    def test_cancellation_is_clean(self, desk_cache, desk_box, oracle,
                                   tmp_path):
        cfg = tiny_config(total_steps=50)
        calls = {"n": 0}

        def stop():
            calls["n"] += 1
            return calls["n"] > 4

        result = train(desk_cache, desk_box, oracle, cfg, tmp_path / "run",
                       should_stop=stop)
        assert result.status == "cancelled"
        assert result.steps_done == 4
        _, extra = load_checkpoint(result.checkpoint)
        assert extra["step"] == 4

    def test_resume_matches_straight_run(self, desk_cache, desk_box, oracle,
                                         tmp_path):
        """Cancel at step 4 of 8, resume, and land bit-identical to a run
        that never stopped."""
        cfg = tiny_config(total_steps=8)

        straight = train(desk_cache, desk_box, oracle, cfg, tmp_path / "a")

        calls = {"n": 0}

        def stop():
            calls["n"] += 1
            return calls["n"] > 4

        first = train(desk_cache, desk_box, oracle, cfg, tmp_path / "b",
                      should_stop=stop)
        assert first.status == "cancelled" and first.steps_done == 4
        second = train(desk_cache, None, oracle, None, tmp_path / "b",
                       resume_from=first.checkpoint)
        assert second.status == "completed" and second.steps_done == 8

        sd_a = straight.field.state_dict()
        sd_b = second.field.state_dict()
        assert set(sd_a) == set(sd_b)
        for k in sd_a:
            assert torch.equal(sd_a[k], sd_b[k]), k

    def test_same_seed_same_result(self, desk_cache, desk_box, oracle,
                                   tmp_path):
        cfg = tiny_config(total_steps=5)
        a = train(desk_cache, desk_box, oracle, cfg, tmp_path / "a")
        b = train(desk_cache, desk_box, oracle, cfg, tmp_path / "b")
        for k, v in a.field.state_dict().items():
            assert torch.equal(v, b.field.state_dict()[k]), k
        c = train(desk_cache, desk_box, oracle,
                  tiny_config(total_steps=5, master_seed=99), tmp_path / "c")
        assert not torch.equal(a.field.table, c.field.table)

    def test_invisible_box_skips(self, desk_cache, oracle, tmp_path):
        far_box = OrientedBox3D(center=np.array([50.0, 50.0, 50.0]),
                                axes=np.eye(3),
                                half_extents=np.full(3, 0.1))
        cfg = tiny_config(total_steps=3)
        result = train(desk_cache, far_box, oracle, cfg, tmp_path / "run")
        assert result.status == "completed"
        records = read_loss_records(tmp_path / "run" / "losses.ndjson")
        assert len(records) == 3
        assert all("skipped" in r for r in records)

    def test_zero_steps(self, desk_cache, desk_box, oracle, tmp_path):
        cfg = tiny_config(total_steps=0)
        result = train(desk_cache, desk_box, oracle, cfg, tmp_path / "run")
        assert result.steps_done == 0
        assert result.checkpoint.exists()

    def test_previews_written(self, desk_cache, desk_box, oracle, tmp_path):
        cfg = tiny_config(total_steps=4, preview_every=2)
        train(desk_cache, desk_box, oracle, cfg, tmp_path / "run")
        pngs = sorted((tmp_path / "run" / "previews").glob("*.png"))
        assert len(pngs) == 4    # steps 2 and 4, two views each

    def test_style_branch_runs(self, desk_cache, desk_box, oracle, tmp_path):
        cfg = tiny_config(total_steps=2, use_style=True)
        result = train(desk_cache, desk_box, oracle, cfg, tmp_path / "run")
        assert result.status == "completed"
        rec = result.last_record
        assert "saturation" in rec


class TestRenderAllViews:
    def test_writes_each_view(self, desk_cache, desk_box, oracle, tmp_path):
        cfg = tiny_config(total_steps=1)
        result = train(desk_cache, desk_box, oracle, cfg, tmp_path / "run")
        out = render_all_views(result.field, desk_cache, desk_box, cfg,
                               tmp_path / "renders", step=1)
        for view in desk_cache.views:
            d = out / f"view{view.view_id}"
            assert (d / "composite.png").exists()
            assert (d / "render.json").exists()


class TestBackgroundDraw:
    def test_deterministic_and_valid(self):
        from scenegen.trainer import _step_background
        cfg = tiny_config(total_steps=1)
        for step in range(40):
            mode, color = _step_background(cfg, step)
            mode2, color2 = _step_background(cfg, step)
            assert (mode, color) == (mode2, color2)
            if mode == "color":
                assert len(color) == 3
                assert all(0.0 <= c <= 1.0 for c in color)
            elif mode == "noise":
                assert color is None
            else:
                assert mode == "scene"

    def test_restricted_modes(self):
        from scenegen.trainer import _step_background
        cfg = tiny_config(augment_modes=("color",))
        modes = {_step_background(cfg, s)[0] for s in range(50)}
        assert modes <= {"scene", "color"}
        assert "color" in modes
