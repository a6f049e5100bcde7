import json

import numpy as np
import pytest
import torch
from scipy.integrate import solve_ivp

from scenegen.compositor import (BACKGROUND_MODES, composite, export_render,
                                 integrate_rays, make_background, render_rays,
                                 render_view, sample_segments)
from scenegen.errors import ValidationError
from scenegen.field import ObjectField
from scenegen.geometry import OrientedBox3D, look_at_camera
from scenegen.scene_cache import NO_SURFACE_DEPTH, SceneViewRGBD


class ConstField:
    """Homogeneous medium: fixed sigma and color everywhere."""

    def __init__(self, sigma, color):
        self.sigma = sigma
        self.color = torch.tensor(color)

    def query(self, pts, dirs):
        n = pts.shape[0]
        return (torch.full((n,), float(self.sigma)),
                self.color.expand(n, 3).clone())


class TestSampling:
    def test_midpoints(self):
        t, d = sample_segments(np.array([1.0]), np.array([3.0]), 4)
        assert np.allclose(t[0], [1.25, 1.75, 2.25, 2.75])
        assert np.allclose(d, 0.5)

    def test_jitter_stays_in_segment(self):
        gen = np.random.default_rng(0)
        t, d = sample_segments(np.array([0.0]), np.array([1.0]), 10, gen)
        edges = np.arange(11) / 10
        assert np.all(t[0] >= edges[:-1]) and np.all(t[0] <= edges[1:])

    def test_bad_count(self):
        with pytest.raises(ValidationError):
            sample_segments(np.zeros(1), np.ones(1), 0)


class TestIntegration:
    def test_constant_medium_closed_form(self):
        sigma, length, k = 3.0, 0.8, 16
        deltas = torch.full((1,), length / k)
        g, o, w = integrate_rays(torch.full((1, k), sigma),
                                 torch.full((1, k, 3), 0.7), deltas)
        o_true = 1.0 - np.exp(-sigma * length)
        assert o[0].item() == pytest.approx(o_true, rel=1e-6)
        assert torch.allclose(g[0], torch.full((3,), 0.7 * o_true), rtol=1e-6)
        assert w.sum().item() == pytest.approx(o_true, rel=1e-6)

    def test_two_slab_medium(self):
        """Front slab then back slab; the analytic composite is
        c1*(1-e^-a) + c2*e^-a*(1-e^-b)."""
        k = 8
        sigma = torch.cat([torch.full((1, k), 2.0),
                           torch.full((1, k), 5.0)], dim=1)
        rgb = torch.cat([torch.full((1, k, 3), 1.0),
                         torch.full((1, k, 3), 0.2)], dim=1)
        deltas = torch.full((1,), 0.5 / k)   # each slab has length 0.5
        g, o, _ = integrate_rays(sigma, rgb, deltas)
        a, b = 2.0 * 0.5, 5.0 * 0.5
        g_true = 1.0 * (1 - np.exp(-a)) + 0.2 * np.exp(-a) * (1 - np.exp(-b))
        assert g[0, 0].item() == pytest.approx(g_true, rel=1e-6)
        assert o[0].item() == pytest.approx(1 - np.exp(-a - b), rel=1e-6)

    def test_vacuum(self):
        g, o, w = integrate_rays(torch.zeros(2, 4), torch.rand(2, 4, 3),
                                 torch.full((2,), 0.1))
        assert torch.all(g == 0) and torch.all(o == 0) and torch.all(w == 0)

    def test_weights_sum_matches_opacity(self):
        gen = torch.Generator().manual_seed(2)
        sigma = torch.rand(5, 32, generator=gen) * 10
        g, o, w = integrate_rays(sigma, torch.rand(5, 32, 3, generator=gen),
                                 torch.full((5,), 0.05))
        assert torch.allclose(w.sum(dim=-1), o, atol=1e-6)


def smooth_sigma(t):
    return 2.0 + 1.5 * np.sin(3.0 * t)


def smooth_color(t):
    return np.stack([0.5 + 0.3 * np.cos(t),
                     0.4 + 0.2 * np.sin(2.0 * t),
                     0.6 + 0.1 * np.cos(5.0 * t)], axis=-1)


def reference_transport(t0, t1):
    """High-accuracy ODE solve of the transport equation along one ray."""
    def rhs(t, y):
        s = smooth_sigma(t)
        c = smooth_color(np.array([t]))[0]
        trans = y[0]
        return np.concatenate([[-s * trans], trans * s * c])

    sol = solve_ivp(rhs, (t0, t1), [1.0, 0.0, 0.0, 0.0], rtol=1e-11,
                    atol=1e-13, dense_output=False)
    trans = sol.y[0, -1]
    return 1.0 - trans, sol.y[1:, -1]


class TestQuadratureConvergence:
    def test_error_shrinks_and_meets_tolerance(self):
        t0, t1 = 0.2, 1.7
        o_true, g_true = reference_transport(t0, t1)
        errs = []
        for k in (32, 64, 128, 256):
            t_vals, delta = sample_segments(np.array([t0]), np.array([t1]), k)
            sig = torch.from_numpy(smooth_sigma(t_vals))
            rgb = torch.from_numpy(smooth_color(t_vals))
            g, o, _ = integrate_rays(sig, rgb, torch.from_numpy(delta))
            err = max(abs(o[0].item() - o_true),
                      float(np.abs(g[0].numpy() - g_true).max()))
            errs.append(err)
        assert errs == sorted(errs, reverse=True)
        assert errs[-1] < 1e-3
        # second order: each doubling cuts the error about 4x
        assert errs[0] / errs[-1] > 20


def flat_depth_view(view_id, cam, depth_value, color=0.25):
    h, w = cam.height, cam.width
    return SceneViewRGBD(
        view_id=view_id, camera=cam,
        color=np.full((h, w, 3), color, dtype=np.float32),
        depth=np.full((h, w), depth_value, dtype=np.float32))


def axial_camera(size=33, focal=40.0):
    """Camera on -z looking at the origin; center pixel ray is the z axis."""
    return look_at_camera(0, np.array([0.0, 0.0, -2.0]), np.zeros(3),
                          np.array([0.0, 1.0, 0.0]), focal, focal, size, size)


class GradientField:
    """Density ramps along x so jittered sample positions matter."""

    def query(self, pts, dirs):
        sigma = torch.clamp(8.0 * (pts[:, 0] + 0.5), min=0.0)
        rgb = torch.sigmoid(pts * 3.0)
        return sigma, rgb


def axis_box(half=0.3):
    return OrientedBox3D(center=np.zeros(3), axes=np.eye(3),
                         half_extents=np.full(3, half))


class TestRenderView:
    def test_empty_field_is_bit_identical(self, desk_cache, desk_box,
                                          small_grid):
        field = ObjectField.empty(desk_box, grid=small_grid)
        view = desk_cache.views[0]
        with torch.no_grad():
            out = render_view(field, view, n_samples=32)
        assert torch.equal(out.image, torch.from_numpy(view.color))
        assert torch.all(out.opacity == 0)
        assert out.mask.any()

    def test_opaque_field_covers_mask(self, desk_cache, desk_box, small_grid):
        box = desk_box
        cam = desk_cache.views[0]
        field = ConstField(500.0, (0.9, 0.1, 0.1))
        with torch.no_grad():
            out = render_view(field, cam, box=box, n_samples=32)
        on = out.mask
        # grazing rays have near-zero chords, so check the bulk, not all
        assert (out.opacity[on] > 0.999).float().mean() > 0.8
        assert out.opacity.max() > 0.9999
        assert torch.all(out.image[~on].eq(
            torch.from_numpy(cam.color)[~on]))

    def test_scene_depth_clips_integration(self):
        """A visible surface halfway through the box halves the optical
        depth along the axial ray."""
        cam = axial_camera()
        view = flat_depth_view(0, cam, depth_value=2.0)
        field = ConstField(4.0, (1.0, 1.0, 1.0))
        with torch.no_grad():
            out = render_view(field, view, box=axis_box(0.3), n_samples=64)
        o_axial = out.opacity[16, 16].item()
        assert o_axial == pytest.approx(1.0 - np.exp(-4.0 * 0.3), rel=1e-5)

    def test_surface_in_front_gates_ray(self):
        cam = axial_camera()
        view = flat_depth_view(0, cam, depth_value=1.2)   # before box entry
        field = ConstField(500.0, (1.0, 0.0, 0.0))
        with torch.no_grad():
            out = render_view(field, view, box=axis_box(0.3), n_samples=16)
        assert not out.mask.any()
        assert out.box_mask.any()
        assert torch.equal(out.image, torch.from_numpy(view.color))

    def test_sentinel_depth_never_gates(self):
        cam = axial_camera()
        view = flat_depth_view(0, cam, depth_value=NO_SURFACE_DEPTH)
        field = ConstField(4.0, (1.0, 1.0, 1.0))
        with torch.no_grad():
            out = render_view(field, view, box=axis_box(0.3), n_samples=64)
        # full chord through the box, nothing clipped
        assert out.opacity[16, 16].item() == pytest.approx(
            1.0 - np.exp(-4.0 * 0.6), rel=1e-5)

    def test_wall_occludes_box_pixels(self, occluded_cache, desk_box,
                                      small_grid):
        """With the thin wall in the cache, pixels whose box entry lies
        behind the wall stay bit-identical even for an opaque field."""
        field = ConstField(500.0, (0.0, 1.0, 0.0))
        blocked_somewhere = False
        for view in occluded_cache.views:
            with torch.no_grad():
                out = render_view(field, view, box=desk_box, n_samples=16)
            gated = out.box_mask & ~out.mask
            if gated.any():
                blocked_somewhere = True
                assert torch.equal(out.image[gated],
                                   torch.from_numpy(view.color)[gated])
        assert blocked_somewhere

    def test_stratified_seed_determinism(self, desk_cache, desk_box):
        field = GradientField()
        view = desk_cache.views[1]
        with torch.no_grad():
            a = render_view(field, view, box=desk_box, n_samples=16,
                            stratified=True, seed=42)
            b = render_view(field, view, box=desk_box, n_samples=16,
                            stratified=True, seed=42)
            c = render_view(field, view, box=desk_box, n_samples=16,
                            stratified=True, seed=43)
        assert torch.equal(a.image, b.image)
        assert not torch.equal(a.image, c.image)

    def test_chunking_invariant(self, desk_cache, desk_box):
        field = ConstField(6.0, (0.3, 0.5, 0.7))
        view = desk_cache.views[0]
        with torch.no_grad():
            a = render_view(field, view, box=desk_box, n_samples=16,
                            ray_chunk=7)
            b = render_view(field, view, box=desk_box, n_samples=16,
                            ray_chunk=100000)
        assert torch.allclose(a.image, b.image, atol=1e-7)


class TestBackgrounds:
    def test_solid_modes(self, desk_cache):
        view = desk_cache.views[0]
        assert torch.all(make_background(view, "white") == 1.0)
        assert torch.all(make_background(view, "black") == 0.0)
        assert torch.all(make_background(view, "gray") == 0.5)
        c = make_background(view, "color", color=(0.1, 0.2, 0.3))
        assert torch.allclose(c[0, 0], torch.tensor([0.1, 0.2, 0.3]))

    def test_scene_mode_copies(self, desk_cache):
        view = desk_cache.views[0]
        bg = make_background(view, "scene")
        assert torch.equal(bg, torch.from_numpy(view.color))
        bg[0, 0, 0] = -1.0
        assert view.color[0, 0, 0] != -1.0

    def test_noise_is_seeded(self, desk_cache):
        view = desk_cache.views[0]
        a = make_background(view, "noise", seed=7)
        b = make_background(view, "noise", seed=7)
        c = make_background(view, "noise", seed=8)
        assert torch.equal(a, b) and not torch.equal(a, c)
        assert a.min() >= 0 and a.max() <= 1

    def test_errors(self, desk_cache):
        view = desk_cache.views[0]
        with pytest.raises(ValidationError):
            make_background(view, "plaid")
        with pytest.raises(ValidationError):
            make_background(view, "color")

    def test_mode_list_is_stable(self):
        assert set(BACKGROUND_MODES) == {"scene", "white", "black", "gray",
                                         "color", "noise"}


class TestCompositeAndExport:
    def test_composite_formula(self):
        g = torch.tensor([[[1.0, 0.0, 0.0]]])
        s = torch.tensor([[[0.0, 0.0, 1.0]]])
        o = torch.tensor([[0.25]])
        out = composite(g, o, s)
        assert torch.allclose(out, torch.tensor([[[0.25, 0.0, 0.75]]]))

    def test_export_files(self, desk_cache, desk_box, small_grid, tmp_path):
        field = ObjectField.empty(desk_box, grid=small_grid)
        with torch.no_grad():
            out = render_view(field, desk_cache.views[0], n_samples=8)
        root = export_render(out, desk_box, tmp_path / "r", step=12)
        names = sorted(p.name for p in root.iterdir())
        assert names == ["composite.png", "object.png", "opacity.png",
                         "render.json"]
        meta = json.loads((root / "render.json").read_text())
        assert meta["view_id"] == 0 and meta["step"] == 12
        assert meta["width"] == 64 and "box" in meta

    def test_render_rays_direct(self):
        field = ConstField(2.0, (0.5, 0.5, 0.5))
        o = np.zeros((3, 3))
        d = np.tile(np.array([0.0, 0.0, 1.0]), (3, 1))
        g, op, w = render_rays(field, o, d, np.zeros(3), np.full(3, 1.0), 32)
        assert op.shape == (3,) and g.shape == (3, 3)
        assert torch.allclose(op, torch.full((3,),
                                             1.0 - np.exp(-2.0)), rtol=1e-5)
