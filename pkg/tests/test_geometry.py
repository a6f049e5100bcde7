import numpy as np
import pytest

from scenegen.errors import DegenerateSelectionError, ValidationError
from scenegen.geometry import (CameraView, ClickSelection, OrientedBox3D,
                               Ray, back_project, box_from_text, box_to_text,
                               build_box, intersect_ray_box,
                               intersect_rays_box, look_at_camera,
                               pixel_rays, project, project_box_mask,
                               view_ray)


def make_camera(view_id=0, eye=(2.0, 1.0, 1.5), target=(0.0, 0.0, 0.0),
                size=64, f=80.0):
    return look_at_camera(view_id, eye, target, (0, 0, 1), fx=f, fy=f,
                          width=size, height=size)


class TestCameraView:
    def test_rotation_is_orthonormal(self):
        cam = make_camera()
        R = cam.rotation
        assert np.allclose(R @ R.T, np.eye(3), atol=1e-12)
        assert np.linalg.det(R) == pytest.approx(1.0)

    def test_rejects_bad_rotation(self):
        cam = make_camera()
        T = cam.cam_to_world.copy()
        T[:3, :3] *= 1.01
        with pytest.raises(ValidationError):
            CameraView(0, cam.intrinsics, T, cam.width, cam.height)

    def test_rejects_nonpositive_focal(self):
        cam = make_camera()
        K = cam.intrinsics.copy()
        K[0, 0] = -5.0
        with pytest.raises(ValidationError):
            CameraView(0, K, cam.cam_to_world, cam.width, cam.height)

    def test_rejects_principal_point_outside(self):
        cam = make_camera()
        K = cam.intrinsics.copy()
        K[0, 2] = cam.width + 10
        with pytest.raises(ValidationError):
            CameraView(0, K, cam.cam_to_world, cam.width, cam.height)

    def test_world_cam_round_trip(self):
        cam = make_camera()
        gen = np.random.default_rng(0)
        pts = gen.normal(size=(50, 3))
        again = cam.cam_to_world_points(cam.world_to_cam(pts))
        assert np.allclose(again, pts, atol=1e-12)


class TestProjection:
    def test_back_project_then_project(self):
        cam = make_camera()
        gen = np.random.default_rng(1)
        for _ in range(100):
            u = gen.uniform(0, cam.width - 1)
            v = gen.uniform(0, cam.height - 1)
            z = gen.uniform(0.2, 5.0)
            p = back_project(cam, (u, v), z)
            (u2, v2), z2 = project(cam, p)
            assert u2 == pytest.approx(u, abs=1e-9)
            assert v2 == pytest.approx(v, abs=1e-9)
            assert z2 == pytest.approx(z, abs=1e-12)

    def test_principal_point_ray_is_view_dir(self):
        cam = make_camera()
        K = cam.intrinsics
        r = view_ray(cam, (K[0, 2], K[1, 2]))
        assert np.allclose(r.direction, cam.view_dir, atol=1e-12)

    def test_pixel_rays_hit_their_pixels(self):
        cam = make_camera()
        gen = np.random.default_rng(2)
        px = np.stack([gen.uniform(0, cam.width - 1, 40),
                       gen.uniform(0, cam.height - 1, 40)], axis=-1)
        origins, dirs = pixel_rays(cam, px)
        pts = origins + 3.0 * dirs
        for p, (u, v) in zip(pts, px):
            (u2, v2), z = project(cam, p)
            assert z > 0
            assert u2 == pytest.approx(u, abs=1e-9)
            assert v2 == pytest.approx(v, abs=1e-9)

    def test_behind_camera_flagged(self):
        cam = make_camera(eye=(2, 0, 0), target=(0, 0, 0))
        behind = np.array([4.0, 0.0, 0.0])   # opposite the view direction
        _, z = project(cam, behind)
        assert z < 0

    def test_back_project_rejects_bad_depth(self):
        cam = make_camera()
        with pytest.raises(ValidationError):
            back_project(cam, (10, 10), 0.0)
        with pytest.raises(ValidationError):
            back_project(cam, (10, 10), np.inf)


class TestClickSelection:
    def test_needs_three_distinct(self):
        with pytest.raises(ValidationError):
            ClickSelection(0, ((1, 1), (1, 1), (2, 2)), (1, 1, 1))
        with pytest.raises(ValidationError):
            ClickSelection(0, ((1, 1), (2, 2)), (1, 1, 1))

    def test_positive_ratios(self):
        with pytest.raises(ValidationError):
            ClickSelection(0, ((1, 1), (2, 2), (3, 1)), (1, 0, 1))

    def test_bounds_check(self):
        cam = make_camera(size=32)
        sel = ClickSelection(0, ((1, 1), (2, 2), (40, 3)), (1, 1, 1))
        with pytest.raises(ValidationError):
            sel.validate_in_bounds(cam)


class TestBuildBox:
    def plane_depth(self, cam, plane_z=0.0):
        """Depth lookup for the horizontal plane z = plane_z."""
        def lookup(u, v):
            _, d = pixel_rays(cam, np.array([u, v]))
            t = (plane_z - cam.origin[2]) / d[2]
            return t * float(d @ cam.rotation[:, 2])
        return lookup

    def test_box_geometry(self):
        cam = make_camera()
        lookup = self.plane_depth(cam)
        sel = ClickSelection(0, ((40.0, 40.0), (24.0, 40.0), (32.0, 28.0)),
                             (1.0, 0.8, 0.6))
        box = build_box(sel, cam, lookup)

        A = box.axes
        assert np.allclose(A.T @ A, np.eye(3), atol=1e-9)
        assert np.linalg.det(A) == pytest.approx(1.0, abs=1e-9)

        p = [back_project(cam, c, lookup(*c)) for c in sel.clicks]
        edge = p[0] - p[1]
        d = np.linalg.norm(edge)
        # x axis parallel to the first two clicks
        assert abs(abs(edge / d @ A[:, 0]) - 1.0) < 1e-9
        # z axis is the plane normal, facing the camera
        assert abs(abs(A[:, 2] @ np.array([0, 0, 1.0])) - 1.0) < 1e-9
        assert A[:, 2] @ cam.view_dir < 0
        # sides scale with the click distance
        assert np.allclose(box.half_extents, 0.5 * d * np.array([1.0, 0.8, 0.6]))
        # the -z face midpoint sits on the click centroid
        anchor = box.center - A[:, 2] * box.half_extents[2]
        assert np.allclose(anchor, np.mean(p, axis=0), atol=1e-9)

    def test_collinear_clicks_degenerate(self):
        cam = make_camera()
        lookup = self.plane_depth(cam)
        sel = ClickSelection(0, ((20.0, 32.0), (30.0, 32.0), (40.0, 32.0)),
                             (1, 1, 1))
        with pytest.raises(DegenerateSelectionError):
            build_box(sel, cam, lookup)

    def test_no_depth_rejected(self):
        cam = make_camera()
        sel = ClickSelection(0, ((20.0, 30.0), (30.0, 30.0), (25.0, 20.0)),
                             (1, 1, 1))
        with pytest.raises(ValidationError):
            build_box(sel, cam, lambda u, v: float("inf"))


class TestRayBox:
    def box(self):
        gen = np.random.default_rng(7)
        q, _ = np.linalg.qr(gen.normal(size=(3, 3)))
        if np.linalg.det(q) < 0:
            q[:, 0] = -q[:, 0]
        return OrientedBox3D(np.array([0.3, -0.2, 0.5]), q,
                             np.array([0.4, 0.25, 0.6]))

    def membership_oracle(self, box, origin, direction, t_max=20.0, n=200001):
        """Dense sampling membership estimate of the hit interval."""
        ts = np.linspace(0.0, t_max, n)
        pts = origin[None, :] + ts[:, None] * direction[None, :]
        inside = box.contains(pts)
        if not inside.any():
            return None
        idx = np.nonzero(inside)[0]
        return ts[idx[0]], ts[idx[-1]]

    def test_against_membership_oracle(self):
        box = self.box()
        gen = np.random.default_rng(3)
        step = 20.0 / 200000
        hits = misses = 0
        for k in range(300):
            origin = gen.normal(scale=2.0, size=3)
            if k % 2 == 0:
                # aim at a jittered point near the box so hits are plentiful
                target = box.center + gen.normal(scale=0.5, size=3)
                direction = target - origin
            else:
                direction = gen.normal(size=3)
            direction /= np.linalg.norm(direction)
            ray = Ray(origin, direction)
            res = intersect_ray_box(ray, box)
            oracle = self.membership_oracle(box, origin, direction)
            if res.hit:
                hits += 1
                assert oracle is not None
                lo, hi = oracle
                assert res.t_entry == pytest.approx(lo, abs=2 * step)
                assert res.t_exit == pytest.approx(hi, abs=2 * step)
            else:
                misses += 1
                # the oracle may catch a graze shorter than its step
                if oracle is not None:
                    lo, hi = oracle
                    assert hi - lo < 4 * step
        assert hits > 30 and misses > 30

    def test_vectorized_matches_scalar(self):
        box = self.box()
        gen = np.random.default_rng(4)
        origins = gen.normal(scale=2.0, size=(500, 3))
        dirs = gen.normal(size=(500, 3))
        dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
        hit, t0, t1 = intersect_rays_box(origins, dirs, box)
        for i in range(500):
            res = intersect_ray_box(Ray(origins[i], dirs[i]), box)
            assert res.hit == hit[i]
            if res.hit:
                assert t0[i] == pytest.approx(res.t_entry, abs=1e-12)
                assert t1[i] == pytest.approx(res.t_exit, abs=1e-12)

    def test_origin_inside_clamps_entry(self):
        box = self.box()
        ray = Ray(box.center, np.array([1.0, 0.0, 0.0]))
        res = intersect_ray_box(ray, box)
        assert res.hit and res.t_entry == 0.0

    def test_axis_parallel_rays(self):
        box = OrientedBox3D(np.zeros(3), np.eye(3), np.array([1.0, 1.0, 1.0]))
        inside = Ray(np.array([0.0, 0.0, -5.0]), np.array([0.0, 0.0, 1.0]))
        res = intersect_ray_box(inside, box)
        assert res.hit
        assert res.t_entry == pytest.approx(4.0)
        assert res.t_exit == pytest.approx(6.0)
        outside = Ray(np.array([2.0, 0.0, -5.0]), np.array([0.0, 0.0, 1.0]))
        assert not intersect_ray_box(outside, box).hit

    def test_entry_depth_uses_camera_frame(self):
        cam = make_camera(eye=(3.0, 0.0, 0.5), target=(0, 0, 0.5))
        box = OrientedBox3D(np.array([0.0, 0.0, 0.5]), np.eye(3),
                            np.array([0.5, 0.5, 0.5]))
        ray = view_ray(cam, (cam.intrinsics[0, 2], cam.intrinsics[1, 2]))
        res = intersect_ray_box(ray, box, view=cam)
        # camera is 3 units away along its own axis; box face at 0.5
        assert res.depth_entry == pytest.approx(2.5, abs=1e-9)


class TestBoxMask:
    def test_mask_matches_ray_oracle(self, desk_cache, desk_box):
        view = desk_cache.views[1]
        mask = project_box_mask(desk_box, view.camera)
        jj, ii = np.meshgrid(np.arange(view.camera.width),
                             np.arange(view.camera.height))
        px = np.stack([jj, ii], axis=-1).reshape(-1, 2)
        origins, dirs = pixel_rays(view.camera, px.astype(np.float64))
        expect = np.zeros(len(px), dtype=bool)
        for i in range(len(px)):
            expect[i] = intersect_ray_box(
                Ray(origins[i], dirs[i]), desk_box).hit
        assert np.array_equal(mask.reshape(-1), expect)
        assert 0 < mask.sum() < mask.size

    def test_behind_camera_warns_empty(self):
        cam = make_camera(eye=(2, 0, 0.5), target=(0, 0, 0.5))
        box = OrientedBox3D(np.array([4.0, 0.0, 0.5]), np.eye(3),
                            np.array([0.2, 0.2, 0.2]))
        with pytest.warns(UserWarning):
            mask = project_box_mask(box, cam)
        assert not mask.any()


class TestBoxText:
    def test_round_trip_exact(self, desk_box):
        text = box_to_text(desk_box)
        box2 = box_from_text(text)
        assert np.array_equal(box2.center, desk_box.center)
        assert np.array_equal(box2.axes, desk_box.axes)
        assert np.array_equal(box2.half_extents, desk_box.half_extents)

    def test_malformed_rejected(self):
        with pytest.raises(ValidationError):
            box_from_text("center 0 0\nhalf_extents 1 1 1\n")

    def test_corners_sign_convention(self):
        box = OrientedBox3D(np.zeros(3), np.eye(3), np.array([1.0, 2.0, 3.0]))
        corners = box.corners
        assert corners.shape == (8, 3)
        assert np.allclose(np.abs(corners), [1.0, 2.0, 3.0] * np.ones((8, 3)))
        assert len({tuple(c) for c in corners.round(9)}) == 8
