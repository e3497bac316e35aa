"""Camera geometry, compositing math, and ray marching checks."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.testing import assert_allclose

from warpnerf.autodiff import Tensor
from warpnerf.render import (
    Camera,
    RenderOptions,
    composite,
    composite_over,
    intersect_aabb,
    march_rays,
    render_image,
    to_uint8,
)
from warpnerf.scene_model import SceneBounds
from warpnerf.toy import TranslatingBlobModel

from oracles import composite_single_ray, finite_difference_gradient, relative_error


class TestCamera:
    def test_pixel_to_direction_frozen_example(self):
        cam = Camera(width=100, height=100, fx=100, fy=100, cx=50, cy=50, c2w=np.eye(4))
        origins, dirs = cam.rays(np.array([[99, 49]]))
        want = np.array([0.495, -0.005, 1.0])
        want /= np.linalg.norm(want)
        assert_allclose(dirs[0], want, atol=1e-12)
        assert_allclose(origins[0], 0.0)

    def test_rays_are_unit_and_rotated(self):
        cam = Camera.look_at((2, 0, 0), (0, 0, 0), (0, 0, 1), 64, 64, fx=80)
        _, dirs = cam.rays(cam.pixel_grid())
        assert_allclose(np.linalg.norm(dirs, axis=1), 1.0, atol=1e-12)
        center_dir = dirs[64 * 32 + 32]
        assert center_dir @ np.array([-1.0, 0.0, 0.0]) > 0.99

    def test_look_at_geometry(self):
        cam = Camera.look_at((0, -2, 1), (0, 0, 1), (0, 0, 1), 10, 10, fx=10)
        assert_allclose(cam.forward_axis, [0, 1, 0], atol=1e-12)
        r = cam.c2w[:3, :3]
        assert np.linalg.det(r) == pytest.approx(1.0)
        # y axis points down in world space when up is +z
        assert cam.c2w[2, 1] < 0

    def test_look_at_degenerate_up_raises(self):
        with pytest.raises(ValueError):
            Camera.look_at((0, -2, 0), (0, 0, 0), (0, 1, 0), 8, 8, fx=8)

    def test_nonrigid_pose_rejected(self):
        bad = np.eye(4)
        bad[0, 0] = 1.1
        with pytest.raises(ValueError):
            Camera(width=8, height=8, fx=8, fy=8, cx=4, cy=4, c2w=bad)


class TestAabb:
    def test_through_box(self):
        b = SceneBounds.cube(2.0)
        t0, t1, hit = intersect_aabb(np.array([[0, 0, -5.0]]), np.array([[0, 0, 1.0]]), b)
        assert hit[0]
        assert t0[0] == pytest.approx(4.0)
        assert t1[0] == pytest.approx(6.0)

    def test_miss_and_inside(self):
        b = SceneBounds.cube(2.0)
        t0, t1, hit = intersect_aabb(np.array([[0, 5, -5.0]]), np.array([[0, 0, 1.0]]), b)
        assert not hit[0]
        t0, t1, hit = intersect_aabb(np.array([[0.0, 0, 0]]), np.array([[0, 0, 1.0]]), b)
        assert hit[0]
        assert t0[0] == pytest.approx(0.0)
        assert t1[0] == pytest.approx(1.0)

    def test_axis_parallel_on_face(self):
        b = SceneBounds.cube(2.0)
        origins = np.array([[1.0, 0.0, -5.0]])  # grazing the +x face
        t0, t1, hit = intersect_aabb(origins, np.array([[0, 0, 1.0]]), b)
        assert np.isfinite(t0[0]) and np.isfinite(t1[0])


class TestComposite:
    def test_two_sample_hand_case(self):
        # optical depth ln2 per sample: alphas 1/2, weights 1/2 and 1/4
        sig = Tensor(np.array([np.log(2.0), np.log(2.0)]))
        col = Tensor(np.array([[1.0, 0, 0], [0, 1.0, 0]]))
        color, alpha = composite(sig, np.ones(2), col, np.zeros(2, dtype=int), 1, np.ones(3))
        assert abs(alpha.data[0] - 0.75) < 1e-12
        assert np.max(np.abs(color.data[0] - [0.75, 0.5, 0.25])) < 1e-12

    def test_empty_space_returns_background(self):
        color, alpha = composite(
            Tensor(np.zeros(4)),
            np.ones(4),
            Tensor(np.full((4, 3), 0.5)),
            np.zeros(4, dtype=int),
            2,
            np.array([0.2, 0.4, 0.6]),
        )
        assert_allclose(alpha.data, 0.0)
        assert_allclose(color.data[0], [0.2, 0.4, 0.6], atol=1e-12)
        assert_allclose(color.data[1], [0.2, 0.4, 0.6], atol=1e-12)  # no samples at all

    def test_opaque_wall_saturates(self):
        color, alpha = composite(
            Tensor(np.array([1e4])),
            np.ones(1),
            Tensor(np.array([[0.3, 0.6, 0.9]])),
            np.zeros(1, dtype=int),
            1,
            np.zeros(3),
        )
        assert alpha.data[0] == pytest.approx(1.0)
        assert_allclose(color.data[0], [0.3, 0.6, 0.9], atol=1e-12)

    def test_unsorted_dists_rejected(self):
        with pytest.raises(ValueError):
            composite(
                Tensor(np.ones(2)),
                np.ones(2),
                Tensor(np.zeros((2, 3))),
                np.zeros(2, dtype=int),
                1,
                np.zeros(3),
                dists=np.array([2.0, 1.0]),
            )

    def test_unsorted_ray_ids_rejected(self):
        with pytest.raises(ValueError):
            composite(
                Tensor(np.ones(2)),
                np.ones(2),
                Tensor(np.zeros((2, 3))),
                np.array([1, 0]),
                2,
                np.zeros(3),
            )

    def test_matches_loop_oracle_many_rays(self):
        rng = np.random.default_rng(0)
        counts = rng.integers(0, 9, size=20)
        seg = np.repeat(np.arange(20), counts)
        n = int(counts.sum())
        sig = rng.uniform(0, 3, size=n)
        dl = rng.uniform(0.01, 0.5, size=n)
        col = rng.uniform(0, 1, size=(n, 3))
        bg = np.array([0.9, 0.1, 0.5])
        color, alpha = composite(Tensor(sig), dl, Tensor(col), seg, 20, bg)
        for r in range(20):
            m = seg == r
            want_c, want_a = composite_single_ray(sig[m], dl[m], col[m], bg)
            assert np.max(np.abs(color.data[r] - want_c)) < 1e-12
            assert abs(alpha.data[r] - want_a) < 1e-12

    def test_transmittance_floor_drops_occluded_samples(self):
        # second sample sits behind an opaque wall; with the floor enabled it
        # contributes nothing, exactly like truncating the ray
        sig = np.array([1e4, 5.0])
        col = np.array([[1.0, 0, 0], [0, 1.0, 0]])
        full, _ = composite(Tensor(sig), np.ones(2), Tensor(col), np.zeros(2, int), 1, np.zeros(3))
        floored, _ = composite(
            Tensor(sig), np.ones(2), Tensor(col), np.zeros(2, int), 1, np.zeros(3), trans_floor=1e-4
        )
        trunc, _ = composite(Tensor(sig[:1]), np.ones(1), Tensor(col[:1]), np.zeros(1, int), 1, np.zeros(3))
        assert_allclose(floored.data, trunc.data, atol=1e-15)
        assert_allclose(full.data, trunc.data, atol=1e-12)  # wall is opaque anyway

    def test_gradients_match_fd(self):
        rng = np.random.default_rng(1)
        n = 7
        seg = np.array([0, 0, 0, 1, 1, 2, 2])
        sig0 = rng.uniform(0.1, 2.0, size=n)
        col0 = rng.uniform(0.1, 0.9, size=(n, 3))
        dl = rng.uniform(0.05, 0.3, size=n)
        bg = np.array([0.3, 0.3, 0.3])
        target = rng.uniform(0, 1, size=(3, 3))

        def loss_sig(s):
            c, a = composite(s if isinstance(s, Tensor) else Tensor(s), dl, Tensor(col0), seg, 3, bg)
            return ((c - Tensor(target)) ** 2).sum()

        x = Tensor(sig0.copy(), requires_grad=True)
        loss_sig(x).backward()
        fd = finite_difference_gradient(lambda v: float(loss_sig(Tensor(v)).data), sig0)
        assert relative_error(x.grad, fd) < 1e-6

        def loss_col(cv):
            c, a = composite(Tensor(sig0), dl, cv if isinstance(cv, Tensor) else Tensor(cv), seg, 3, bg)
            return ((c - Tensor(target)) ** 2).sum()

        y = Tensor(col0.copy(), requires_grad=True)
        loss_col(y).backward()
        fd = finite_difference_gradient(lambda v: float(loss_col(Tensor(v)).data), col0)
        assert relative_error(y.grad, fd) < 1e-6

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 2**31 - 1))
    def test_property_alpha_in_unit_range_and_weights_sum(self, seed):
        rng = np.random.default_rng(seed)
        counts = rng.integers(1, 12, size=5)
        seg = np.repeat(np.arange(5), counts)
        sig = rng.uniform(0, 50, size=int(counts.sum()))
        col = rng.uniform(0, 1, size=(sig.size, 3))
        color, alpha = composite(Tensor(sig), 0.1, Tensor(col), seg, 5, np.zeros(3))
        assert np.all(alpha.data >= -1e-12)
        assert np.all(alpha.data <= 1.0 + 1e-9)
        # with black background, each channel is bounded by alpha
        assert np.all(color.data <= alpha.data[:, None] + 1e-9)


def _march_oracle(model, origin, direction, t, bounds, max_samples, bg):
    """Python re-implementation of fixed-step midpoint marching for one ray."""
    from warpnerf.render import intersect_aabb as slab

    t0, t1, hit = slab(origin[None], direction[None], bounds)
    if not hit[0]:
        return np.asarray(bg, dtype=np.float64), 0.0
    step = bounds.diagonal / max_samples
    count = min(int(np.ceil((t1[0] - t0[0]) / step)), max_samples)
    sig, col = [], []
    for k in range(count):
        d = t0[0] + (k + 0.5) * step
        if d > t1[0]:
            continue
        p = origin + d * direction
        sig.append(model.sigma_at(p[None], t)[0])
        xc = p + model.offset_value(t)
        col.append(model.canonical_color(xc[None])[0])
    return composite_single_ray(np.array(sig), np.full(len(sig), step), np.array(col), bg)


class TestMarch:
    def setup_method(self):
        self.model = TranslatingBlobModel(
            bounds=SceneBounds.cube(1.0), amplitude=0.15, radius=0.25, peak=30.0
        )

    def test_matches_python_oracle(self):
        rng = np.random.default_rng(2)
        n = 40
        origins = np.tile(np.array([0.0, 0.0, -2.0]), (n, 1))
        dirs = np.stack(
            [rng.uniform(-0.2, 0.2, n), rng.uniform(-0.2, 0.2, n), np.ones(n)], axis=1
        )
        dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
        opts = RenderOptions(max_samples=128, background=(0.9, 0.2, 0.4), trans_epsilon=0.0)
        res = march_rays(self.model, origins, dirs, 0.3, None, opts)
        for i in range(n):
            want_c, want_a = _march_oracle(
                self.model, origins[i], dirs[i], 0.3, self.model.bounds, 128, opts.background
            )
            assert np.max(np.abs(res.color.data[i] - want_c)) < 1e-4
            assert abs(res.alpha.data[i] - want_a) < 1e-4

    def test_miss_rays_get_background(self):
        opts = RenderOptions(max_samples=64, background=(0.1, 0.2, 0.3))
        res = march_rays(
            self.model,
            np.array([[0.0, 5.0, -3.0]]),
            np.array([[0.0, 0.0, 1.0]]),
            0.0,
            None,
            opts,
        )
        assert_allclose(res.color.data[0], [0.1, 0.2, 0.3], atol=1e-7)
        assert res.alpha.data[0] == 0.0
        assert res.sample_counts[0] == 0

    def test_jitter_stays_within_cells_and_bounds(self):
        rng = np.random.default_rng(3)
        origins = np.tile(np.array([0.0, 0.0, -2.0]), (16, 1))
        dirs = np.tile(np.array([0.0, 0.0, 1.0]), (16, 1))
        opts = RenderOptions(max_samples=32)
        r1 = march_rays(self.model, origins, dirs, 0.1, None, opts, rng=np.random.default_rng(1))
        r2 = march_rays(self.model, origins, dirs, 0.1, None, opts, rng=np.random.default_rng(2))
        # different jitter, different colors; midpoint runs are identical
        assert np.max(np.abs(r1.color.data - r2.color.data)) > 0
        e1 = march_rays(self.model, origins, dirs, 0.1, None, opts)
        e2 = march_rays(self.model, origins, dirs, 0.1, None, opts)
        assert_allclose(e1.color.data, e2.color.data, atol=0)

    def test_offsets_reported_for_contributing_samples(self):
        origins = np.array([[0.0, 0.0, -2.0]])
        dirs = np.array([[0.0, 0.0, 1.0]])
        res = march_rays(self.model, origins, dirs, 0.25, None, RenderOptions(max_samples=64))
        want = self.model.offset_value(0.25)
        assert res.offsets is not None
        assert res.offsets.shape[0] <= res.n_evaluated
        assert_allclose(res.offsets.data, np.tile(want, (res.offsets.shape[0], 1)), atol=1e-6)


class TestRenderImage:
    def test_blob_image_structure(self):
        model = TranslatingBlobModel(bounds=SceneBounds.cube(1.0), amplitude=0.0, radius=0.2, peak=200.0)
        cam = Camera.look_at((0, 0, -2.0), (0, 0, 0), (0, 1, 0), 32, 32, fx=48)
        img = render_image(model, cam, 0.0, options=RenderOptions(max_samples=128))
        assert img.shape == (32, 32, 4)
        assert img.dtype == np.float32
        assert img[16, 16, 3] > 0.95  # dense core is opaque
        assert img[0, 0, 3] < 1e-3  # corners see empty space
        assert np.all(img >= 0.0) and np.all(img <= 1.0)

    def test_worker_pool_matches_sequential(self):
        model = TranslatingBlobModel(bounds=SceneBounds.cube(1.0), radius=0.25, peak=50.0)
        cam = Camera.look_at((0.3, -1.8, 0.4), (0, 0, 0), (0, 0, 1), 24, 24, fx=30)
        seq = render_image(model, cam, 0.6, options=RenderOptions(max_samples=64, chunk=100, workers=0))
        par = render_image(model, cam, 0.6, options=RenderOptions(max_samples=64, chunk=100, workers=3))
        assert_allclose(par, seq, atol=0)

    def test_to_uint8_and_composite_over(self):
        img = np.zeros((2, 2, 4), dtype=np.float32)
        img[0, 0] = [1.0, 0.5, 0.0, 0.5]
        u8 = to_uint8(img)
        assert u8[0, 0, 0] == 255 and u8[0, 0, 1] == 128
        over = composite_over(img, (1.0, 1.0, 1.0))
        assert_allclose(over[0, 0], [1.0, 0.75, 0.5], atol=1e-6)
        assert_allclose(over[1, 1], [1.0, 1.0, 1.0], atol=1e-6)
