"""Encoding correctness: frozen values, dense-grid oracle, FD gradients."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.testing import assert_allclose

from warpnerf.autodiff import Tensor
from warpnerf.encodings import (
    FrequencyConfig,
    HashGrid,
    HashGridConfig,
    OneBlobConfig,
    frequency_encode,
    one_blob_encode,
    spatial_hash,
)

from oracles import (
    finite_difference_gradient,
    frequency_reference,
    one_blob_reference,
    relative_error,
    trilinear_dense_lookup,
)


class TestFrequency:
    def test_matches_reference_layout(self):
        rng = np.random.default_rng(0)
        x = rng.uniform(0, 1, size=(5, 3))
        cfg = FrequencyConfig(num_bands=6, include_input=True)
        got = frequency_encode(x, cfg)
        assert got.shape == (5, cfg.output_width(3))
        assert got.shape[1] == 3 * 13
        assert_allclose(got.data, frequency_reference(x, 6, True), atol=1e-12)

    def test_without_input_passthrough(self):
        x = np.array([[0.25, 0.5]])
        got = frequency_encode(x, FrequencyConfig(num_bands=2, include_input=False))
        assert got.shape == (1, 8)
        assert_allclose(got.data, frequency_reference(x, 2, False), atol=1e-12)

    def test_frozen_values_at_half(self):
        # sin(pi/2)=1, cos(pi/2)=0, sin(pi)=0, cos(pi)=-1
        got = frequency_encode(np.array([[0.5]]), FrequencyConfig(num_bands=2, include_input=True))
        assert_allclose(got.data, [[0.5, 1.0, 0.0, 0.0, -1.0]], atol=1e-12)

    def test_gradient_matches_fd(self):
        rng = np.random.default_rng(1)
        x0 = rng.uniform(0.1, 0.9, size=(3, 3))
        cfg = FrequencyConfig(num_bands=4)
        w = Tensor(rng.normal(size=(3, cfg.output_width(3))))

        def loss(x):
            return (frequency_encode(x, cfg) * w).sum()

        x = Tensor(x0.copy(), requires_grad=True)
        loss(x).backward()
        fd = finite_difference_gradient(lambda a: float(loss(Tensor(a)).data), x0)
        assert relative_error(x.grad, fd) < 1e-6

    def test_float32_stays_float32(self):
        out = frequency_encode(np.zeros((2, 3), dtype=np.float32), FrequencyConfig())
        assert out.dtype == np.float32


class TestOneBlob:
    def test_matches_reference(self):
        cfg = OneBlobConfig(num_bins=16)
        for t in [0.0, 0.3, 0.5, 1.0]:
            got = one_blob_encode(np.array([t]), cfg)
            assert got.shape == (1, 16)
            assert_allclose(got.data[0], one_blob_reference(t, 16), atol=1e-12)

    def test_peak_is_one_at_bin_center(self):
        cfg = OneBlobConfig(num_bins=8)
        center = (3 + 0.5) / 8
        got = one_blob_encode(np.array([center]), cfg)
        assert_allclose(got.data[0, 3], 1.0, atol=1e-12)
        assert np.argmax(got.data[0]) == 3

    def test_out_of_domain_raises(self):
        cfg = OneBlobConfig()
        with pytest.raises(ValueError):
            one_blob_encode(np.array([1.2]), cfg)
        with pytest.raises(ValueError):
            one_blob_encode(np.array([-0.1]), cfg)

    def test_gradient_matches_fd(self):
        cfg = OneBlobConfig(num_bins=16)
        rng = np.random.default_rng(2)
        t0 = rng.uniform(0.05, 0.95, size=(4,))
        w = Tensor(rng.normal(size=(4, 16)))

        def loss(t):
            return (one_blob_encode(t, cfg) * w).sum()

        t = Tensor(t0.copy(), requires_grad=True)
        loss(t).backward()
        fd = finite_difference_gradient(lambda a: float(loss(Tensor(a)).data), t0)
        assert relative_error(t.grad, fd) < 1e-6

    @settings(max_examples=50, deadline=None)
    @given(st.floats(min_value=0.0, max_value=1.0), st.integers(min_value=2, max_value=64))
    def test_property_values_in_unit_range(self, t, bins):
        got = one_blob_encode(np.array([t]), OneBlobConfig(num_bins=bins)).data
        assert np.all(got >= 0.0)  # far bins underflow to exactly 0
        assert np.all(got <= 1.0 + 1e-12)


class TestHashGridStructure:
    def test_growth_factor_and_resolutions(self):
        cfg = HashGridConfig(levels=16, base_resolution=16, max_resolution=2048)
        assert cfg.growth_factor == pytest.approx(128.0 ** (1 / 15))
        res = cfg.resolutions
        assert res[0] == 16
        assert res[-1] == 2048
        assert all(a < b for a, b in zip(res, res[1:]))

    def test_single_level_growth(self):
        cfg = HashGridConfig(levels=1, base_resolution=32, max_resolution=32)
        assert cfg.growth_factor == 1.0
        assert cfg.resolutions == (32,)

    def test_dense_levels_get_exact_sizes(self):
        cfg = HashGridConfig(levels=16, table_size_log2=19)
        grid = HashGrid(cfg, np.random.default_rng(0))
        # resolution 16 -> 17^3 = 4913 vertices, far below 2^19
        assert grid.level_is_dense[0]
        assert grid.level_sizes[0] == 17**3
        assert not grid.level_is_dense[-1]
        assert grid.level_sizes[-1] == cfg.table_size
        assert grid.table.shape == (int(grid.level_sizes.sum()), 2)

    def test_init_scale_bounds(self):
        grid = HashGrid(HashGridConfig(levels=4, max_resolution=64), np.random.default_rng(1))
        assert np.all(np.abs(grid.table.data) <= 1e-4)
        assert grid.table.data.dtype == np.float32

    def test_spatial_hash_in_range_and_deterministic(self):
        coords = np.random.default_rng(3).integers(0, 2048, size=(100, 3))
        h1 = spatial_hash(coords, 1 << 19)
        h2 = spatial_hash(coords, 1 << 19)
        assert_allclose(h1, h2)
        assert h1.min() >= 0 and h1.max() < (1 << 19)
        # first prime is 1: x-only coords map to themselves
        only_x = np.stack([np.arange(10), np.zeros(10, int), np.zeros(10, int)], axis=1)
        assert_allclose(spatial_hash(only_x, 1 << 19), np.arange(10))

    def test_out_of_cube_raises(self):
        grid = HashGrid(HashGridConfig(levels=2, max_resolution=32), np.random.default_rng(0))
        with pytest.raises(ValueError):
            grid.encode(np.array([[0.5, 0.5, 1.5]]))


class TestHashGridValues:
    def test_dense_level_matches_trilinear_oracle_exactly(self):
        cfg = HashGridConfig(levels=1, base_resolution=8, max_resolution=8, table_size_log2=12)
        grid = HashGrid(cfg, np.random.default_rng(4))
        assert grid.level_is_dense[0]
        res = 8
        # rebuild the dense table as an (res+1)^3 vertex grid for the oracle
        verts = np.zeros((res + 1, res + 1, res + 1, 2))
        for ix in range(res + 1):
            for iy in range(res + 1):
                for iz in range(res + 1):
                    flat = ix + (res + 1) * (iy + (res + 1) * iz)
                    verts[ix, iy, iz] = grid.table.data[flat]
        x = np.random.default_rng(5).uniform(0, 1, size=(50, 3))
        got = grid.encode(x).data
        want = trilinear_dense_lookup(verts, x, res)
        assert_allclose(got, want, rtol=1e-5, atol=1e-12)

    def test_vertex_queries_return_stored_features(self):
        cfg = HashGridConfig(levels=1, base_resolution=4, max_resolution=4, table_size_log2=10)
        grid = HashGrid(cfg, np.random.default_rng(6))
        x = np.array([[0.25, 0.5, 0.75], [0.0, 0.0, 0.0], [1.0, 1.0, 1.0]])
        got = grid.encode(x).data
        for row, p in zip(got, x):
            i = np.round(p * 4).astype(int)
            flat = i[0] + 5 * (i[1] + 5 * i[2])
            assert_allclose(row, grid.table.data[flat], rtol=1e-5, atol=1e-7)

    def test_continuity_across_cell_boundary(self):
        grid = HashGrid(HashGridConfig(levels=4, max_resolution=64), np.random.default_rng(7))
        eps = 1e-6
        lo = grid.encode(np.array([[0.25 - eps, 0.4, 0.6]])).data
        hi = grid.encode(np.array([[0.25 + eps, 0.4, 0.6]])).data
        assert np.max(np.abs(hi - lo)) < 1e-3

    def test_table_gradient_matches_fd(self):
        cfg = HashGridConfig(levels=2, base_resolution=4, max_resolution=8, table_size_log2=8, features_per_level=2)
        grid = HashGrid(cfg, np.random.default_rng(8)).astype(np.float64)
        x = np.random.default_rng(9).uniform(0.1, 0.9, size=(6, 3))
        w = Tensor(np.random.default_rng(10).normal(size=(6, cfg.output_width())))

        def loss_value():
            return (grid.encode(x) * w).sum()

        loss_value().backward()
        got = grid.table.grad.copy()

        def f(v):
            old = grid.table.data
            grid.table.data = v
            out = float(loss_value().data)
            grid.table.data = old
            return out

        fd = finite_difference_gradient(f, grid.table.data.copy(), step=1e-6)
        assert relative_error(got, fd, floor=1e-6) < 1e-5

    def test_position_gradient_matches_fd(self):
        cfg = HashGridConfig(levels=3, base_resolution=4, max_resolution=16, table_size_log2=10)
        grid = HashGrid(cfg, np.random.default_rng(11)).astype(np.float64)
        # keep FD probes inside one cell: margin larger than the step
        x0 = np.random.default_rng(12).uniform(0.3, 0.7, size=(4, 3))
        x0 = (np.floor(x0 * 16) + 0.5) / 16  # cell centers of the finest level
        w = Tensor(np.random.default_rng(13).normal(size=(4, cfg.output_width())))

        def loss(x):
            return (grid.encode(x) * w).sum()

        x = Tensor(x0.copy(), requires_grad=True)
        loss(x).backward()
        fd = finite_difference_gradient(lambda a: float(loss(Tensor(a)).data), x0, step=1e-5)
        assert relative_error(x.grad, fd, floor=1e-6) < 1e-4

    def test_float32_encode_stays_float32(self):
        grid = HashGrid(HashGridConfig(levels=2, max_resolution=32), np.random.default_rng(14))
        out = grid.encode(np.random.default_rng(15).uniform(0, 1, (3, 3)).astype(np.float32))
        assert out.dtype == np.float32


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_property_encode_is_convex_combination_bound(seed):
    # interpolated features can never exceed the max |table| entry
    rng = np.random.default_rng(seed)
    grid = HashGrid(HashGridConfig(levels=3, max_resolution=32, init_scale=1.0), rng)
    x = rng.uniform(0, 1, size=(20, 3))
    out = grid.encode(x).data
    assert np.max(np.abs(out)) <= np.max(np.abs(grid.table.data)) + 1e-5
