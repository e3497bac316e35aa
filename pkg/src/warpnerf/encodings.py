"""Input encodings: frequency bands, one-blob bins, multiresolution hash grid.

All three are differentiable with respect to their input through the tensor
core; the hash grid is additionally differentiable with respect to its
feature table. Inputs live in the unit domain ([0,1]^3 for positions, [0,1]
for time); out-of-domain values raise, callers clamp or cull first.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tensor, concat, cos, exp, gather_rows, sin

HASH_PRIMES = (1, 2654435761, 805459861)


@dataclass(frozen=True)
class FrequencyConfig:
    """sin/cos bands at frequencies 2^k * pi for k < num_bands."""

    num_bands: int = 6
    include_input: bool = True

    def output_width(self, input_dim: int) -> int:
        return input_dim * (2 * self.num_bands + (1 if self.include_input else 0))


def frequency_encode(x, cfg: FrequencyConfig) -> Tensor:
    """Encode (n, d) values; output (n, d * (2*num_bands [+1]))."""
    if not isinstance(x, Tensor):
        x = Tensor(x)
    if x.ndim != 2:
        raise ValueError(f"frequency_encode expects (n, d), got {x.shape}")
    n, d = x.shape
    parts = [x] if cfg.include_input else []
    for k in range(cfg.num_bands):
        scaled = x * float((2.0**k) * np.pi)
        parts.append(sin(scaled))
        parts.append(cos(scaled))
    return concat(parts, axis=1)


@dataclass(frozen=True)
class OneBlobConfig:
    """Gaussian bump against fixed bin centers (j + 0.5)/bins, peak 1."""

    num_bins: int = 16
    kernel_width: float | None = None  # defaults to 1/num_bins

    @property
    def sigma(self) -> float:
        return self.kernel_width if self.kernel_width is not None else 1.0 / self.num_bins

    def output_width(self) -> int:
        return self.num_bins


def one_blob_encode(t, cfg: OneBlobConfig) -> Tensor:
    """Encode scalars in [0,1] to (n, num_bins) Gaussian activations."""
    if not isinstance(t, Tensor):
        t = Tensor(t)
    if t.ndim == 0:
        t = t.reshape(1)
    if t.ndim != 1:
        raise ValueError(f"one_blob_encode expects scalars or a flat array, got shape {t.shape}")
    if t.size and (t.data.min() < -1e-9 or t.data.max() > 1.0 + 1e-9):
        raise ValueError(f"time values must lie in [0,1], got range [{t.data.min()}, {t.data.max()}]")
    centers = ((np.arange(cfg.num_bins) + 0.5) / cfg.num_bins).astype(t.dtype)
    u = (t.reshape(-1, 1) - centers) * (1.0 / cfg.sigma)
    return exp(u * u * -0.5)


@dataclass(frozen=True)
class HashGridConfig:
    levels: int = 16
    features_per_level: int = 2
    table_size_log2: int = 19
    base_resolution: int = 16
    max_resolution: int = 2048
    init_scale: float = 1e-4

    @property
    def table_size(self) -> int:
        return 1 << self.table_size_log2

    @property
    def growth_factor(self) -> float:
        if self.levels <= 1:
            return 1.0
        return float(np.exp((np.log(self.max_resolution) - np.log(self.base_resolution)) / (self.levels - 1)))

    @property
    def resolutions(self) -> tuple[int, ...]:
        b = self.growth_factor
        return tuple(int(np.floor(self.base_resolution * b**l + 1e-9)) for l in range(self.levels))

    def output_width(self) -> int:
        return self.levels * self.features_per_level


def spatial_hash(coords: np.ndarray, table_size: int) -> np.ndarray:
    """XOR of prime-multiplied integer coords, folded into the table.

    coords is (..., 3) non-negative integers; result is (...,) in
    [0, table_size). table_size must be a power of two.
    """
    c = coords.astype(np.uint64)
    h = c[..., 0] * np.uint64(HASH_PRIMES[0])
    h ^= c[..., 1] * np.uint64(HASH_PRIMES[1])
    h ^= c[..., 2] * np.uint64(HASH_PRIMES[2])
    return (h & np.uint64(table_size - 1)).astype(np.int64)


# the 8 trilinear corners, x varying fastest
_CORNERS = np.array([[i & 1, (i >> 1) & 1, (i >> 2) & 1] for i in range(8)], dtype=np.int64)


class HashGrid:
    """Concatenated multi-level feature tables with trilinear interpolation.

    Levels whose full vertex grid fits in the table store it densely (an
    injective index, so no collisions); finer levels hash. All levels live in
    one parameter tensor so a full encode is a single gather.
    """

    def __init__(self, cfg: HashGridConfig, rng: np.random.Generator, dtype=np.float32):
        self.cfg = cfg
        res = np.asarray(cfg.resolutions, dtype=np.int64)
        dense = (res + 1) ** 3 <= cfg.table_size
        sizes = np.where(dense, (res + 1) ** 3, cfg.table_size)
        self.resolutions = res
        self.level_is_dense = dense
        self.level_sizes = sizes
        self.level_offsets = np.concatenate([[0], np.cumsum(sizes)[:-1]])
        total = int(sizes.sum())
        init = rng.uniform(-cfg.init_scale, cfg.init_scale, size=(total, cfg.features_per_level))
        self.table = Tensor(init.astype(dtype), requires_grad=True)

    @property
    def output_width(self) -> int:
        return self.cfg.output_width()

    def parameters(self) -> list[Tensor]:
        return [self.table]

    def astype(self, dtype) -> "HashGrid":
        self.table.data = self.table.data.astype(dtype)
        return self

    def _corner_indices(self, i0: np.ndarray) -> np.ndarray:
        """Flat table rows for the 8 cell corners; i0 is (n, L, 3) ints."""
        n = i0.shape[0]
        out = np.empty((n, self.cfg.levels, 8), dtype=np.int64)
        dense = self.level_is_dense
        if dense.any():
            sides = (self.resolutions[dense] + 1).astype(np.int64)
            strides = np.stack([np.ones_like(sides), sides, sides * sides], axis=1)  # (Ld, 3)
            base = (i0[:, dense] * strides).sum(axis=-1)  # (n, Ld)
            out[:, dense] = base[:, :, None] + strides @ _CORNERS.T
        if not dense.all():
            # h(c + b) for b in {0,1}^3 reuses the three per-axis products:
            # (x+1)*p == x*p + p mod 2^64, and the axes only meet at the XOR
            mask = np.uint64(self.cfg.table_size - 1)
            c = i0[:, ~dense].astype(np.uint64)  # (n, Lh, 3)
            lo = [c[..., k] * np.uint64(p) for k, p in enumerate(HASH_PRIMES)]
            hi = [a + np.uint64(p) for a, p in zip(lo, HASH_PRIMES)]
            h = np.empty((n, c.shape[1], 8), dtype=np.uint64)
            for j, (bx, by, bz) in enumerate(_CORNERS):
                h[..., j] = (hi[0] if bx else lo[0]) ^ (hi[1] if by else lo[1]) ^ (hi[2] if bz else lo[2])
            out[:, ~dense] = (h & mask).astype(np.int64)
        out += self.level_offsets.reshape(1, -1, 1)
        return out

    def encode(self, x) -> Tensor:
        """Interpolate unit-cube points (n, 3) to (n, levels * features)."""
        if not isinstance(x, Tensor):
            x = Tensor(x)
        if x.ndim != 2 or x.shape[1] != 3:
            raise ValueError(f"hash grid expects (n, 3) points, got {x.shape}")
        xd = x.data
        if xd.size and (xd.min() < -1e-6 or xd.max() > 1.0 + 1e-6):
            raise ValueError(
                f"points must lie in the unit cube, got range [{xd.min():.4g}, {xd.max():.4g}]"
            )
        n = xd.shape[0]
        L = self.cfg.levels
        F = self.cfg.features_per_level
        res_f = self.resolutions.astype(xd.dtype).reshape(L, 1)

        scaled = x.reshape(n, 1, 3) * Tensor(res_f)  # (n, L, 3)
        i0 = np.floor(scaled.data).astype(np.int64)
        i0 = np.clip(i0, 0, (self.resolutions - 1).reshape(1, L, 1))
        frac = scaled - Tensor(i0.astype(xd.dtype))  # carries grad through scaled

        idx = self._corner_indices(i0)  # (n, L, 8)
        # corner j packs bits (bx, by, bz) with x fastest, so the reshape
        # exposes the corner cube as [z][y][x] and we lerp one axis at a time
        feats = gather_rows(self.table, idx).reshape(n, L, 2, 2, 2, F)
        wx = frac[:, :, 0].reshape(n, L, 1, 1, 1)
        wy = frac[:, :, 1].reshape(n, L, 1, 1)
        wz = frac[:, :, 2].reshape(n, L, 1)
        f0 = feats[:, :, :, :, 0]
        fx = f0 + (feats[:, :, :, :, 1] - f0) * wx  # (n, L, 2, 2, F)
        f0 = fx[:, :, :, 0]
        fy = f0 + (fx[:, :, :, 1] - f0) * wy  # (n, L, 2, F)
        f0 = fy[:, :, 0]
        fz = f0 + (fy[:, :, 1] - f0) * wz  # (n, L, F)
        return fz.reshape(n, L * F)
