"""Scene representation: a canonical radiance field watched through a
time-conditioned deformation.

A dynamic query at (x, d, t) deforms the point into canonical space,
x' = x + offset(x, t), and evaluates density/color there. The offset
factorizes into a per-point spatial basis (3 x width matrix) contracted
with a per-time coefficient vector, so a batch of n points queried at q
times costs n spatial evaluations plus q temporal evaluations instead of
n*q joint ones.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .autodiff import Tensor, clip, concat, exp, gather_rows, matmul, no_grad, scatter_rows
from .encodings import (
    FrequencyConfig,
    HashGrid,
    HashGridConfig,
    OneBlobConfig,
    frequency_encode,
    one_blob_encode,
)
from .nn import Mlp


@dataclass(frozen=True)
class SceneBounds:
    """Axis-aligned box the scene lives in (world units)."""

    lo: tuple[float, float, float]
    hi: tuple[float, float, float]

    def __post_init__(self):
        lo, hi = np.asarray(self.lo, float), np.asarray(self.hi, float)
        if lo.shape != (3,) or hi.shape != (3,):
            raise ValueError("bounds need 3 components per corner")
        if np.any(hi <= lo):
            raise ValueError(f"degenerate bounds: lo={self.lo} hi={self.hi}")
        # plain python floats so configs serialize cleanly
        object.__setattr__(self, "lo", tuple(float(v) for v in lo))
        object.__setattr__(self, "hi", tuple(float(v) for v in hi))

    @classmethod
    def cube(cls, side: float, center=(0.0, 0.0, 0.0)) -> "SceneBounds":
        c = np.asarray(center, float)
        h = side / 2.0
        return cls(tuple(c - h), tuple(c + h))

    @property
    def lo_arr(self) -> np.ndarray:
        return np.asarray(self.lo, dtype=np.float64)

    @property
    def hi_arr(self) -> np.ndarray:
        return np.asarray(self.hi, dtype=np.float64)

    @property
    def extent(self) -> np.ndarray:
        return self.hi_arr - self.lo_arr

    @property
    def diagonal(self) -> float:
        return float(np.linalg.norm(self.extent))

    def contains(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x)
        return np.all((x >= self.lo_arr) & (x <= self.hi_arr), axis=-1)

    def padded(self, fraction: float) -> "SceneBounds":
        pad = self.extent * fraction
        return SceneBounds(tuple(self.lo_arr - pad), tuple(self.hi_arr + pad))

    def to_unit(self, x: np.ndarray) -> np.ndarray:
        """Map world points into [0,1]^3 (no clamping)."""
        return (np.asarray(x) - self.lo_arr) / self.extent


@dataclass(frozen=True)
class DeformationConfig:
    embedding_width: int = 32
    spatial_hidden: tuple[int, ...] = (128, 128, 128)
    temporal_hidden: tuple[int, ...] = (64, 64)
    spatial_encoding: FrequencyConfig = field(default_factory=lambda: FrequencyConfig(num_bands=6))
    temporal_encoding: OneBlobConfig = field(default_factory=lambda: OneBlobConfig(num_bins=16))


class DeformationField:
    """Factorized offset field: offset(x, t) = basis(x) @ coeffs(t).

    basis maps a world point to a (3, width) matrix, coeffs maps a time to a
    (width,) vector. ``spatial_points_evaluated`` / ``temporal_points_evaluated``
    count rows through the respective networks (the factorization contract).
    """

    def __init__(self, cfg: DeformationConfig, bounds: SceneBounds, rng: np.random.Generator, dtype=np.float32):
        self.cfg = cfg
        self.bounds = bounds
        w = cfg.embedding_width
        in_spatial = cfg.spatial_encoding.output_width(3)
        in_temporal = cfg.temporal_encoding.output_width()
        self.spatial_mlp = Mlp([in_spatial, *cfg.spatial_hidden, 3 * w], rng, dtype=dtype)
        self.temporal_mlp = Mlp([in_temporal, *cfg.temporal_hidden, w], rng, dtype=dtype)
        self._dtype = dtype

    @property
    def spatial_points_evaluated(self) -> int:
        return self.spatial_mlp.points_evaluated

    @property
    def temporal_points_evaluated(self) -> int:
        return self.temporal_mlp.points_evaluated

    def spatial_basis(self, x_world) -> Tensor:
        """(n, 3) world points -> (n, 3, width) offset basis."""
        x = x_world if isinstance(x_world, Tensor) else Tensor(np.asarray(x_world, dtype=self._dtype))
        unit = (x - Tensor(self.bounds.lo_arr.astype(self._dtype))) * Tensor(
            (1.0 / self.bounds.extent).astype(self._dtype)
        )
        enc = frequency_encode(unit, self.cfg.spatial_encoding)
        raw = self.spatial_mlp(enc)
        return raw.reshape(x.shape[0], 3, self.cfg.embedding_width)

    def temporal_coeffs(self, times) -> Tensor:
        """(q,) times in [0,1] -> (q, width) coefficient rows."""
        t = np.atleast_1d(np.asarray(times, dtype=self._dtype))
        enc = one_blob_encode(t, self.cfg.temporal_encoding)
        return self.temporal_mlp(enc)

    def offsets_timebatch(self, x_world, times) -> Tensor:
        """(n, 3) points at (q,) times -> (n, q, 3) world-space offsets.

        Costs n spatial + q temporal network evaluations; the n*q offsets
        come from the contraction alone.
        """
        basis = self.spatial_basis(x_world)  # (n, 3, w)
        coeffs = self.temporal_coeffs(times)  # (q, w)
        out = matmul(basis, coeffs.transpose((1, 0)))  # (n, 3, q)
        return out.transpose((0, 2, 1))

    def offset(self, x_world, t: float) -> Tensor:
        """(n, 3) points at one time -> (n, 3) offsets."""
        out = self.offsets_timebatch(x_world, np.asarray([t]))
        return out.reshape(out.shape[0], 3)

    def parameters(self) -> list[Tensor]:
        return self.spatial_mlp.parameters() + self.temporal_mlp.parameters()

    def named_parameters(self) -> dict[str, Tensor]:
        out = self.spatial_mlp.named_parameters("deform.spatial.")
        out.update(self.temporal_mlp.named_parameters("deform.temporal."))
        return out

    def astype(self, dtype) -> "DeformationField":
        self.spatial_mlp.astype(dtype)
        self.temporal_mlp.astype(dtype)
        self._dtype = dtype
        return self


@dataclass(frozen=True)
class CanonicalConfig:
    grid: HashGridConfig = field(default_factory=HashGridConfig)
    density_hidden: tuple[int, ...] = (64,)
    geo_features: int = 15
    color_hidden: tuple[int, ...] = (64,)
    view_encoding: FrequencyConfig = field(default_factory=lambda: FrequencyConfig(num_bands=4))
    raw_density_clamp: float = 15.0
    # deformed points may leave the scene box; the field's unit domain is the
    # box padded by this fraction per side, beyond which density is zero
    unit_margin: float = 0.1
    density_bias: float = 0.0


class CanonicalField:
    """Static radiance field: hash features -> density head -> color head."""

    def __init__(self, cfg: CanonicalConfig, bounds: SceneBounds, rng: np.random.Generator, dtype=np.float32):
        self.cfg = cfg
        self.bounds = bounds
        self.domain = bounds.padded(cfg.unit_margin)
        self.grid = HashGrid(cfg.grid, rng, dtype=dtype)
        enc_w = cfg.grid.output_width()
        self.density_mlp = Mlp([enc_w, *cfg.density_hidden, 1 + cfg.geo_features], rng, dtype=dtype)
        dir_w = cfg.view_encoding.output_width(3)
        self.color_mlp = Mlp(
            [cfg.geo_features + dir_w, *cfg.color_hidden, 3], rng, out_activation="sigmoid", dtype=dtype
        )
        self._dtype = dtype

    def _inside(self, x: np.ndarray) -> np.ndarray:
        return self.domain.contains(x)

    def _to_unit(self, x_sub: Tensor) -> Tensor:
        lo = self.domain.lo_arr.astype(self._dtype)
        inv = (1.0 / self.domain.extent).astype(self._dtype)
        return (x_sub - Tensor(lo)) * Tensor(inv)

    def _density_raw(self, x_sub: Tensor) -> tuple[Tensor, Tensor]:
        enc = self.grid.encode(self._to_unit(x_sub))
        raw = self.density_mlp(enc)
        clamp = self.cfg.raw_density_clamp
        sigma = exp(clip(raw[:, 0] + self.cfg.density_bias, -clamp, clamp))
        return sigma, raw[:, 1:]

    def density(self, x_world) -> Tensor:
        """(n, 3) world points -> (n,) densities; zero outside the domain."""
        x = x_world if isinstance(x_world, Tensor) else Tensor(np.asarray(x_world, dtype=self._dtype))
        inside = self._inside(x.data)
        n = x.shape[0]
        if not inside.any():
            return Tensor(np.zeros(n, dtype=x.dtype))
        idx = np.nonzero(inside)[0]
        sigma_in, _ = self._density_raw(gather_rows(x, idx))
        return scatter_rows(sigma_in, idx, n)

    def query(self, x_world, directions) -> tuple[Tensor, Tensor]:
        """Density and view-dependent color; zeros outside the domain.

        directions are unit vectors, one per point.
        """
        x = x_world if isinstance(x_world, Tensor) else Tensor(np.asarray(x_world, dtype=self._dtype))
        d = np.asarray(directions, dtype=self._dtype)
        if x.shape != d.shape:
            raise ValueError(f"points {x.shape} and directions {d.shape} must align")
        inside = self._inside(x.data)
        n = x.shape[0]
        if not inside.any():
            zero = np.zeros(n, dtype=x.dtype)
            return Tensor(zero), Tensor(np.zeros((n, 3), dtype=x.dtype))
        idx = np.nonzero(inside)[0]
        sigma_in, geo = self._density_raw(gather_rows(x, idx))
        dir_enc = frequency_encode(d[idx], self.cfg.view_encoding)
        rgb_in = self.color_mlp(concat([geo, dir_enc], axis=1))
        return scatter_rows(sigma_in, idx, n), scatter_rows(rgb_in, idx, n)

    def parameters(self) -> list[Tensor]:
        return self.density_mlp.parameters() + self.color_mlp.parameters()

    def named_parameters(self) -> dict[str, Tensor]:
        out = {"canonical.table": self.grid.table}
        out.update(self.density_mlp.named_parameters("canonical.density."))
        out.update(self.color_mlp.named_parameters("canonical.color."))
        return out

    def astype(self, dtype) -> "CanonicalField":
        self.grid.astype(dtype)
        self.density_mlp.astype(dtype)
        self.color_mlp.astype(dtype)
        self._dtype = dtype
        return self


@dataclass(frozen=True)
class ModelConfig:
    bounds: SceneBounds = field(default_factory=lambda: SceneBounds.cube(3.0))
    canonical: CanonicalConfig = field(default_factory=CanonicalConfig)
    deformation: Optional[DeformationConfig] = field(default_factory=DeformationConfig)


class SceneModel:
    """Deformation + canonical field behind one query surface.

    With ``deformation=None`` the model is static: offsets are zero and time
    is ignored (the rigidity ablation).
    """

    def __init__(self, cfg: ModelConfig, rng: np.random.Generator | int = 0, dtype=np.float32):
        if not isinstance(rng, np.random.Generator):
            rng = np.random.default_rng(rng)
        self.cfg = cfg
        self.bounds = cfg.bounds
        self.canonical = CanonicalField(cfg.canonical, cfg.bounds, rng, dtype=dtype)
        self.deformation = (
            DeformationField(cfg.deformation, cfg.bounds, rng, dtype=dtype) if cfg.deformation else None
        )
        self._dtype = dtype

    @property
    def is_dynamic(self) -> bool:
        return self.deformation is not None

    def _check_time(self, t: float) -> float:
        t = float(t)
        if not 0.0 <= t <= 1.0:
            raise ValueError(f"time must lie in [0,1], got {t}")
        return t

    def offsets(self, x_world, t: float) -> Tensor:
        self._check_time(t)
        if self.deformation is None:
            n = np.asarray(x_world).shape[0] if not isinstance(x_world, Tensor) else x_world.shape[0]
            return Tensor(np.zeros((n, 3), dtype=self._dtype))
        return self.deformation.offset(x_world, t)

    def query(self, x_world, directions, t: float) -> tuple[Tensor, Tensor, Tensor]:
        """(sigma, rgb, offsets) at one time; offsets feed the motion prior."""
        offs = self.offsets(x_world, t)
        x = x_world if isinstance(x_world, Tensor) else Tensor(np.asarray(x_world, dtype=self._dtype))
        sigma, rgb = self.canonical.query(x + offs, directions)
        return sigma, rgb, offs

    def density_timebatch(self, x_world: np.ndarray, times: np.ndarray) -> np.ndarray:
        """(n, 3) points x (q,) times -> (n, q) densities, no gradients.

        Shares one spatial-basis evaluation across all q probe times.
        """
        x_world = np.asarray(x_world, dtype=self._dtype)
        times = np.atleast_1d(np.asarray(times))
        for t in times:
            self._check_time(float(t))
        n, q = x_world.shape[0], times.shape[0]
        with no_grad():
            if self.deformation is None:
                sig = self.canonical.density(x_world).data
                return np.repeat(sig[:, None], q, axis=1)
            offs = self.deformation.offsets_timebatch(x_world, times).data  # (n, q, 3)
            pts = (x_world[:, None, :] + offs).reshape(n * q, 3)
            sig = self.canonical.density(pts).data
        return sig.reshape(n, q)

    def parameters(self) -> list[Tensor]:
        return list(self.named_parameters().values())

    def named_parameters(self) -> dict[str, Tensor]:
        out = self.canonical.named_parameters()
        if self.deformation is not None:
            out.update(self.deformation.named_parameters())
        return out

    def table_parameters(self) -> list[Tensor]:
        return [self.canonical.grid.table]

    def mlp_parameters(self) -> list[Tensor]:
        out = self.canonical.parameters()
        if self.deformation is not None:
            out += self.deformation.parameters()
        return out

    def astype(self, dtype) -> "SceneModel":
        self.canonical.astype(dtype)
        if self.deformation is not None:
            self.deformation.astype(dtype)
        self._dtype = dtype
        return self
