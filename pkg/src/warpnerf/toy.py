"""Synthetic scenes with closed-form geometry.

Two uses: analytic density/color fields that stand in for a trained model in
renderer and occupancy tests (their images can be computed independently),
and a ray-traced Lambertian sphere that generates a small monocularized
dataset for end-to-end training runs.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .autodiff import Tensor
from .dataset import FrameRecord, Intrinsics, SceneDataset, save_image_rgba, save_scene
from .encodings import HashGridConfig
from .occupancy import OccupancyGridConfig
from .render import Camera
from .scene_model import CanonicalConfig, DeformationConfig, ModelConfig, SceneBounds


class TranslatingBlobModel:
    """Smooth density bump on a sinusoidal translation, colors from position.

    Density has compact support, peak * (1 - (r/radius)^2)^3 inside the
    radius and exactly zero beyond it, so occupancy culling against it is
    lossless by construction. Implements the query/density_timebatch surface
    of a trained model, with every quantity available in closed form.
    """

    def __init__(
        self,
        bounds: SceneBounds | None = None,
        center=(0.0, 0.0, 0.0),
        axis=(1.0, 0.0, 0.0),
        amplitude: float = 0.1,
        radius: float = 0.25,
        peak: float = 40.0,
    ):
        self.bounds = bounds or SceneBounds.cube(1.0)
        self.center0 = np.asarray(center, dtype=np.float64)
        self.axis = np.asarray(axis, dtype=np.float64)
        self.amplitude = float(amplitude)
        self.radius = float(radius)
        self.peak = float(peak)

    @property
    def is_dynamic(self) -> bool:
        return True

    def center(self, t: float) -> np.ndarray:
        return self.center0 + self.amplitude * np.sin(2.0 * np.pi * t) * self.axis

    def offset_value(self, t: float) -> np.ndarray:
        """Uniform translation into canonical coordinates (the t=0 pose)."""
        return self.center0 - self.center(t)

    def canonical_sigma(self, x: np.ndarray) -> np.ndarray:
        d2 = np.sum((np.asarray(x, dtype=np.float64) - self.center0) ** 2, axis=-1)
        u = 1.0 - d2 / self.radius**2
        return self.peak * np.maximum(u, 0.0) ** 3

    def canonical_color(self, x: np.ndarray) -> np.ndarray:
        u = (np.asarray(x, dtype=np.float64) - self.center0) / max(self.radius, 1e-9)
        r = 0.5 + 0.5 * np.sin(1.3 * u[..., 0] + 0.4)
        g = 0.5 + 0.5 * np.sin(1.1 * u[..., 1] + 2.0)
        b = 0.5 + 0.5 * np.sin(0.9 * u[..., 2] + 4.0)
        return np.stack([r, g, b], axis=-1)

    def sigma_at(self, x: np.ndarray, t: float) -> np.ndarray:
        return self.canonical_sigma(np.asarray(x) + self.offset_value(t))

    def query(self, x, dirs, t: float):
        x = np.asarray(x, dtype=np.float64)
        offs = np.broadcast_to(self.offset_value(t), x.shape)
        xc = x + offs
        sigma = self.canonical_sigma(xc).astype(np.float32)
        rgb = self.canonical_color(xc).astype(np.float32)
        return Tensor(sigma), Tensor(rgb), Tensor(offs.astype(np.float32).copy())

    def density_timebatch(self, x: np.ndarray, times: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        out = np.empty((x.shape[0], len(times)), dtype=np.float64)
        for j, t in enumerate(np.atleast_1d(times)):
            out[:, j] = self.sigma_at(x, float(t))
        return out

    def occupied_radius(self, threshold: float) -> float:
        """Radius beyond which density falls below the threshold."""
        if threshold >= self.peak:
            return 0.0
        return self.radius * float(np.sqrt(1.0 - (threshold / self.peak) ** (1.0 / 3.0)))


# -- ray-traced ground truth ----------------------------------------------


@dataclass(frozen=True)
class ToySceneSpec:
    """A textured Lambertian sphere translating sinusoidally along x."""

    bounds_side: float = 0.5
    sphere_radius: float = 0.13
    amplitude: float = 0.11
    axis: tuple[float, float, float] = (1.0, 0.0, 0.0)
    light_dir: tuple[float, float, float] = (0.4, -0.35, 0.82)
    ambient: float = 0.35
    diffuse: float = 0.65
    camera_distance: float = 1.1
    image_size: int = 64
    focal: float = 96.0
    n_frames: int = 60
    elevation_range: tuple[float, float] = (0.25, 1.1)  # radians above the xy plane
    supersample: int = 3

    @property
    def bounds(self) -> SceneBounds:
        return SceneBounds.cube(self.bounds_side)

    def sphere_center(self, t: float) -> np.ndarray:
        return self.amplitude * np.sin(2.0 * np.pi * t) * np.asarray(self.axis, dtype=np.float64)


def sphere_albedo(local: np.ndarray, radius: float) -> np.ndarray:
    """Smooth position-based texture in sphere-local coordinates."""
    u = np.asarray(local, dtype=np.float64) / radius
    r = 0.55 + 0.3 * np.sin(np.pi * 2.5 * u[..., 0] + 0.5)
    g = 0.55 + 0.3 * np.sin(np.pi * 1.75 * u[..., 1] + 2.2)
    b = 0.55 + 0.3 * np.sin(np.pi * 1.25 * (u[..., 0] + u[..., 2]) + 4.0)
    return np.stack([r, g, b], axis=-1)


def _ray_sphere(origins: np.ndarray, dirs: np.ndarray, center: np.ndarray, radius: float):
    oc = center[None, :] - origins
    b = np.sum(oc * dirs, axis=1)
    disc = b * b - (np.sum(oc * oc, axis=1) - radius * radius)
    hit = disc >= 0.0
    s = b - np.sqrt(np.maximum(disc, 0.0))
    hit &= s > 0.0
    return hit, s


def shade_points(pts: np.ndarray, center: np.ndarray, spec: ToySceneSpec) -> np.ndarray:
    normals = (pts - center[None, :]) / spec.sphere_radius
    light = np.asarray(spec.light_dir, dtype=np.float64)
    light = light / np.linalg.norm(light)
    lambert = spec.ambient + spec.diffuse * np.maximum(normals @ light, 0.0)
    albedo = sphere_albedo(pts - center[None, :], spec.sphere_radius)
    return np.clip(albedo * lambert[:, None], 0.0, 1.0)


def render_reference_view(camera: Camera, t: float, spec: ToySceneSpec) -> np.ndarray:
    """Exact render of the toy scene: straight-alpha RGBA (h, w, 4).

    Supersampled (spec.supersample^2 rays per pixel), averaged premultiplied
    and then divided back out, matching how the model's renders are stored.
    """
    center = spec.sphere_center(t)
    ss = spec.supersample
    base = camera.pixel_grid().astype(np.float64)
    pre = np.zeros((base.shape[0], 3), dtype=np.float64)
    cov = np.zeros(base.shape[0], dtype=np.float64)
    for sy in range(ss):
        for sx in range(ss):
            sub = base + np.array([(sx + 0.5) / ss - 0.5, (sy + 0.5) / ss - 0.5])
            origins, dirs = camera.rays(sub)
            hit, s = _ray_sphere(origins, dirs, center, spec.sphere_radius)
            if hit.any():
                pts = origins[hit] + s[hit, None] * dirs[hit]
                rgb = shade_points(pts, center, spec)
                pre[hit] += rgb
            cov += hit
    n = ss * ss
    pre /= n
    cov /= n
    safe = np.maximum(cov, 1e-12)[:, None]
    rgb = np.where(cov[:, None] > 0, pre / safe, 0.0)
    img = np.concatenate([rgb, cov[:, None]], axis=1)
    return img.reshape(camera.height, camera.width, 4).astype(np.float32)


def hemisphere_camera(spec: ToySceneSpec, azimuth: float, elevation: float) -> Camera:
    eye = spec.camera_distance * np.array(
        [np.cos(azimuth) * np.cos(elevation), np.sin(azimuth) * np.cos(elevation), np.sin(elevation)]
    )
    return Camera.look_at(
        eye=eye,
        target=(0.0, 0.0, 0.0),
        up=(0.0, 0.0, 1.0),
        width=spec.image_size,
        height=spec.image_size,
        fx=spec.focal,
    )


def sample_hemisphere_cameras(spec: ToySceneSpec, n: int, rng: np.random.Generator) -> list[Camera]:
    cams = []
    lo, hi = spec.elevation_range
    for _ in range(n):
        cams.append(hemisphere_camera(spec, rng.uniform(0.0, 2.0 * np.pi), rng.uniform(lo, hi)))
    return cams


def build_toy_dataset(
    out_dir: Path | str,
    spec: ToySceneSpec | None = None,
    seed: int = 0,
    n_val: int = 6,
    n_test: int = 12,
) -> SceneDataset:
    """Monocularized toy dataset: a fresh random view for every timestamp.

    No training camera repeats, so no timestamp is ever triangulated; the
    deformation field is the only way to relate observations across time.
    Two reserved cameras never appear in training; the first supplies val
    frames, both supply test frames, at times spread across the sequence.
    """
    spec = spec or ToySceneSpec()
    out = Path(out_dir)
    rng = np.random.default_rng(seed)
    train_cams = sample_hemisphere_cameras(spec, spec.n_frames, rng)
    reserved = [
        hemisphere_camera(spec, 0.7, 0.65),
        hemisphere_camera(spec, 3.6, 0.45),
    ]
    times = np.linspace(0.0, 1.0, spec.n_frames)

    def intrinsics(cam: Camera) -> Intrinsics:
        return Intrinsics(cam.width, cam.height, cam.fx, cam.fy, cam.cx, cam.cy)

    splits: dict[str, list[FrameRecord]] = {"train": [], "val": [], "test": []}

    def add_frame(split: str, cam: Camera, t: float):
        i = len(splits[split])
        rel = Path(split) / f"r_{i:03d}.png"
        (out / split).mkdir(parents=True, exist_ok=True)
        save_image_rgba(out / rel, render_reference_view(cam, t, spec))
        splits[split].append(
            FrameRecord(image_path=out / rel, c2w=cam.c2w.copy(), time=float(t), intrinsics=intrinsics(cam))
        )

    for cam, t in zip(train_cams, times):
        add_frame("train", cam, float(t))
    for t in np.linspace(0.05, 0.95, n_val):
        add_frame("val", reserved[0], float(t))
    for k, t in enumerate(np.linspace(0.0, 1.0, n_test)):
        add_frame("test", reserved[k % 2], float(t))

    ds = SceneDataset(root=out, splits=splits, bounds=spec.bounds)
    save_scene(ds, out)
    return ds


def toy_run_config(
    iterations: int = 5000,
    dynamic: bool = True,
    lambda_bg: float = 1e-2,
    lambda_def: float = 1e-3,
    seed: int = 0,
):
    """Run config sized so the sphere scene trains on a single CPU in minutes.

    Smaller hash table and MLPs than the full-scene defaults, a coarse
    occupancy grid with a fast decay (empty space prunes within ~10 updates
    instead of ~90), and half the ray budget drawn from the foreground box.
    """
    from .train import RunConfig, TrainConfig

    spec = ToySceneSpec()
    deformation = (
        DeformationConfig(embedding_width=16, spatial_hidden=(32, 32), temporal_hidden=(32,))
        if dynamic
        else None
    )
    model = ModelConfig(
        bounds=spec.bounds,
        canonical=CanonicalConfig(
            grid=HashGridConfig(levels=6, base_resolution=16, max_resolution=128, table_size_log2=15),
            density_hidden=(32,),
            geo_features=15,
            color_hidden=(32,),
            density_bias=-2.0,  # start nearly transparent so culling bites early
        ),
        deformation=deformation,
    )
    grid = OccupancyGridConfig(resolution=24, decay=0.6)
    train_cfg = TrainConfig(
        iterations=iterations,
        rays_per_batch=1024,
        max_samples=96,
        lambda_bg=lambda_bg,
        lambda_def=lambda_def,
        seed=seed,
        validate_interval=0,
        checkpoint_interval=0,
        foreground_fraction=0.5,
    )
    return RunConfig(model=model, grid=grid, train=train_cfg)
