"""Pinhole cameras and transmittance-based volume rendering.

Camera convention: x right, y down, z forward (OpenCV). A pixel (px, py)
maps to the camera-space direction ((px + 0.5 - cx)/fx, (py + 0.5 - cy)/fy, 1)
before rotation into the world.

Marching uses a fixed step (scene diagonal / max_samples), culls samples
against an occupancy grid before touching the model, and composites with
exact per-ray exclusive prefix sums, so gradients flow through density,
color, and (for dynamic models) the deformation offsets.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .autodiff import Tensor, exp, gather_rows, no_grad, segment_cumsum_exclusive, segment_sum
from .scene_model import SceneBounds


@dataclass
class Camera:
    """Pinhole camera: intrinsics in pixels, camera-to-world pose."""

    width: int
    height: int
    fx: float
    fy: float
    cx: float
    cy: float
    c2w: np.ndarray  # (4, 4)

    def __post_init__(self):
        self.c2w = np.asarray(self.c2w, dtype=np.float64)
        if self.c2w.shape != (4, 4):
            raise ValueError(f"pose must be 4x4, got {self.c2w.shape}")
        if not np.allclose(self.c2w[3], [0, 0, 0, 1], atol=1e-6):
            raise ValueError("pose must be an affine transform (last row 0 0 0 1)")
        r = self.c2w[:3, :3]
        if np.max(np.abs(r @ r.T - np.eye(3))) > 1e-5:
            raise ValueError("rotation block is not orthonormal within 1e-5")
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")

    @classmethod
    def look_at(
        cls,
        eye,
        target,
        up,
        width: int,
        height: int,
        fx: float,
        fy: float | None = None,
        cx: float | None = None,
        cy: float | None = None,
    ) -> "Camera":
        """Pose looking from eye toward target; up fixes the roll."""
        eye = np.asarray(eye, dtype=np.float64)
        target = np.asarray(target, dtype=np.float64)
        up = np.asarray(up, dtype=np.float64)
        forward = target - eye
        nf = np.linalg.norm(forward)
        if nf < 1e-12:
            raise ValueError("eye and target coincide")
        forward = forward / nf
        right = np.cross(forward, up)
        nr = np.linalg.norm(right)
        if nr < 1e-12:
            raise ValueError("up vector is parallel to the view direction")
        right = right / nr
        down = np.cross(forward, right)
        c2w = np.eye(4)
        c2w[:3, 0] = right
        c2w[:3, 1] = down
        c2w[:3, 2] = forward
        c2w[:3, 3] = eye
        return cls(
            width=width,
            height=height,
            fx=fx,
            fy=fy if fy is not None else fx,
            cx=cx if cx is not None else width / 2.0,
            cy=cy if cy is not None else height / 2.0,
            c2w=c2w,
        )

    @property
    def origin(self) -> np.ndarray:
        return self.c2w[:3, 3].copy()

    @property
    def forward_axis(self) -> np.ndarray:
        return self.c2w[:3, 2].copy()

    def rays(self, pixels: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """(n, 2) pixel (px, py) coords -> unit world directions + origins.

        Rays pass through pixel centers (the +0.5 offset).
        """
        pixels = np.asarray(pixels, dtype=np.float64)
        if pixels.ndim != 2 or pixels.shape[1] != 2:
            raise ValueError(f"pixels must be (n, 2), got {pixels.shape}")
        x = (pixels[:, 0] + 0.5 - self.cx) / self.fx
        y = (pixels[:, 1] + 0.5 - self.cy) / self.fy
        dirs_cam = np.stack([x, y, np.ones_like(x)], axis=1)
        dirs = dirs_cam @ self.c2w[:3, :3].T
        dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
        origins = np.broadcast_to(self.c2w[:3, 3], dirs.shape).copy()
        return origins, dirs

    def pixel_grid(self) -> np.ndarray:
        """All pixel coords, row-major (y outer, x inner)."""
        xs, ys = np.meshgrid(np.arange(self.width), np.arange(self.height))
        return np.stack([xs.ravel(), ys.ravel()], axis=1)


def intersect_aabb(
    origins: np.ndarray, dirs: np.ndarray, bounds: SceneBounds, near: float = 0.0
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Slab test; returns (t_enter, t_exit, hit) per ray."""
    origins = np.asarray(origins, dtype=np.float64)
    dirs = np.asarray(dirs, dtype=np.float64)
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = 1.0 / dirs
        ta = (bounds.lo_arr - origins) * inv
        tb = (bounds.hi_arr - origins) * inv
    tmin = np.minimum(ta, tb)
    tmax = np.maximum(ta, tb)
    # axis-parallel components: the slab constrains nothing when the origin
    # lies inside it (closed interval) and excludes everything otherwise
    par = np.abs(dirs) < 1e-15
    if par.any():
        inside = (origins >= bounds.lo_arr) & (origins <= bounds.hi_arr)
        tmin = np.where(par, np.where(inside, -np.inf, np.inf), tmin)
        tmax = np.where(par, np.where(inside, np.inf, -np.inf), tmax)
    t0 = np.max(tmin, axis=1)
    t1 = np.min(tmax, axis=1)
    t0 = np.maximum(t0, near)
    hit = t1 > t0
    return t0, t1, hit


@dataclass
class RenderOptions:
    max_samples: int = 512
    trans_epsilon: float = 1e-4
    background: tuple[float, float, float] = (1.0, 1.0, 1.0)
    chunk: int = 16384
    workers: int = 0


def composite(
    sigmas,
    deltas,
    colors,
    ray_ids: np.ndarray,
    num_rays: int,
    background,
    dists: np.ndarray | None = None,
    trans_floor: float = 0.0,
) -> tuple[Tensor, Tensor]:
    """Blend samples into per-ray color and opacity.

    Samples of one ray must be contiguous and front to back (checked through
    ``dists`` when given). weight_i = T_i * (1 - exp(-sigma_i * delta_i))
    with T_i the transmittance accumulated before sample i; samples whose
    T_i has fallen below ``trans_floor`` are dropped. Returns
    (color (num_rays, 3), alpha (num_rays,)); rays without samples get the
    background color and alpha 0.
    """
    sig = sigmas if isinstance(sigmas, Tensor) else Tensor(sigmas)
    col = colors if isinstance(colors, Tensor) else Tensor(colors)
    dl = deltas if isinstance(deltas, Tensor) else Tensor(np.asarray(deltas, dtype=sig.dtype))
    ray_ids = np.asarray(ray_ids)
    if sig.ndim != 1 or col.ndim != 2 or col.shape[0] != sig.shape[0]:
        raise ValueError("expected sigmas (n,), colors (n, 3) with matching n")
    if ray_ids.shape != sig.shape:
        raise ValueError("ray_ids must align with samples")
    if ray_ids.size and np.any(np.diff(ray_ids) < 0):
        raise ValueError("samples must be grouped by ray in ascending order")
    if dists is not None:
        d = np.asarray(dists)
        ahead = np.diff(d) < 0
        same_ray = np.diff(ray_ids) == 0
        if np.any(ahead & same_ray):
            raise ValueError("samples within a ray must be sorted front to back")

    optical = sig * dl
    trans = exp(-segment_cumsum_exclusive(optical, ray_ids))
    weights = trans * (1.0 - exp(-optical))
    if trans_floor > 0.0:
        keep = (trans.data >= trans_floor).astype(sig.dtype)
        weights = weights * Tensor(keep)
    alpha = segment_sum(weights, ray_ids, num_rays)
    fg = segment_sum(weights.reshape(-1, 1) * col, ray_ids, num_rays)
    bg = background if isinstance(background, Tensor) else Tensor(np.asarray(background, dtype=sig.dtype))
    color = fg + (1.0 - alpha).reshape(-1, 1) * bg
    return color, alpha


@dataclass
class MarchResult:
    color: Tensor  # (num_rays, 3) blended with the background
    alpha: Tensor  # (num_rays,)
    offsets: Optional[Tensor]  # (kept_samples, 3) deformation offsets, None if static
    n_candidates: int
    n_evaluated: int
    sample_counts: np.ndarray  # (num_rays,) samples surviving the cull


def march_rays(
    model,
    origins: np.ndarray,
    dirs: np.ndarray,
    t: float,
    grid=None,
    options: RenderOptions | None = None,
    rng: np.random.Generator | None = None,
) -> MarchResult:
    """Render a batch of rays against the model at one time.

    Stratified sample jitter when ``rng`` is given (training), midpoints
    otherwise (deterministic eval). ``grid`` culls samples before model
    evaluation; None means evaluate everything inside the bounds.
    """
    opts = options or RenderOptions()
    bounds: SceneBounds = model.bounds
    origins = np.asarray(origins, dtype=np.float64)
    dirs = np.asarray(dirs, dtype=np.float64)
    dirs = dirs / np.linalg.norm(dirs, axis=1, keepdims=True)
    num_rays = origins.shape[0]
    bg = np.asarray(opts.background, dtype=np.float32)

    t0, t1, hit = intersect_aabb(origins, dirs, bounds)
    step = bounds.diagonal / opts.max_samples
    span = np.where(hit, t1 - t0, 0.0)
    counts = np.ceil(span / step).astype(np.int64)
    counts = np.minimum(counts, opts.max_samples)
    total = int(counts.sum())

    def empty_result():
        color, alpha = composite(
            Tensor(np.zeros(0, dtype=np.float32)),
            np.zeros(0, dtype=np.float32),
            Tensor(np.zeros((0, 3), dtype=np.float32)),
            np.zeros(0, dtype=np.int64),
            num_rays,
            bg,
        )
        return MarchResult(color, alpha, None, total, 0, np.zeros(num_rays, dtype=np.int64))

    if total == 0:
        return empty_result()

    ray_ids = np.repeat(np.arange(num_rays), counts)
    starts = np.concatenate([[0], np.cumsum(counts)[:-1]])
    intra = np.arange(total) - np.repeat(starts, counts)
    jitter = rng.uniform(0.0, 1.0, size=total) if rng is not None else np.full(total, 0.5)
    dist = t0[ray_ids] + (intra + jitter) * step
    keep = dist <= t1[ray_ids]  # the last ceil-step can overshoot the box

    pts = origins[ray_ids] + dist[:, None] * dirs[ray_ids]
    if grid is not None:
        keep &= grid.is_occupied(pts)

    if not keep.any():
        return empty_result()
    ray_ids = ray_ids[keep]
    dist = dist[keep]
    pts = pts[keep].astype(np.float32)
    dview = dirs[ray_ids].astype(np.float32)
    n_eval = int(pts.shape[0])

    sigma, rgb, offsets = model.query(pts, dview, t)
    color, alpha = composite(
        sigma,
        np.full(n_eval, step, dtype=np.float32),
        rgb,
        ray_ids,
        num_rays,
        bg,
        dists=dist,
        trans_floor=opts.trans_epsilon,
    )

    if offsets is not None and opts.trans_epsilon > 0.0:
        # report only offsets of samples that actually contributed
        optical = sigma.data * step
        trans = np.exp(-_exclusive_cumsum(optical, ray_ids))
        live = np.nonzero(trans >= opts.trans_epsilon)[0]
        offsets = gather_rows(offsets, live) if live.size != n_eval else offsets

    return MarchResult(
        color,
        alpha,
        offsets,
        total,
        n_eval,
        np.bincount(ray_ids, minlength=num_rays),
    )


def _exclusive_cumsum(x: np.ndarray, seg: np.ndarray) -> np.ndarray:
    if x.size == 0:
        return x
    acc = np.cumsum(x, dtype=np.float64)
    shifted = acc - x
    first = np.searchsorted(seg, seg, side="left")
    return shifted - shifted[first]


def render_image(
    model,
    camera: Camera,
    t: float,
    grid=None,
    options: RenderOptions | None = None,
) -> np.ndarray:
    """Render a full view to straight-alpha float RGBA (height, width, 4).

    Deterministic (midpoint sampling, no gradients). Colors are
    un-premultiplied; fully transparent pixels come out black.
    """
    opts = options or RenderOptions()
    pixels = camera.pixel_grid()
    origins, dirs = camera.rays(pixels)
    n = pixels.shape[0]
    fg = np.zeros((n, 3), dtype=np.float32)
    alpha = np.zeros(n, dtype=np.float32)
    chunks = range(0, n, opts.chunk)
    march_opts = replace(opts, background=(0.0, 0.0, 0.0))

    def run_chunk(lo: int):
        hi = min(lo + opts.chunk, n)
        with no_grad():
            res = march_rays(model, origins[lo:hi], dirs[lo:hi], t, grid, march_opts)
        return lo, hi, res.color.data, res.alpha.data

    if opts.workers > 1:
        with ThreadPoolExecutor(max_workers=opts.workers) as pool:
            results = list(pool.map(run_chunk, chunks))
    else:
        results = [run_chunk(lo) for lo in chunks]
    for lo, hi, c, a in results:
        fg[lo:hi] = c
        alpha[lo:hi] = a

    safe = np.maximum(alpha, 1e-8)[:, None]
    rgb = np.where(alpha[:, None] > 1e-6, fg / safe, 0.0)
    img = np.concatenate([rgb, alpha[:, None]], axis=1)
    return np.clip(img, 0.0, 1.0).astype(np.float32).reshape(camera.height, camera.width, 4)


def to_uint8(img: np.ndarray) -> np.ndarray:
    return np.round(np.clip(img, 0.0, 1.0) * 255.0).astype(np.uint8)


def composite_over(img: np.ndarray, background) -> np.ndarray:
    """Blend straight-alpha RGBA onto an opaque background color -> RGB."""
    img = np.asarray(img, dtype=np.float32)
    bg = np.asarray(background, dtype=np.float32)
    a = img[..., 3:4]
    return img[..., :3] * a + (1.0 - a) * bg
