"""Training loop: single-view ray batches, three-term objective, scheduling.

Each step renders a batch of rays from one random training view over a fresh
random background color, so empty space cannot hide behind a fixed backdrop.
The objective is

    L = L_photo + lambda_bg * L_bg + lambda_def * L_def

where L_photo is the mean squared pixel error, L_bg an opacity entropy that
pushes rays to commit to foreground or background, and L_def the mean L1
norm of the deformation offsets evaluated during rendering.
"""

from __future__ import annotations

import csv
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np
import yaml

from .autodiff import Tensor, absolute, clip, log
from .checkpoint import (
    Checkpoint,
    grid_config_from_dict,
    load_checkpoint,
    model_config_from_dict,
    restore_grid,
    restore_model,
    restore_optimizer,
    save_checkpoint,
)
from .dataset import SceneDataset
from .metrics import psnr, ssim
from .occupancy import OccupancyGridConfig, TemporalOccupancyGrid
from .optim import Adam, cosine_decay
from .render import RenderOptions, composite_over, march_rays, render_image
from .scene_model import ModelConfig, SceneModel


@dataclass(frozen=True)
class TrainConfig:
    iterations: int = 30000
    rays_per_batch: int = 8192
    max_samples: int = 512
    lambda_bg: float = 1e-2
    lambda_def: float = 1e-3
    lr_table: float = 1e-2
    lr_mlp: float = 1e-3
    lr_floor_fraction: float = 0.1
    seed: int = 0
    grid_update_interval: int = 16
    checkpoint_interval: int = 5000
    validate_interval: int = 1000
    trans_epsilon: float = 1e-4
    # fraction of rays drawn from the dilated foreground box; 0 = pure uniform
    foreground_fraction: float = 0.0

    def __post_init__(self):
        for name in ("iterations", "rays_per_batch", "max_samples"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        if not (np.isfinite(self.lambda_bg) and np.isfinite(self.lambda_def)):
            raise ValueError("loss weights must be finite")
        if not 0.0 <= self.foreground_fraction <= 1.0:
            raise ValueError("foreground_fraction must lie in [0,1]")


@dataclass(frozen=True)
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    grid: OccupancyGridConfig = field(default_factory=OccupancyGridConfig)
    train: TrainConfig = field(default_factory=TrainConfig)


@dataclass
class StepMetrics:
    step: int
    total: float
    photo: float
    background: float
    deformation: float
    rays: int
    evaluations: int
    wall_time: float


def _deep_merge(base: dict, override: dict, path: str = "") -> dict:
    out = dict(base)
    for key, value in override.items():
        where = f"{path}.{key}" if path else key
        if key not in base:
            raise KeyError(f"unknown config key {where!r}")
        if isinstance(base[key], dict) and isinstance(value, dict):
            out[key] = _deep_merge(base[key], value, where)
        else:
            out[key] = value
    return out


def run_config_to_dict(cfg: RunConfig) -> dict:
    return asdict(cfg)


def run_config_from_dict(d: dict) -> RunConfig:
    merged = _deep_merge(run_config_to_dict(RunConfig()), d)
    return RunConfig(
        model=model_config_from_dict(merged["model"]),
        grid=grid_config_from_dict(merged["grid"]),
        train=TrainConfig(**merged["train"]),
    )


def load_run_config(path: Path | str) -> RunConfig:
    with open(path) as fh:
        raw = yaml.safe_load(fh) or {}
    return run_config_from_dict(raw)


def save_run_config(cfg: RunConfig, path: Path | str) -> None:
    with open(path, "w") as fh:
        yaml.safe_dump(run_config_to_dict(cfg), fh, sort_keys=False)


# -- loss terms -----------------------------------------------------------------


def photometric_loss(estimated: Tensor, reference: np.ndarray) -> Tensor:
    """Mean over rays of the squared L2 color error."""
    reference = np.asarray(reference, dtype=estimated.data.dtype)
    if estimated.data.shape != reference.shape:
        raise ValueError(f"shape mismatch: {estimated.data.shape} vs {reference.shape}")
    diff = estimated - Tensor(reference)
    return (diff * diff).sum() / float(reference.shape[0])


def background_entropy_loss(alphas: Tensor) -> Tensor:
    """Mean of -alpha*log(alpha), with the alpha->0 limit evaluated as 0."""
    a = alphas.data
    if a.min() < -1e-5 or a.max() > 1.0 + 1e-5:
        raise ValueError(f"alphas must lie in [0,1], got range [{a.min()}, {a.max()}]")
    safe = clip(alphas, 1e-10, 1.0)
    return -(alphas * log(safe)).mean()


def deformation_loss(offsets: Tensor) -> Tensor:
    """Mean over offsets of the L1 norm; an empty set contributes 0."""
    n = offsets.data.shape[0]
    if n == 0:
        return Tensor(np.zeros((), dtype=offsets.data.dtype))
    return absolute(offsets).sum() / float(n)


# -- trainer ---------------------------------------------------------------------


def _foreground_box(image: np.ndarray, dilate: int) -> tuple[int, int, int, int]:
    """(row0, row1, col0, col1), half-open, around alpha > 1e-3."""
    h, w = image.shape[:2]
    mask = image[..., 3] > 1e-3
    if not mask.any():
        return 0, h, 0, w
    rows = np.flatnonzero(mask.any(axis=1))
    cols = np.flatnonzero(mask.any(axis=0))
    return (
        max(int(rows[0]) - dilate, 0),
        min(int(rows[-1]) + 1 + dilate, h),
        max(int(cols[0]) - dilate, 0),
        min(int(cols[-1]) + 1 + dilate, w),
    )


class Trainer:
    """Single-writer optimization loop over a monocularized dataset."""

    def __init__(self, dataset: SceneDataset, cfg: RunConfig, out_dir: Path | str | None = None):
        if dataset.n_frames("train") == 0:
            raise ValueError("dataset has no training frames")
        self.dataset = dataset
        self.cfg = cfg
        self.out_dir = Path(out_dir) if out_dir is not None else None
        self.rng = np.random.default_rng(cfg.train.seed)
        self.model = SceneModel(cfg.model, rng=self.rng)
        self.grid = TemporalOccupancyGrid(cfg.grid, cfg.model.bounds)
        self.optimizer = Adam(
            [
                {"params": self.model.table_parameters(), "lr": cfg.train.lr_table, "name": "tables"},
                {"params": self.model.mlp_parameters(), "lr": cfg.train.lr_mlp, "name": "mlps"},
            ]
        )
        self.step = 0
        self._march_options = RenderOptions(
            max_samples=cfg.train.max_samples,
            trans_epsilon=cfg.train.trans_epsilon,
            background=(0.0, 0.0, 0.0),
        )
        if self.out_dir is not None:
            self.out_dir.mkdir(parents=True, exist_ok=True)

    # -- persistence ----------------------------------------------------------

    @property
    def checkpoint_path(self) -> Path:
        if self.out_dir is None:
            raise ValueError("trainer has no output directory")
        return self.out_dir / "checkpoint.wnrf"

    def save(self, path: Path | str | None = None) -> Path:
        path = Path(path) if path is not None else self.checkpoint_path
        save_checkpoint(
            path,
            self.model,
            grid=self.grid,
            optimizer=self.optimizer,
            step=self.step,
            extra_meta={
                "train": asdict(self.cfg.train),
                "rng": self.rng.bit_generator.state,
            },
        )
        return path

    @classmethod
    def from_checkpoint(
        cls, path: Path | str, dataset: SceneDataset, out_dir: Path | str | None = None
    ) -> "Trainer":
        ckpt = load_checkpoint(path)
        if "train" not in ckpt.meta or "grid" not in ckpt.meta:
            raise ValueError(f"{path}: checkpoint was not written by a trainer")
        grid_meta = dict(ckpt.meta["grid"])
        grid_meta.pop("update_count", None)
        cfg = RunConfig(
            model=model_config_from_dict(ckpt.meta["model"]),
            grid=grid_config_from_dict(grid_meta),
            train=TrainConfig(**ckpt.meta["train"]),
        )
        trainer = cls(dataset, cfg, out_dir)
        trainer.model = restore_model(ckpt)
        trainer.grid = restore_grid(ckpt, cfg.model.bounds)
        trainer.optimizer = Adam(
            [
                {"params": trainer.model.table_parameters(), "lr": cfg.train.lr_table, "name": "tables"},
                {"params": trainer.model.mlp_parameters(), "lr": cfg.train.lr_mlp, "name": "mlps"},
            ]
        )
        restore_optimizer(ckpt, trainer.optimizer)
        trainer.step = ckpt.step
        trainer.rng.bit_generator.state = ckpt.meta["rng"]
        return trainer

    # -- one optimization step --------------------------------------------------

    def _sample_pixels(self, image: np.ndarray, n: int) -> np.ndarray:
        h, w = image.shape[:2]
        ff = self.cfg.train.foreground_fraction
        n_fg = int(round(n * ff))
        idx_full = self.rng.integers(0, h * w, size=n - n_fg)
        if n_fg == 0:
            return idx_full
        r0, r1, c0, c1 = _foreground_box(image, dilate=max(2, h // 20))
        rows = self.rng.integers(r0, r1, size=n_fg)
        cols = self.rng.integers(c0, c1, size=n_fg)
        return np.concatenate([idx_full, rows * w + cols])

    def train_step(self) -> StepMetrics:
        t_start = time.perf_counter()
        cfg = self.cfg.train
        if cfg.grid_update_interval and self.step % cfg.grid_update_interval == 0:
            self.grid.update(self.model, self.rng)

        view = int(self.rng.integers(0, self.dataset.n_frames("train")))
        camera = self.dataset.camera("train", view)
        image = self.dataset.image("train", view)
        t = self.dataset.time("train", view)

        idx = self._sample_pixels(image, cfg.rays_per_batch)
        origins, dirs = camera.rays(camera.pixel_grid()[idx])
        background = self.rng.uniform(0.0, 1.0, size=3)

        result = march_rays(self.model, origins, dirs, t, self.grid, self._march_options, rng=self.rng)
        n = cfg.rays_per_batch
        bg = Tensor(background.astype(np.float32))
        predicted = result.color + (1.0 - result.alpha).reshape((n, 1)) * bg

        gt = image.reshape(-1, 4)[idx].astype(np.float64)
        reference = gt[:, 3:4] * gt[:, :3] + (1.0 - gt[:, 3:4]) * background

        photo = photometric_loss(predicted, reference.astype(np.float32))
        bg_loss = background_entropy_loss(result.alpha)
        if self.model.is_dynamic:
            def_loss = deformation_loss(result.offsets)
        else:
            def_loss = Tensor(np.zeros((), dtype=np.float32))
        total = photo + cfg.lambda_bg * bg_loss + cfg.lambda_def * def_loss

        if not np.isfinite(total.data):
            self._dump_crash_state()
            raise FloatingPointError(f"non-finite loss at step {self.step}: {float(total.data)}")

        metrics = StepMetrics(
            step=self.step,
            total=float(total.data),
            photo=float(photo.data),
            background=float(bg_loss.data),
            deformation=float(def_loss.data),
            rays=n,
            evaluations=result.n_evaluated,
            wall_time=0.0,
        )

        # a batch culled down to nothing leaves no graph to differentiate
        if total.requires_grad:
            total.backward()
            for group in self.optimizer.groups:
                base = cfg.lr_table if group["name"] == "tables" else cfg.lr_mlp
                group["lr"] = cosine_decay(base, self.step, cfg.iterations, cfg.lr_floor_fraction)
            try:
                self.optimizer.step()
            except FloatingPointError:
                self._dump_crash_state()
                raise
            self.optimizer.zero_grad()

        self.step += 1
        metrics.wall_time = time.perf_counter() - t_start
        return metrics

    def _dump_crash_state(self) -> None:
        if self.out_dir is not None:
            self.optimizer.zero_grad()
            self.save(self.out_dir / "crash_dump.wnrf")

    # -- evaluation ---------------------------------------------------------------

    def render_view(self, camera, t: float, max_samples: int | None = None) -> np.ndarray:
        options = replace(
            self._march_options,
            max_samples=max_samples or self.cfg.train.max_samples,
            background=(1.0, 1.0, 1.0),
        )
        return render_image(self.model, camera, t, grid=self.grid, options=options)

    def validate(self, split: str = "val") -> dict[str, float] | None:
        """Mean PSNR/SSIM over a held-out split, composited over white."""
        n = self.dataset.n_frames(split)
        if n == 0:
            return None
        white = (1.0, 1.0, 1.0)
        scores_p, scores_s = [], []
        for i in range(n):
            rendered = self.render_view(self.dataset.camera(split, i), self.dataset.time(split, i))
            got = composite_over(rendered, white)
            want = composite_over(self.dataset.image(split, i), white)
            scores_p.append(psnr(got, want))
            scores_s.append(ssim(got, want))
        return {"psnr": float(np.mean(scores_p)), "ssim": float(np.mean(scores_s))}


def train(
    dataset: SceneDataset,
    cfg: RunConfig,
    out_dir: Path | str | None = None,
    resume_from: Path | str | None = None,
    log_every: int = 100,
    progress=None,
) -> Trainer:
    """Run the configured number of iterations; returns the finished trainer.

    Appends per-step losses (and periodic validation scores) to
    ``out_dir/metrics.csv`` and keeps ``out_dir/checkpoint.wnrf`` current.
    """
    if resume_from is not None:
        trainer = Trainer.from_checkpoint(resume_from, dataset, out_dir)
    else:
        trainer = Trainer(dataset, cfg, out_dir)

    csv_path = trainer.out_dir / "metrics.csv" if trainer.out_dir is not None else None
    if csv_path is not None and not csv_path.exists():
        with open(csv_path, "w", newline="") as fh:
            csv.writer(fh).writerow(
                ["step", "total", "photo", "background", "deformation", "psnr_val", "ssim_val", "wall_time"]
            )

    total_steps = trainer.cfg.train.iterations
    while trainer.step < total_steps:
        metrics = trainer.train_step()
        done = trainer.step  # step count after the update
        val = None
        if trainer.cfg.train.validate_interval and done % trainer.cfg.train.validate_interval == 0:
            val = trainer.validate()
        if csv_path is not None and (done % log_every == 0 or val is not None or done == total_steps):
            with open(csv_path, "a", newline="") as fh:
                csv.writer(fh).writerow(
                    [
                        metrics.step,
                        f"{metrics.total:.6g}",
                        f"{metrics.photo:.6g}",
                        f"{metrics.background:.6g}",
                        f"{metrics.deformation:.6g}",
                        f"{val['psnr']:.4f}" if val else "",
                        f"{val['ssim']:.4f}" if val else "",
                        f"{metrics.wall_time:.4f}",
                    ]
                )
        if (
            trainer.out_dir is not None
            and trainer.cfg.train.checkpoint_interval
            and done % trainer.cfg.train.checkpoint_interval == 0
        ):
            trainer.save()
        if progress is not None:
            progress(metrics)
    if trainer.out_dir is not None:
        trainer.save()
    return trainer
