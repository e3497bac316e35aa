"""Temporal occupancy grid: which cells are non-empty at *any* time.

A uniform grid over the scene bounds caches a decayed running maximum of
density per cell. Updates probe candidate cells at a handful of equidistant
random-phase timestamps (sharing the model's factorized spatial basis across
all of them) and mark a cell occupied while its cache exceeds a threshold.
Marching consults the grid to skip empty space for every timestamp at once.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .scene_model import SceneBounds


@dataclass(frozen=True)
class OccupancyGridConfig:
    resolution: int = 128
    decay: float = 0.95
    threshold: float = 0.01
    update_interval: int = 16  # trainer steps between updates
    times_per_update: int = 20
    # None probes every cell (a full sweep); otherwise this many candidates,
    # half uniform and half from currently-occupied cells
    cells_per_update: int | None = None


class TemporalOccupancyGrid:
    """Bool occupancy plus a float density cache over resolution^3 cells.

    Readers only touch ``occupied``; updates build a fresh array and publish
    it with a single assignment, so concurrent render threads always see a
    consistent snapshot.
    """

    def __init__(self, cfg: OccupancyGridConfig, bounds: SceneBounds):
        self.cfg = cfg
        self.bounds = bounds
        n = cfg.resolution**3
        self.cache = np.zeros(n, dtype=np.float32)
        self.occupied = np.zeros(n, dtype=bool)
        self.update_count = 0

    # cells are indexed x-fastest: flat = ix + R*(iy + R*iz)

    def cell_indices(self, points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Flat cell index per point plus an in-bounds mask."""
        r = self.cfg.resolution
        p = np.asarray(points, dtype=np.float64)
        unit = self.bounds.to_unit(p)
        inside = np.all((unit >= 0.0) & (unit <= 1.0), axis=-1)
        ijk = np.clip((unit * r).astype(np.int64), 0, r - 1)
        flat = ijk[..., 0] + r * (ijk[..., 1] + r * ijk[..., 2])
        return flat, inside

    def is_occupied(self, points: np.ndarray) -> np.ndarray:
        """Per-point lookup; anything outside the bounds reads as empty."""
        flat, inside = self.cell_indices(points)
        occ = self.occupied  # snapshot once; updates swap the array
        out = np.zeros(flat.shape, dtype=bool)
        out[inside] = occ[flat[inside]]
        return out

    def cell_centers(self, flat: np.ndarray) -> np.ndarray:
        r = self.cfg.resolution
        ix = flat % r
        iy = (flat // r) % r
        iz = flat // (r * r)
        unit = (np.stack([ix, iy, iz], axis=-1) + 0.5) / r
        return self.bounds.lo_arr + unit * self.bounds.extent

    @property
    def cell_size(self) -> np.ndarray:
        return self.bounds.extent / self.cfg.resolution

    @property
    def occupancy_fraction(self) -> float:
        return float(self.occupied.mean())

    def should_update(self, step: int) -> bool:
        """Steps are 1-indexed; e.g. interval 16 over 30000 steps -> 1875 updates."""
        return step % self.cfg.update_interval == 0

    def _candidates(self, rng: np.random.Generator) -> np.ndarray:
        n = self.cfg.resolution**3
        k = self.cfg.cells_per_update
        if k is None or k >= n:
            return np.arange(n)
        half = k // 2
        uniform = rng.integers(0, n, size=k - half)
        occ_idx = np.nonzero(self.occupied)[0]
        if occ_idx.size:
            from_occ = occ_idx[rng.integers(0, occ_idx.size, size=half)]
            cand = np.concatenate([uniform, from_occ])
        else:
            cand = np.concatenate([uniform, rng.integers(0, n, size=half)])
        return np.unique(cand)

    def update(self, model, rng: np.random.Generator) -> int:
        """One maintenance pass; returns the number of cells probed.

        Probe points are jittered uniformly inside each candidate cell. The
        probe times are equidistant with a shared random phase, so repeated
        updates cover the whole time axis. cache <- max(decay * cache,
        max_t sigma) per candidate; occupancy is cache > threshold.
        """
        cand = self._candidates(rng)
        q = self.cfg.times_per_update
        phase = rng.uniform(0.0, 1.0)
        times = (np.arange(q) + phase) / q

        centers = self.cell_centers(cand)
        jitter = rng.uniform(-0.5, 0.5, size=centers.shape) * self.cell_size
        pts = centers + jitter

        sigma = model.density_timebatch(pts, times)  # (n_cand, q)
        peak = np.asarray(sigma).max(axis=1)

        new_cache = self.cache.copy()
        new_cache[cand] = np.maximum(self.cfg.decay * new_cache[cand], peak)
        new_occ = new_cache > self.cfg.threshold

        self.cache = new_cache
        self.occupied = new_occ
        self.update_count += 1
        return int(cand.size)

    # -- checkpoint support ---------------------------------------------------

    def state_arrays(self) -> dict[str, np.ndarray]:
        return {
            "occupancy.cache": self.cache,
            "occupancy.bits": np.packbits(self.occupied),
        }

    def load_state_arrays(self, arrays: dict[str, np.ndarray], update_count: int = 0) -> None:
        n = self.cfg.resolution**3
        cache = np.asarray(arrays["occupancy.cache"], dtype=np.float32)
        if cache.shape != (n,):
            raise ValueError(f"occupancy cache shape {cache.shape} does not match resolution {self.cfg.resolution}")
        self.cache = cache.copy()
        self.occupied = np.unpackbits(arrays["occupancy.bits"], count=n).astype(bool)
        self.update_count = int(update_count)
