"""Self-describing model checkpoints.

Byte layout (little-endian throughout, documented in docs/checkpoint_format.md):

    magic     8 bytes  b"WNRF0001"
    meta_len  u32
    meta      meta_len bytes of UTF-8 JSON (version, step, configs, rng ...)
    n_tensors u32
    per tensor:
        name_len  u16, then UTF-8 name
        dtype     u8 code (see DTYPE_CODES)
        ndim      u8
        dims      ndim x u32
        data      C-order raw bytes

The metadata record carries every architecture hyperparameter, so a
checkpoint rebuilds its model without outside configuration.
"""

from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .encodings import FrequencyConfig, HashGridConfig, OneBlobConfig
from .occupancy import OccupancyGridConfig, TemporalOccupancyGrid
from .optim import Adam
from .scene_model import CanonicalConfig, DeformationConfig, ModelConfig, SceneBounds, SceneModel

MAGIC = b"WNRF0001"
FORMAT_VERSION = 1

DTYPE_CODES = {"<f4": 0, "<f8": 1, "|u1": 2, "<i4": 3, "<i8": 4, "<u4": 5}
CODE_DTYPES = {v: k for k, v in DTYPE_CODES.items()}


class CheckpointError(RuntimeError):
    """Raised when a checkpoint file is corrupt or incompatible."""


def write_bundle(path: Path | str, meta: dict, arrays: dict[str, np.ndarray]) -> None:
    meta = {"version": FORMAT_VERSION, **meta}
    meta_bytes = json.dumps(meta).encode("utf-8")
    parts = [MAGIC, struct.pack("<I", len(meta_bytes)), meta_bytes, struct.pack("<I", len(arrays))]
    for name, arr in arrays.items():
        arr = np.ascontiguousarray(arr)
        key = arr.dtype.str if arr.dtype.str in DTYPE_CODES else arr.dtype.newbyteorder("<").str
        if key not in DTYPE_CODES:
            raise CheckpointError(f"tensor {name!r} has unsupported dtype {arr.dtype}")
        arr = arr.astype(key, copy=False)
        name_bytes = name.encode("utf-8")
        parts.append(struct.pack("<H", len(name_bytes)))
        parts.append(name_bytes)
        parts.append(struct.pack("<BB", DTYPE_CODES[key], arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(arr.tobytes())
    Path(path).write_bytes(b"".join(parts))


def read_bundle(path: Path | str) -> tuple[dict, dict[str, np.ndarray]]:
    raw = Path(path).read_bytes()
    if len(raw) < len(MAGIC) + 8 or raw[: len(MAGIC)] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint (bad magic)")
    view = memoryview(raw)
    pos = len(MAGIC)

    def take(n: int) -> memoryview:
        nonlocal pos
        if pos + n > len(raw):
            raise CheckpointError(f"{path}: truncated at byte {pos}")
        chunk = view[pos : pos + n]
        pos += n
        return chunk

    (meta_len,) = struct.unpack("<I", take(4))
    meta = json.loads(bytes(take(meta_len)).decode("utf-8"))
    if meta.get("version") != FORMAT_VERSION:
        raise CheckpointError(f"{path}: unsupported format version {meta.get('version')}")
    (n_tensors,) = struct.unpack("<I", take(4))
    arrays: dict[str, np.ndarray] = {}
    for _ in range(n_tensors):
        (name_len,) = struct.unpack("<H", take(2))
        name = bytes(take(name_len)).decode("utf-8")
        code, ndim = struct.unpack("<BB", take(2))
        if code not in CODE_DTYPES:
            raise CheckpointError(f"{path}: tensor {name!r} has unknown dtype code {code}")
        shape = struct.unpack(f"<{ndim}I", take(4 * ndim))
        dtype = np.dtype(CODE_DTYPES[code])
        arrays[name] = np.frombuffer(take(int(np.prod(shape, dtype=np.int64)) * dtype.itemsize), dtype=dtype).reshape(shape).copy()
    if pos != len(raw):
        raise CheckpointError(f"{path}: {len(raw) - pos} trailing bytes")
    return meta, arrays


# -- config (de)serialization --------------------------------------------------


def model_config_to_dict(cfg: ModelConfig) -> dict:
    return asdict(cfg)


def model_config_from_dict(d: dict) -> ModelConfig:
    canon = d["canonical"]
    deform = d.get("deformation")
    return ModelConfig(
        bounds=SceneBounds(tuple(d["bounds"]["lo"]), tuple(d["bounds"]["hi"])),
        canonical=CanonicalConfig(
            grid=HashGridConfig(**canon["grid"]),
            density_hidden=tuple(canon["density_hidden"]),
            geo_features=canon["geo_features"],
            color_hidden=tuple(canon["color_hidden"]),
            view_encoding=FrequencyConfig(**canon["view_encoding"]),
            raw_density_clamp=canon["raw_density_clamp"],
            unit_margin=canon["unit_margin"],
            density_bias=canon["density_bias"],
        ),
        deformation=None
        if deform is None
        else DeformationConfig(
            embedding_width=deform["embedding_width"],
            spatial_hidden=tuple(deform["spatial_hidden"]),
            temporal_hidden=tuple(deform["temporal_hidden"]),
            spatial_encoding=FrequencyConfig(**deform["spatial_encoding"]),
            temporal_encoding=OneBlobConfig(**deform["temporal_encoding"]),
        ),
    )


def grid_config_to_dict(cfg: OccupancyGridConfig) -> dict:
    return asdict(cfg)


def grid_config_from_dict(d: dict) -> OccupancyGridConfig:
    return OccupancyGridConfig(**d)


# -- bundle assembly ------------------------------------------------------------


@dataclass
class Checkpoint:
    meta: dict
    arrays: dict[str, np.ndarray]

    @property
    def step(self) -> int:
        return int(self.meta.get("step", 0))


def save_checkpoint(
    path: Path | str,
    model: SceneModel,
    *,
    grid: TemporalOccupancyGrid | None = None,
    optimizer: Adam | None = None,
    step: int = 0,
    extra_meta: dict | None = None,
) -> None:
    meta: dict = {"step": int(step), "model": model_config_to_dict(model.cfg)}
    arrays: dict[str, np.ndarray] = {}
    for name, p in model.named_parameters().items():
        arrays[f"param.{name}"] = p.data
    if grid is not None:
        meta["grid"] = {**grid_config_to_dict(grid.cfg), "update_count": grid.update_count}
        arrays.update(grid.state_arrays())
    if optimizer is not None:
        state = optimizer.state_dict()
        tensors = state.pop("tensors")
        meta["optimizer"] = state
        for key, arr in tensors.items():
            arrays[f"adam.{key}"] = arr
    if extra_meta:
        meta.update(extra_meta)
    write_bundle(path, meta, arrays)


def load_checkpoint(path: Path | str) -> Checkpoint:
    meta, arrays = read_bundle(path)
    return Checkpoint(meta=meta, arrays=arrays)


def restore_model(ckpt: Checkpoint, dtype=np.float32) -> SceneModel:
    """Rebuild the model purely from checkpoint metadata and weights."""
    cfg = model_config_from_dict(ckpt.meta["model"])
    model = SceneModel(cfg, rng=0, dtype=dtype)
    for name, p in model.named_parameters().items():
        key = f"param.{name}"
        if key not in ckpt.arrays:
            raise CheckpointError(f"checkpoint lacks tensor {key!r}")
        arr = ckpt.arrays[key]
        if arr.shape != p.data.shape:
            raise CheckpointError(f"{key}: shape {arr.shape} does not match model {p.data.shape}")
        p.data = arr.astype(dtype, copy=True)
    return model


def restore_grid(ckpt: Checkpoint, bounds: SceneBounds) -> TemporalOccupancyGrid | None:
    if "grid" not in ckpt.meta:
        return None
    meta = dict(ckpt.meta["grid"])
    update_count = int(meta.pop("update_count", 0))
    grid = TemporalOccupancyGrid(grid_config_from_dict(meta), bounds)
    grid.load_state_arrays(ckpt.arrays, update_count=update_count)
    return grid


def restore_optimizer(ckpt: Checkpoint, optimizer: Adam) -> None:
    if "optimizer" not in ckpt.meta:
        raise CheckpointError("checkpoint carries no optimizer state")
    state = dict(ckpt.meta["optimizer"])
    state["tensors"] = {
        name[len("adam.") :]: arr for name, arr in ckpt.arrays.items() if name.startswith("adam.")
    }
    optimizer.load_state_dict(state)
