"""Scene datasets: manifest parsing, image IO, monocularization.

A scene directory holds transforms_{train,val,test}.json manifests plus
image files. Each frame carries a camera-to-world transform and a timestamp;
poses are converted to the internal convention (x right, y down, z forward)
at load time. Times are normalized to [0,1]: values already inside pass
through, all-integer frame indices divide by their maximum, anything else is
a format error.
"""

from __future__ import annotations

import json
import shutil
import warnings
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from PIL import Image

from .render import Camera
from .scene_model import SceneBounds

SPLITS = ("train", "val", "test")

# column flips taking an OpenGL-style pose (y up, z backward) to ours
_GL_TO_CV = np.diag([1.0, -1.0, -1.0, 1.0])


class FormatError(ValueError):
    """Raised when a manifest or image violates the dataset contract."""


@dataclass(frozen=True)
class Intrinsics:
    width: int
    height: int
    fx: float
    fy: float
    cx: float
    cy: float


@dataclass
class FrameRecord:
    image_path: Path
    c2w: np.ndarray  # (4, 4), internal convention
    time: float
    intrinsics: Intrinsics


@dataclass
class SceneDataset:
    root: Path
    splits: dict[str, list[FrameRecord]]
    bounds: SceneBounds
    _cache: dict = field(default_factory=dict, repr=False)

    def frames(self, split: str) -> list[FrameRecord]:
        return self.splits.get(split, [])

    def n_frames(self, split: str) -> int:
        return len(self.frames(split))

    def camera(self, split: str, i: int) -> Camera:
        f = self.frames(split)[i]
        k = f.intrinsics
        return Camera(width=k.width, height=k.height, fx=k.fx, fy=k.fy, cx=k.cx, cy=k.cy, c2w=f.c2w)

    def time(self, split: str, i: int) -> float:
        return self.frames(split)[i].time

    def image(self, split: str, i: int) -> np.ndarray:
        """Straight-alpha float RGBA in [0,1], cached after first load."""
        key = (split, i)
        if key not in self._cache:
            self._cache[key] = load_image_rgba(self.frames(split)[i].image_path)
        return self._cache[key]


def load_image_rgba(path: Path) -> np.ndarray:
    img = Image.open(path)
    if img.mode not in ("RGBA", "RGB"):
        img = img.convert("RGBA")
    arr = np.asarray(img, dtype=np.float32) / 255.0
    if arr.ndim != 3:
        raise FormatError(f"{path}: expected a color image")
    if arr.shape[2] == 3:
        warnings.warn(f"{path}: no alpha channel, assuming fully opaque", stacklevel=2)
        arr = np.concatenate([arr, np.ones_like(arr[..., :1])], axis=2)
    return arr


def save_image_rgba(path: Path, img: np.ndarray) -> None:
    arr = np.round(np.clip(img, 0.0, 1.0) * 255.0).astype(np.uint8)
    Image.fromarray(arr, mode="RGBA").save(path)


def _resolve_image_path(root: Path, file_path: str) -> Path:
    p = root / file_path
    if p.suffix:
        return p
    for ext in (".png", ".jpg", ".jpeg"):
        cand = p.with_suffix(ext)
        if cand.exists():
            return cand
    return p.with_suffix(".png")


def _shared_intrinsics(manifest: dict) -> dict:
    out = {}
    for key in ("w", "h", "fl_x", "fl_y", "cx", "cy", "camera_angle_x"):
        if key in manifest:
            out[key] = manifest[key]
    return out


def _frame_intrinsics(shared: dict, frame: dict) -> Intrinsics:
    merged = dict(shared)
    for key in ("w", "h", "fl_x", "fl_y", "cx", "cy", "camera_angle_x"):
        if key in frame:
            merged[key] = frame[key]
    if "w" not in merged or "h" not in merged:
        raise FormatError("manifest lacks image dimensions (w/h)")
    w, h = int(merged["w"]), int(merged["h"])
    if "fl_x" in merged:
        fx = float(merged["fl_x"])
        fy = float(merged.get("fl_y", fx))
    elif "camera_angle_x" in merged:
        fx = fy = 0.5 * w / np.tan(0.5 * float(merged["camera_angle_x"]))
    else:
        raise FormatError("manifest lacks focal information (fl_x or camera_angle_x)")
    cx = float(merged.get("cx", w / 2.0))
    cy = float(merged.get("cy", h / 2.0))
    return Intrinsics(width=w, height=h, fx=fx, fy=fy, cx=cx, cy=cy)


def _normalize_times(raw: list[float]) -> list[float]:
    arr = np.asarray(raw, dtype=np.float64)
    if arr.size == 0:
        return []
    if arr.min() >= 0.0 and arr.max() <= 1.0:
        return [float(v) for v in arr]
    if np.allclose(arr, np.round(arr), atol=1e-9) and arr.min() >= 0:
        top = arr.max()
        return [float(v / top) for v in arr]
    raise FormatError(
        f"times must lie in [0,1] or be integer frame indices, got range [{arr.min()}, {arr.max()}]"
    )


def _validate_pose(m: np.ndarray, where: str) -> np.ndarray:
    m = np.asarray(m, dtype=np.float64)
    if m.shape == (3, 4):
        m = np.vstack([m, [0.0, 0.0, 0.0, 1.0]])
    if m.shape != (4, 4):
        raise FormatError(f"{where}: transform_matrix must be 4x4 or 3x4")
    r = m[:3, :3]
    if np.max(np.abs(r @ r.T - np.eye(3))) > 1e-5:
        raise FormatError(f"{where}: rotation is not rigid within 1e-5")
    return m


def _infer_bounds(manifest: dict) -> SceneBounds:
    if "scene_bounds" in manifest:
        b = manifest["scene_bounds"]
        return SceneBounds(tuple(b["lo"]), tuple(b["hi"]))
    # calibrated captures (explicit per-pixel focals) use a tight box,
    # synthetic manifests with a field-of-view angle use the wide default
    if "fl_x" in manifest or any("fl_x" in f for f in manifest.get("frames", [])):
        return SceneBounds.cube(0.5)
    return SceneBounds.cube(3.0)


def load_manifest(path: Path) -> dict:
    try:
        with open(path) as fh:
            return json.load(fh)
    except json.JSONDecodeError as e:
        raise FormatError(f"{path}: invalid JSON ({e})") from e


def load_scene(root: Path | str, bounds: SceneBounds | None = None) -> SceneDataset:
    """Read every transforms_<split>.json under root."""
    root = Path(root)
    splits: dict[str, list[FrameRecord]] = {}
    inferred: SceneBounds | None = None
    raw_frames: list[tuple[str, dict, dict, str]] = []  # split, frame, shared, convention
    for split in SPLITS:
        mpath = root / f"transforms_{split}.json"
        if not mpath.exists():
            continue
        manifest = load_manifest(mpath)
        if "frames" not in manifest:
            raise FormatError(f"{mpath}: missing frames list")
        convention = manifest.get("camera_convention", "opengl")
        if convention not in ("opengl", "opencv"):
            raise FormatError(f"{mpath}: unknown camera_convention {convention!r}")
        shared = _shared_intrinsics(manifest)
        if inferred is None:
            inferred = _infer_bounds(manifest)
        for frame in manifest["frames"]:
            if "time" not in frame:
                raise FormatError(f"{mpath}: frame {frame.get('file_path')} lacks a time value")
            raw_frames.append((split, frame, shared, convention))
    if not raw_frames:
        raise FormatError(f"{root}: no transforms_<split>.json manifests found")

    times = _normalize_times([float(f[1]["time"]) for f in raw_frames])
    for (split, frame, shared, convention), t in zip(raw_frames, times):
        where = f"{split}:{frame.get('file_path')}"
        m = _validate_pose(np.asarray(frame["transform_matrix"], dtype=np.float64), where)
        if convention == "opengl":
            m = m @ _GL_TO_CV
        rec = FrameRecord(
            image_path=_resolve_image_path(root, str(frame["file_path"])),
            c2w=m,
            time=t,
            intrinsics=_frame_intrinsics(shared, frame),
        )
        splits.setdefault(split, []).append(rec)

    return SceneDataset(root=root, splits=splits, bounds=bounds or inferred)


def save_scene(ds: SceneDataset, out_dir: Path | str) -> None:
    """Write manifests + copy image files bit-exactly; inverse of load_scene."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for split, frames in ds.splits.items():
        if not frames:
            continue
        (out / split).mkdir(exist_ok=True)
        entries = []
        for i, f in enumerate(frames):
            rel = f"{split}/{f.image_path.stem}{f.image_path.suffix}"
            dst = out / rel
            if f.image_path.resolve() != dst.resolve():
                shutil.copyfile(f.image_path, dst)
            k = f.intrinsics
            entries.append(
                {
                    "file_path": rel,
                    "transform_matrix": f.c2w.tolist(),
                    "time": f.time,
                    "w": k.width,
                    "h": k.height,
                    "fl_x": k.fx,
                    "fl_y": k.fy,
                    "cx": k.cx,
                    "cy": k.cy,
                }
            )
        manifest = {
            "camera_convention": "opencv",
            "scene_bounds": {"lo": list(ds.bounds.lo), "hi": list(ds.bounds.hi)},
            "frames": entries,
        }
        with open(out / f"transforms_{split}.json", "w") as fh:
            json.dump(manifest, fh, indent=1)


# -- multi-view captures ------------------------------------------------------


@dataclass
class CaptureFrame:
    camera_id: str
    time_index: int
    image_path: Path
    c2w: np.ndarray
    intrinsics: Intrinsics


@dataclass
class MultiViewCapture:
    root: Path
    frames: list[CaptureFrame]

    @property
    def camera_ids(self) -> list[str]:
        return sorted({f.camera_id for f in self.frames})

    @property
    def time_indices(self) -> list[int]:
        return sorted({f.time_index for f in self.frames})


def load_capture(root: Path | str) -> MultiViewCapture:
    """Read a synchronized capture manifest (transforms.json).

    Frames carry a camera id and an integer time index; every camera is
    expected to cover every time index.
    """
    root = Path(root)
    manifest = load_manifest(root / "transforms.json")
    convention = manifest.get("camera_convention", "opengl")
    shared = _shared_intrinsics(manifest)
    frames = []
    for frame in manifest.get("frames", []):
        if "camera" not in frame or "time" not in frame:
            raise FormatError("capture frames need camera and time fields")
        m = _validate_pose(np.asarray(frame["transform_matrix"], dtype=np.float64), str(frame.get("file_path")))
        if convention == "opengl":
            m = m @ _GL_TO_CV
        frames.append(
            CaptureFrame(
                camera_id=str(frame["camera"]),
                time_index=int(frame["time"]),
                image_path=_resolve_image_path(root, str(frame["file_path"])),
                c2w=m,
                intrinsics=_frame_intrinsics(shared, frame),
            )
        )
    if not frames:
        raise FormatError(f"{root}: capture has no frames")
    return MultiViewCapture(root=root, frames=frames)


def monocularize(
    capture: MultiViewCapture,
    reserved: list[str],
    rng: np.random.Generator,
    bounds: SceneBounds | None = None,
) -> SceneDataset:
    """One uniformly drawn camera per timestamp; reserved cameras feed val/test.

    Training frames never come from a reserved camera. Reserved cameras keep
    all their frames, split alternately (by time) into val and test.
    """
    ids = capture.camera_ids
    unknown = [r for r in reserved if r not in ids]
    if unknown:
        raise FormatError(f"reserved cameras not in capture: {unknown}")
    pool = [c for c in ids if c not in reserved]
    if not pool:
        raise FormatError("no cameras left after reserving")

    by_time: dict[int, dict[str, CaptureFrame]] = {}
    for f in capture.frames:
        by_time.setdefault(f.time_index, {})[f.camera_id] = f
    time_indices = sorted(by_time)
    top = max(time_indices) or 1

    def to_record(f: CaptureFrame) -> FrameRecord:
        return FrameRecord(
            image_path=f.image_path,
            c2w=f.c2w,
            time=f.time_index / top,
            intrinsics=f.intrinsics,
        )

    splits: dict[str, list[FrameRecord]] = {"train": [], "val": [], "test": []}
    for ti in time_indices:
        have = by_time[ti]
        avail = [c for c in pool if c in have]
        if not avail:
            raise FormatError(f"time index {ti} has no unreserved camera")
        pick = avail[int(rng.integers(0, len(avail)))]
        splits["train"].append(to_record(have[pick]))
        for k, rid in enumerate(reserved):
            if rid in have:
                dest = "val" if (ti + k) % 2 == 0 else "test"
                splits[dest].append(to_record(have[rid]))

    inferred = bounds or SceneBounds.cube(0.5)
    return SceneDataset(root=capture.root, splits=splits, bounds=inferred)
