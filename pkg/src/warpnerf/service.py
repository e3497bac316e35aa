"""HTTP/WebSocket render service over a frozen checkpoint.

Endpoints:
    GET  /meta    scene metadata (bounds, time range, limits, latency probe)
    POST /render  one-shot render, JSON request -> encoded image bytes
    WS   /stream  interactive session: JSON requests in, binary frames out

Stream frames carry a fixed 16-byte header followed by the encoded image:

    magic     4 bytes  b"WNF1"
    frame_id  u32 LE   req_id of the request this frame answers
    width     u16 LE
    height    u16 LE
    format    u8       0 = PNG, 1 = JPEG
    padding   3 bytes

Each session keeps a single latest-request slot: when requests arrive faster
than rendering, intermediate poses are dropped and every rendered frame is the
newest request at the moment its render started.  Frames go out in single
atomic sends, so a closing session can drop a frame but never truncate one.
With quality "auto" a moving camera renders at a reduced sample cap and a
pose held still for 300 ms triggers one full-quality re-render (same req_id).
"""

from __future__ import annotations

import asyncio
import io
import json
import struct
import time
from dataclasses import dataclass, field

import numpy as np
from fastapi import FastAPI, HTTPException, WebSocket, WebSocketDisconnect
from fastapi.responses import Response
from PIL import Image
from starlette.concurrency import run_in_threadpool

from .checkpoint import load_checkpoint, restore_grid, restore_model
from .render import Camera, RenderOptions, render_image, to_uint8

FRAME_MAGIC = b"WNF1"
FRAME_HEADER = struct.Struct("<4sIHHB3x")
FORMAT_PNG = 0
FORMAT_JPEG = 1

QUALITY_SAMPLES = {"full": 512, "preview": 64}
STABLE_AFTER_S = 0.3  # pose must rest this long before the full-quality pass


def encode_frame(image: np.ndarray, fmt: str = "png", jpeg_quality: int = 90) -> bytes:
    """Encode straight-alpha RGBA floats; JPEG flattens onto white."""
    arr = to_uint8(image)
    buf = io.BytesIO()
    if fmt == "png":
        Image.fromarray(arr, mode="RGBA").save(buf, format="PNG")
    elif fmt == "jpeg":
        alpha = arr[..., 3:4].astype(np.float32) / 255.0
        rgb = arr[..., :3].astype(np.float32) * alpha + 255.0 * (1.0 - alpha)
        Image.fromarray(np.round(rgb).astype(np.uint8), mode="RGB").save(
            buf, format="JPEG", quality=jpeg_quality
        )
    else:
        raise ValueError(f"unsupported image format {fmt!r}")
    return buf.getvalue()


def pack_frame(frame_id: int, width: int, height: int, fmt: str, payload: bytes) -> bytes:
    tag = FORMAT_PNG if fmt == "png" else FORMAT_JPEG
    return FRAME_HEADER.pack(FRAME_MAGIC, frame_id & 0xFFFFFFFF, width, height, tag) + payload


def _parse_pose(raw) -> np.ndarray:
    pose = np.asarray(raw, dtype=np.float64)
    if pose.shape == (16,):
        pose = pose.reshape(4, 4)  # row-major
    if pose.shape != (4, 4):
        raise ValueError(f"pose must be a 4x4 matrix or 16 row-major floats, got shape {pose.shape}")
    return pose


@dataclass
class RenderRequest:
    camera: Camera
    time: float
    fmt: str
    sample_cap: int
    req_id: int = 0
    quality: str = "full"

    @classmethod
    def from_json(cls, body: dict, max_res: int) -> "RenderRequest":
        width = int(body.get("width", 512))
        height = int(body.get("height", 512))
        if not (0 < width <= max_res and 0 < height <= max_res):
            raise ValueError(f"resolution {width}x{height} outside limits (max {max_res}x{max_res})")
        t = float(body.get("time", 0.0))
        if not 0.0 <= t <= 1.0:
            raise ValueError(f"time must lie in [0, 1], got {t}")
        if "pose" not in body:
            raise ValueError("request lacks a pose")
        fmt = str(body.get("format", "png"))
        if fmt not in ("png", "jpeg"):
            raise ValueError(f"unsupported image format {fmt!r}")
        quality = body.get("quality", "full")
        if isinstance(quality, bool):
            raise ValueError(f"unknown quality tier {quality!r}")
        if isinstance(quality, (int, float)):
            cap, quality = int(quality), "custom"
        elif quality in QUALITY_SAMPLES:
            cap = QUALITY_SAMPLES[quality]
        elif quality == "auto":
            cap = QUALITY_SAMPLES["full"]  # sessions lower this while the pose moves
        else:
            raise ValueError(f"unknown quality tier {quality!r}")
        if cap <= 0:
            raise ValueError("sample cap must be positive")
        fx = float(body["fx"]) if "fx" in body else 0.5 * width / np.tan(0.25)
        camera = Camera(
            width=width,
            height=height,
            fx=fx,
            fy=float(body.get("fy", fx)),
            cx=float(body.get("cx", width / 2.0)),
            cy=float(body.get("cy", height / 2.0)),
            c2w=_parse_pose(body["pose"]),
        )
        return cls(
            camera=camera,
            time=t,
            fmt=fmt,
            sample_cap=cap,
            req_id=int(body.get("req_id", 0)),
            quality=str(quality),
        )


@dataclass
class SessionState:
    """Per-connection bookkeeping; the wire protocol never exposes it."""

    frames_sent: int = 0
    last_pose_key: bytes = b""
    last_change: float = field(default_factory=time.monotonic)
    frame_times: list = field(default_factory=list)

    def note_request(self, req: RenderRequest) -> None:
        key = req.camera.c2w.tobytes() + struct.pack("<d", req.time)
        if key != self.last_pose_key:
            self.last_pose_key = key
            self.last_change = time.monotonic()

    @property
    def stable(self) -> bool:
        return time.monotonic() - self.last_change >= STABLE_AFTER_S

    def note_frame(self) -> None:
        self.frames_sent += 1
        now = time.monotonic()
        self.frame_times = [t for t in self.frame_times if now - t < 2.0] + [now]

    @property
    def fps(self) -> float:
        return len(self.frame_times) / 2.0


def create_app(checkpoint_path, max_res: int = 1024, probe_resolution: int = 64) -> FastAPI:
    """Load the checkpoint once and serve it read-only."""
    ckpt = load_checkpoint(checkpoint_path)
    model = restore_model(ckpt)
    grid = restore_grid(ckpt, model.bounds)

    def render(req: RenderRequest) -> np.ndarray:
        options = RenderOptions(max_samples=req.sample_cap)
        return render_image(model, req.camera, req.time, grid=grid, options=options)

    # per-pixel cost probe, reported scaled to 512x512 at full quality
    center = (model.bounds.lo_arr + model.bounds.hi_arr) / 2.0
    probe_cam = Camera.look_at(
        eye=center + model.bounds.diagonal * np.array([0.0, -1.0, 0.35]),
        target=center,
        up=(0.0, 0.0, 1.0),
        width=probe_resolution,
        height=probe_resolution,
        fx=probe_resolution * 1.2,
    )
    start = time.perf_counter()
    render_image(
        model, probe_cam, 0.0, grid=grid,
        options=RenderOptions(max_samples=QUALITY_SAMPLES["full"]),
    )
    latency_512 = (time.perf_counter() - start) * (512 / probe_resolution) ** 2

    app = FastAPI(title="warpnerf render service")
    app.state.model = model
    app.state.grid = grid

    @app.get("/meta")
    def meta():
        return {
            "bounds": {"lo": list(model.bounds.lo), "hi": list(model.bounds.hi)},
            "time_range": [0.0, 1.0],
            "dynamic": model.is_dynamic,
            "step": ckpt.step,
            "orbit_radius": 1.5 * model.bounds.diagonal,
            "max_resolution": max_res,
            "render_latency_512_s": latency_512,
            "formats": ["png", "jpeg"],
            "quality_tiers": QUALITY_SAMPLES,
        }

    @app.post("/render")
    async def one_shot(body: dict):
        try:
            req = RenderRequest.from_json(body, max_res)
        except ValueError as e:
            raise HTTPException(status_code=400, detail=str(e))
        img = await run_in_threadpool(render, req)
        payload = encode_frame(img, req.fmt)
        return Response(content=payload, media_type=f"image/{req.fmt}")

    @app.websocket("/stream")
    async def stream(ws: WebSocket):
        await ws.accept()
        session = SessionState()
        slot: dict = {}
        wakeup = asyncio.Event()
        closed = asyncio.Event()

        async def receive_loop():
            try:
                while True:
                    slot["req"] = json.loads(await ws.receive_text())
                    wakeup.set()
            except WebSocketDisconnect:
                closed.set()
                wakeup.set()

        receiver = asyncio.create_task(receive_loop())
        last_raw: dict | None = None
        upgraded = True  # nothing on screen yet that could need a re-render
        try:
            while not closed.is_set():
                if slot.get("req") is None:
                    if upgraded or last_raw is None:
                        await wakeup.wait()
                    else:
                        # preview frame on screen: a newer pose restarts the
                        # clock, silence long enough replays it at full quality
                        hold = STABLE_AFTER_S - (time.monotonic() - session.last_change)
                        try:
                            await asyncio.wait_for(wakeup.wait(), timeout=max(hold, 0.0))
                        except asyncio.TimeoutError:
                            slot["req"] = last_raw
                    if closed.is_set() or slot.get("req") is None:
                        continue
                wakeup.clear()
                raw = slot.pop("req")
                last_raw = raw
                try:
                    req = RenderRequest.from_json(raw, max_res)
                except ValueError as e:
                    await ws.send_text(json.dumps({"error": str(e), "req_id": raw.get("req_id", 0)}))
                    upgraded = True
                    continue
                session.note_request(req)
                if req.quality == "auto":
                    upgraded = session.stable
                    req.sample_cap = QUALITY_SAMPLES["full" if upgraded else "preview"]
                else:
                    upgraded = True
                img = await run_in_threadpool(render, req)
                if closed.is_set():
                    break
                payload = encode_frame(img, req.fmt)
                frame = pack_frame(req.req_id, req.camera.width, req.camera.height, req.fmt, payload)
                await ws.send_bytes(frame)
                session.note_frame()
        except WebSocketDisconnect:
            pass
        finally:
            receiver.cancel()

    return app


def serve(checkpoint_path, host: str = "127.0.0.1", port: int = 8090, max_res: int = 1024) -> None:
    import uvicorn

    app = create_app(checkpoint_path, max_res=max_res)
    uvicorn.run(app, host=host, port=port, log_level="info")
