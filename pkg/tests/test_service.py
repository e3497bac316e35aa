import io
import json
import time

import numpy as np
import pytest
from fastapi.testclient import TestClient
from numpy.testing import assert_array_equal
from PIL import Image

from warpnerf import service
from warpnerf.checkpoint import CheckpointError, save_checkpoint
from warpnerf.encodings import FrequencyConfig, HashGridConfig, OneBlobConfig
from warpnerf.metrics import psnr
from warpnerf.occupancy import OccupancyGridConfig, TemporalOccupancyGrid
from warpnerf.render import Camera, RenderOptions, render_image, to_uint8
from warpnerf.scene_model import (
    CanonicalConfig,
    DeformationConfig,
    ModelConfig,
    SceneBounds,
    SceneModel,
)
from warpnerf.service import (
    FRAME_HEADER,
    FRAME_MAGIC,
    FORMAT_JPEG,
    FORMAT_PNG,
    QUALITY_SAMPLES,
    RenderRequest,
    create_app,
    encode_frame,
    pack_frame,
)

MAX_RES = 64


def small_config():
    return ModelConfig(
        bounds=SceneBounds.cube(1.0),
        canonical=CanonicalConfig(
            grid=HashGridConfig(levels=4, base_resolution=4, max_resolution=32, table_size_log2=10),
            density_hidden=(16,),
            geo_features=7,
            color_hidden=(16,),
            view_encoding=FrequencyConfig(num_bands=2),
        ),
        deformation=DeformationConfig(
            embedding_width=8,
            spatial_hidden=(16, 16),
            temporal_hidden=(16,),
            spatial_encoding=FrequencyConfig(num_bands=3),
            temporal_encoding=OneBlobConfig(num_bins=8),
        ),
    )


def make_camera(width=16, height=16):
    return Camera.look_at(
        eye=(0.3, -2.0, 0.6),
        target=(0.0, 0.0, 0.0),
        up=(0.0, 0.0, 1.0),
        width=width,
        height=height,
        fx=width * 1.25,
    )


def pose_list(camera: Camera) -> list:
    return [float(v) for v in camera.c2w.reshape(-1)]


def base_request(camera=None, **overrides) -> dict:
    camera = camera or make_camera()
    body = {
        "pose": pose_list(camera),
        "time": 0.5,
        "width": camera.width,
        "height": camera.height,
        "fx": camera.fx,
        "quality": "full",
        "req_id": 1,
    }
    body.update(overrides)
    return body


@pytest.fixture(scope="module")
def checkpoint_path(tmp_path_factory):
    rng = np.random.default_rng(7)
    model = SceneModel(small_config(), rng=rng)
    grid = TemporalOccupancyGrid(OccupancyGridConfig(resolution=8), model.bounds)
    grid.update(model, rng)
    path = tmp_path_factory.mktemp("svc") / "toy.wnrf"
    save_checkpoint(path, model, grid=grid, step=123)
    return path


@pytest.fixture(scope="module")
def client(checkpoint_path):
    app = create_app(checkpoint_path, max_res=MAX_RES, probe_resolution=8)
    with TestClient(app) as client:
        yield client


def offline_render(client, camera, t, sample_cap):
    model = client.app.state.model
    grid = client.app.state.grid
    return render_image(model, camera, t, grid=grid, options=RenderOptions(max_samples=sample_cap))


class TestEncodeFrame:
    def test_png_roundtrip_is_bit_exact(self):
        rng = np.random.default_rng(3)
        img = rng.uniform(0.0, 1.0, size=(9, 13, 4)).astype(np.float32)
        decoded = np.asarray(Image.open(io.BytesIO(encode_frame(img, "png"))))
        assert_array_equal(decoded, to_uint8(img))

    def test_single_black_pixel(self):
        img = np.zeros((1, 1, 4), dtype=np.float32)
        img[..., 3] = 1.0
        decoded = np.asarray(Image.open(io.BytesIO(encode_frame(img, "png"))))
        assert decoded.shape == (1, 1, 4)
        assert tuple(decoded[0, 0]) == (0, 0, 0, 255)

    def test_jpeg_decodes_close_to_source(self):
        # smooth content, alpha 1: the streaming tier must stay above 35 dB
        y, x = np.mgrid[0:48, 0:64]
        img = np.zeros((48, 64, 4), dtype=np.float32)
        img[..., 0] = x / 63.0
        img[..., 1] = y / 47.0
        img[..., 2] = 0.5 + 0.4 * np.sin(x / 9.0) * np.cos(y / 7.0)
        img[..., 3] = 1.0
        decoded = np.asarray(Image.open(io.BytesIO(encode_frame(img, "jpeg"))))
        assert decoded.shape == (48, 64, 3)
        source = to_uint8(img)[..., :3].astype(np.float64) / 255.0
        assert psnr(decoded.astype(np.float64) / 255.0, source) > 35.0

    def test_jpeg_flattens_alpha_onto_white(self):
        img = np.zeros((8, 8, 4), dtype=np.float32)  # fully transparent black
        decoded = np.asarray(Image.open(io.BytesIO(encode_frame(img, "jpeg"))))
        assert decoded.min() > 240  # white within JPEG error

    def test_unsupported_format_rejected(self):
        with pytest.raises(ValueError, match="unsupported image format"):
            encode_frame(np.zeros((2, 2, 4), dtype=np.float32), "webp")


class TestFrameHeader:
    def test_layout_is_sixteen_bytes(self):
        frame = pack_frame(42, 640, 480, "png", b"payload")
        assert FRAME_HEADER.size == 16
        magic, frame_id, w, h, tag = FRAME_HEADER.unpack(frame[:16])
        assert magic == FRAME_MAGIC
        assert (frame_id, w, h, tag) == (42, 640, 480, FORMAT_PNG)
        assert frame[16:] == b"payload"

    def test_jpeg_tag(self):
        frame = pack_frame(7, 12, 10, "jpeg", b"")
        assert FRAME_HEADER.unpack(frame)[4] == FORMAT_JPEG

    def test_frame_id_wraps_into_u32(self):
        frame = pack_frame(2**32 + 5, 1, 1, "png", b"")
        assert FRAME_HEADER.unpack(frame)[1] == 5


class TestRequestParsing:
    def test_sixteen_floats_row_major(self):
        cam = make_camera()
        req = RenderRequest.from_json(base_request(cam), MAX_RES)
        assert_array_equal(req.camera.c2w, cam.c2w)

    def test_nested_pose_matrix(self):
        cam = make_camera()
        req = RenderRequest.from_json(base_request(cam, pose=cam.c2w.tolist()), MAX_RES)
        assert_array_equal(req.camera.c2w, cam.c2w)

    def test_quality_tiers_map_to_sample_caps(self):
        assert RenderRequest.from_json(base_request(quality="full"), MAX_RES).sample_cap == 512
        assert RenderRequest.from_json(base_request(quality="preview"), MAX_RES).sample_cap == 64
        assert RenderRequest.from_json(base_request(quality=17), MAX_RES).sample_cap == 17

    def test_default_focal_used_when_missing(self):
        body = base_request()
        del body["fx"]
        req = RenderRequest.from_json(body, MAX_RES)
        assert req.camera.fx == pytest.approx(0.5 * 16 / np.tan(0.25))

    def test_time_outside_unit_interval_rejected(self):
        with pytest.raises(ValueError, match="time must lie"):
            RenderRequest.from_json(base_request(time=1.5), MAX_RES)

    def test_oversize_resolution_rejected(self):
        with pytest.raises(ValueError, match="outside limits"):
            RenderRequest.from_json(base_request(width=MAX_RES + 1), MAX_RES)


class TestMeta:
    def test_reports_scene_and_limits(self, client):
        meta = client.get("/meta").json()
        bounds = small_config().bounds
        assert meta["bounds"]["lo"] == list(bounds.lo)
        assert meta["bounds"]["hi"] == list(bounds.hi)
        assert meta["time_range"] == [0.0, 1.0]
        assert meta["dynamic"] is True
        assert meta["step"] == 123
        assert meta["max_resolution"] == MAX_RES
        assert meta["orbit_radius"] > 0

    def test_latency_probe_is_positive(self, client):
        meta = client.get("/meta").json()
        assert 0 < meta["render_latency_512_s"] < 3600


class TestOneShotRender:
    def test_matches_offline_render_bit_exactly(self, client):
        cam = make_camera()
        resp = client.post("/render", json=base_request(cam, time=0.5))
        assert resp.status_code == 200
        assert resp.headers["content-type"] == "image/png"
        served = np.asarray(Image.open(io.BytesIO(resp.content)))
        offline = to_uint8(offline_render(client, cam, 0.5, QUALITY_SAMPLES["full"]))
        assert_array_equal(served, offline)

    def test_jpeg_content_type(self, client):
        resp = client.post("/render", json=base_request(format="jpeg", quality="preview"))
        assert resp.status_code == 200
        assert resp.headers["content-type"] == "image/jpeg"
        img = Image.open(io.BytesIO(resp.content))
        assert img.size == (16, 16)

    def test_bad_time_rejected(self, client):
        resp = client.post("/render", json=base_request(time=-0.1))
        assert resp.status_code == 400
        assert "time must lie" in resp.json()["detail"]

    def test_oversize_resolution_echoes_limits(self, client):
        resp = client.post("/render", json=base_request(width=MAX_RES * 2, height=MAX_RES * 2))
        assert resp.status_code == 400
        assert f"max {MAX_RES}x{MAX_RES}" in resp.json()["detail"]

    def test_missing_pose_rejected(self, client):
        body = base_request()
        del body["pose"]
        resp = client.post("/render", json=body)
        assert resp.status_code == 400
        assert "pose" in resp.json()["detail"]


def read_frame(ws):
    data = ws.receive_bytes()
    magic, frame_id, w, h, tag = FRAME_HEADER.unpack(data[:16])
    assert magic == FRAME_MAGIC
    img = np.asarray(Image.open(io.BytesIO(data[16:])))
    return frame_id, w, h, tag, img


class TestStream:
    def test_single_request_frame_matches_offline(self, client):
        cam = make_camera(12, 12)
        with client.websocket_connect("/stream") as ws:
            ws.send_text(json.dumps(base_request(cam, req_id=9, quality="preview")))
            frame_id, w, h, tag, img = read_frame(ws)
        assert (frame_id, w, h, tag) == (9, 12, 12, FORMAT_PNG)
        offline = to_uint8(offline_render(client, cam, 0.5, QUALITY_SAMPLES["preview"]))
        assert_array_equal(img, offline)

    def test_newest_wins_under_backpressure(self, client):
        # fire 100 requests back to back; the session may drop stale poses
        # but every delivered frame must be newer than the one before it and
        # the final request must be answered
        cam = make_camera(12, 12)
        n = 100
        with client.websocket_connect("/stream") as ws:
            for i in range(n):
                ws.send_text(json.dumps(base_request(cam, req_id=i, time=i / (n - 1), quality="preview")))
            received = []
            while not received or received[-1] != n - 1:
                received.append(read_frame(ws)[0])
        assert len(received) <= n
        assert all(b > a for a, b in zip(received, received[1:]))

    def test_invalid_request_keeps_session_alive(self, client):
        cam = make_camera(8, 8)
        with client.websocket_connect("/stream") as ws:
            ws.send_text(json.dumps(base_request(cam, req_id=3, time=7.0)))
            err = json.loads(ws.receive_text())
            assert "time must lie" in err["error"]
            assert err["req_id"] == 3
            ws.send_text(json.dumps(base_request(cam, req_id=4, quality="preview")))
            assert read_frame(ws)[0] == 4

    def test_auto_quality_upgrades_after_stability(self, client, monkeypatch):
        caps = []
        original = service.render_image

        def spy(model, camera, t, grid=None, options=None):
            caps.append(options.max_samples)
            return original(model, camera, t, grid=grid, options=options)

        monkeypatch.setattr(service, "render_image", spy)
        cam = make_camera(8, 8)
        with client.websocket_connect("/stream") as ws:
            ws.send_text(json.dumps(base_request(cam, req_id=5, quality="auto")))
            first = read_frame(ws)
            second = read_frame(ws)  # arrives after the 300 ms stability hold
        assert caps == [QUALITY_SAMPLES["preview"], QUALITY_SAMPLES["full"]]
        assert first[0] == second[0] == 5

    def test_pinned_quality_never_rerenders(self, client):
        cam = make_camera(8, 8)
        with client.websocket_connect("/stream") as ws:
            ws.send_text(json.dumps(base_request(cam, req_id=6, quality="preview")))
            read_frame(ws)
            time.sleep(0.4)  # outlive the stability window with no pose change
            ws.send_text(json.dumps(base_request(cam, req_id=7, quality="preview")))
            assert read_frame(ws)[0] == 7  # a spurious re-render would echo 6


class TestStartup:
    def test_corrupt_checkpoint_fails_with_diagnostic(self, tmp_path):
        bad = tmp_path / "bad.wnrf"
        bad.write_bytes(b"not a checkpoint at all")
        with pytest.raises(CheckpointError, match="magic"):
            create_app(bad)

    def test_missing_checkpoint_fails(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            create_app(tmp_path / "absent.wnrf")
