"""Command-line entry points.

    warpnerf train        --data <dir> --config <yaml> --out <dir> --seed <n>
    warpnerf render       --checkpoint <path> --camera <json> --time <t> --out <png>
    warpnerf monocularize --in <capture-dir> --reserve <id,id> --seed <n> --out <dir>
    warpnerf eval         --pred <dir> --gt <dir>
    warpnerf serve        --checkpoint <path> --bind <addr:port> --max-res <n>
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np
import yaml
from PIL import Image

from .checkpoint import CheckpointError, load_checkpoint, restore_grid, restore_model
from .dataset import FormatError, load_capture, load_image_rgba, load_scene, monocularize, save_scene
from .metrics import psnr, ssim
from .render import Camera, RenderOptions, composite_over, render_image, to_uint8
from .train import run_config_from_dict, train


def camera_from_json(spec: dict) -> Camera:
    """Build a camera from a JSON spec.

    Required: width, height, and fx (or camera_angle_x).  Pose: either "c2w"
    (4x4 nested or 16 row-major floats) or "look_at" with eye/target and an
    optional up (default +z).
    """
    for key in ("width", "height"):
        if key not in spec:
            raise ValueError(f"camera spec lacks {key!r}")
    width, height = int(spec["width"]), int(spec["height"])
    if "fx" in spec:
        fx = float(spec["fx"])
    elif "camera_angle_x" in spec:
        fx = 0.5 * width / np.tan(0.5 * float(spec["camera_angle_x"]))
    else:
        raise ValueError("camera spec needs fx or camera_angle_x")
    fy = float(spec.get("fy", fx))
    cx = float(spec.get("cx", width / 2.0))
    cy = float(spec.get("cy", height / 2.0))
    if "c2w" in spec:
        c2w = np.asarray(spec["c2w"], dtype=np.float64)
        if c2w.shape == (16,):
            c2w = c2w.reshape(4, 4)
        return Camera(width=width, height=height, fx=fx, fy=fy, cx=cx, cy=cy, c2w=c2w)
    if "look_at" in spec:
        la = spec["look_at"]
        return Camera.look_at(
            eye=la["eye"],
            target=la["target"],
            up=la.get("up", (0.0, 0.0, 1.0)),
            width=width,
            height=height,
            fx=fx,
            fy=fy,
            cx=cx,
            cy=cy,
        )
    raise ValueError("camera spec needs c2w or look_at")


def cmd_train(args) -> int:
    dataset = load_scene(args.data)
    raw = {}
    if args.config is not None:
        with open(args.config) as fh:
            raw = yaml.safe_load(fh) or {}
    cfg = run_config_from_dict(raw)
    # the manifest's bounds win unless the config pins its own
    if "bounds" not in raw.get("model", {}):
        cfg = replace(cfg, model=replace(cfg.model, bounds=dataset.bounds))
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.iterations is not None:
        overrides["iterations"] = args.iterations
    if overrides:
        cfg = replace(cfg, train=replace(cfg.train, **overrides))
    trainer = train(dataset, cfg, out_dir=args.out, resume_from=args.resume, log_every=args.log_every)
    scores = trainer.validate("val")
    if scores is not None:
        print(f"step {trainer.step}: val psnr {scores['psnr']:.2f} dB, ssim {scores['ssim']:.4f}")
    else:
        print(f"step {trainer.step}: done (no validation split)")
    return 0


def cmd_render(args) -> int:
    if not 0.0 <= args.time <= 1.0:
        raise ValueError(f"time must lie in [0, 1], got {args.time}")
    ckpt = load_checkpoint(args.checkpoint)
    model = restore_model(ckpt)
    grid = restore_grid(ckpt, model.bounds)
    with open(args.camera) as fh:
        camera = camera_from_json(json.load(fh))
    options = RenderOptions(max_samples=args.samples)
    img = render_image(model, camera, args.time, grid=grid, options=options)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(to_uint8(img), mode="RGBA").save(out)
    if args.float_out is not None:
        # (h, w, 4) float32, straight alpha, row-major
        np.save(args.float_out, img.astype(np.float32))
    print(f"wrote {out}")
    return 0


def cmd_monocularize(args) -> int:
    capture = load_capture(args.in_dir)
    reserved = [r for r in args.reserve.split(",") if r] if args.reserve else []
    rng = np.random.default_rng(args.seed)
    ds = monocularize(capture, reserved, rng)
    save_scene(ds, args.out)
    counts = ", ".join(f"{split} {ds.n_frames(split)}" for split in ("train", "val", "test"))
    print(f"wrote {args.out}: {counts}")
    return 0


def _flatten_for_metrics(img: np.ndarray) -> np.ndarray:
    """Float RGBA in [0,1] -> RGB over a white background (the eval protocol)."""
    return composite_over(img, (1.0, 1.0, 1.0)).astype(np.float64)


def cmd_eval(args) -> int:
    gt_dir, pred_dir = Path(args.gt), Path(args.pred)
    names = sorted(p.name for p in gt_dir.glob("*.png"))
    if not names:
        raise FileNotFoundError(f"no .png files under {gt_dir}")
    rows = []
    for name in names:
        pred_path = pred_dir / name
        if not pred_path.exists():
            raise FileNotFoundError(f"missing prediction {pred_path}")
        gt = _flatten_for_metrics(load_image_rgba(gt_dir / name))
        pred = _flatten_for_metrics(load_image_rgba(pred_path))
        rows.append((name, psnr(pred, gt), ssim(pred, gt)))
    out = open(args.out, "w", newline="") if args.out else sys.stdout
    try:
        writer = csv.writer(out)
        writer.writerow(["frame", "psnr", "ssim"])
        for name, p, s in rows:
            writer.writerow([name, f"{p:.6f}", f"{s:.6f}"])
        writer.writerow(
            ["mean", f"{np.mean([r[1] for r in rows]):.6f}", f"{np.mean([r[2] for r in rows]):.6f}"]
        )
    finally:
        if args.out:
            out.close()
    return 0


def parse_bind(bind: str) -> tuple[str, int]:
    host, sep, port = bind.rpartition(":")
    if not sep or not port.isdigit():
        raise ValueError(f"bind must look like addr:port, got {bind!r}")
    return host or "127.0.0.1", int(port)


def cmd_serve(args) -> int:
    from . import service

    host, port = parse_bind(args.bind)
    service.serve(args.checkpoint, host=host, port=port, max_res=args.max_res)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="warpnerf", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="fit a model to a scene directory")
    p.add_argument("--data", required=True, help="scene directory with transforms_*.json")
    p.add_argument("--config", default=None, help="YAML run config (defaults applied underneath)")
    p.add_argument("--out", required=True, help="output directory (checkpoint + metrics.csv)")
    p.add_argument("--seed", type=int, default=None, help="override train.seed")
    p.add_argument("--iterations", type=int, default=None, help="override train.iterations")
    p.add_argument("--resume", default=None, help="checkpoint to continue from")
    p.add_argument("--log-every", type=int, default=100)
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("render", help="render one frame from a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--camera", required=True, help="camera spec JSON file")
    p.add_argument("--time", type=float, default=0.0)
    p.add_argument("--out", required=True, help="output PNG (8-bit RGBA)")
    p.add_argument("--float-out", default=None, help="also dump float32 RGBA as .npy")
    p.add_argument("--samples", type=int, default=512, help="per-ray sample cap")
    p.set_defaults(fn=cmd_render)

    p = sub.add_parser("monocularize", help="one training view per timestamp from a multi-view capture")
    p.add_argument("--in", dest="in_dir", required=True, help="capture directory with transforms.json")
    p.add_argument("--reserve", default="", help="comma-separated camera ids for val/test")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_monocularize)

    p = sub.add_parser("eval", help="PSNR/SSIM of predicted frames against ground truth")
    p.add_argument("--pred", required=True, help="directory of predicted .png frames")
    p.add_argument("--gt", required=True, help="directory of reference .png frames")
    p.add_argument("--out", default=None, help="CSV path (default stdout)")
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("serve", help="expose a checkpoint over HTTP/WebSocket")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--bind", default="127.0.0.1:8090")
    p.add_argument("--max-res", type=int, default=1024)
    p.set_defaults(fn=cmd_serve)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except (FormatError, CheckpointError, FileNotFoundError, ValueError, KeyError) as e:
        # KeyError carries its message as args[0]; str() would add quotes
        msg = e.args[0] if isinstance(e, KeyError) and e.args else e
        print(f"error: {msg}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
