"""Generate the translating-sphere dataset used by the end-to-end runs."""

import argparse
from dataclasses import replace

from warpnerf.toy import ToySceneSpec, build_toy_dataset


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", required=True)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--frames", type=int, default=60)
    ap.add_argument("--size", type=int, default=64, help="image width/height in pixels")
    ap.add_argument("--val", type=int, default=6)
    ap.add_argument("--test", type=int, default=12)
    args = ap.parse_args()

    base = ToySceneSpec()
    spec = replace(
        base,
        n_frames=args.frames,
        image_size=args.size,
        focal=base.focal * args.size / base.image_size,  # keep the field of view
    )
    ds = build_toy_dataset(args.out, spec=spec, seed=args.seed, n_val=args.val, n_test=args.test)
    counts = ", ".join(f"{s} {ds.n_frames(s)}" for s in ("train", "val", "test"))
    print(f"wrote {args.out}: {counts}")


if __name__ == "__main__":
    main()
