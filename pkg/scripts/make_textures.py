#!/usr/bin/env python3
"""Write the seeded synthetic texture sets used by the toy run (configs/toy.ini)."""
import argparse
from pathlib import Path

from swinfir.data import write_texture_set

ROOT = Path(__file__).resolve().parents[1]


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", type=Path, default=ROOT / "data" / "toy")
    ap.add_argument("--train", type=int, default=32, help="number of training images")
    ap.add_argument("--val", type=int, default=8, help="number of held-out images")
    ap.add_argument("--size", type=int, default=96)
    ap.add_argument("--seed", type=int, default=1)
    args = ap.parse_args(argv)
    # disjoint seeds keep the held-out set out of the training stream
    write_texture_set(args.out / "train", args.train, args.size, seed=args.seed)
    write_texture_set(args.out / "val", args.val, args.size, seed=args.seed + 1000)
    print(f"wrote {args.train} training and {args.val} held-out textures under {args.out}")


if __name__ == "__main__":
    main()
