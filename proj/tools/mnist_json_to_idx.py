#!/usr/bin/env python3
"""Convert the per-digit JSON files of the `mnist` npm package to IDX files.

The package stores 10000 MNIST digits as ``src/digits/<d>.json`` with pixel
values v/255 rounded to three decimals, which round-trips exactly to bytes.
Digits are pooled, shuffled with a fixed seed and split into train/test.
"""
import argparse
import json
import random
import struct
from pathlib import Path


def write_idx(prefix: Path, images, labels):
    with open(f"{prefix}-images.idx", "wb") as f:
        f.write(struct.pack(">IIII", 0x803, len(images), 28, 28))
        for img in images:
            f.write(img)
    with open(f"{prefix}-labels.idx", "wb") as f:
        f.write(struct.pack(">II", 0x801, len(labels)))
        f.write(bytes(labels))


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--src", required=True, help="directory holding 0.json .. 9.json")
    ap.add_argument("--out", required=True)
    ap.add_argument("--train", type=int, default=8000, help="number of training samples")
    ap.add_argument("--seed", type=int, default=20240601)
    args = ap.parse_args()

    samples = []
    for digit in range(10):
        data = json.loads((Path(args.src) / f"{digit}.json").read_text())["data"]
        if len(data) % 784:
            raise SystemExit(f"{digit}.json: payload is not a multiple of 784")
        for i in range(len(data) // 784):
            px = bytes(min(255, max(0, round(v * 255))) for v in data[i * 784:(i + 1) * 784])
            samples.append((px, digit))
    random.Random(args.seed).shuffle(samples)
    if not 0 < args.train < len(samples):
        raise SystemExit(f"--train must be in (0, {len(samples)})")

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    train, test = samples[:args.train], samples[args.train:]
    write_idx(out / "train", [s[0] for s in train], [s[1] for s in train])
    write_idx(out / "test", [s[0] for s in test], [s[1] for s in test])
    print(f"wrote {len(train)} train and {len(test)} test samples to {out}")


if __name__ == "__main__":
    main()
