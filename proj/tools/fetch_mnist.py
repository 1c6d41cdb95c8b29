#!/usr/bin/env python3
"""Build desk-scale MNIST IDX files from the `mnist` npm package.

The package ships 10,000 real MNIST digits as JSON float arrays (pixel/255,
rounded to three decimals). Bytes are recovered exactly by round(v * 255).
Each digit class is split 90/10 into train/test, and both splits are shuffled
with a fixed seed so the output is reproducible.

    python3 tools/fetch_mnist.py [--tarball mnist-1.1.0.tgz] [--out data/mnist]
"""
import argparse
import json
import os
import random
import struct
import subprocess
import tarfile
import tempfile

ROWS = COLS = 28
TRAIN_FRACTION = 0.9


def write_idx(out_dir, stem, images, labels):
    with open(os.path.join(out_dir, f"{stem}-images-idx3-ubyte"), "wb") as f:
        f.write(struct.pack(">IIII", 0x00000803, len(images), ROWS, COLS))
        for img in images:
            f.write(bytes(img))
    with open(os.path.join(out_dir, f"{stem}-labels-idx1-ubyte"), "wb") as f:
        f.write(struct.pack(">II", 0x00000801, len(labels)))
        f.write(bytes(labels))


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--tarball", help="path to mnist-1.1.0.tgz (fetched with npm pack if omitted)")
    ap.add_argument("--out", default="data/mnist")
    ap.add_argument("--train-fraction", type=float, default=TRAIN_FRACTION)
    args = ap.parse_args()

    with tempfile.TemporaryDirectory() as tmp:
        tarball = args.tarball
        if tarball is None:
            subprocess.run(["npm", "pack", "mnist@1.1.0"], cwd=tmp, check=True,
                           stdout=subprocess.DEVNULL)
            tarball = os.path.join(tmp, "mnist-1.1.0.tgz")
        with tarfile.open(tarball) as tf:
            tf.extractall(tmp)
        train, test = [], []
        for digit in range(10):
            with open(os.path.join(tmp, "package", "src", "digits", f"{digit}.json")) as f:
                raw = json.load(f)["data"]
            n = len(raw) // (ROWS * COLS)
            samples = []
            for i in range(n):
                px = raw[i * ROWS * COLS:(i + 1) * ROWS * COLS]
                samples.append(([min(255, max(0, round(v * 255))) for v in px], digit))
            cut = int(n * args.train_fraction)
            train.extend(samples[:cut])
            test.extend(samples[cut:])

    rng = random.Random(20230101)
    rng.shuffle(train)
    rng.shuffle(test)
    os.makedirs(args.out, exist_ok=True)
    write_idx(args.out, "train", [s[0] for s in train], [s[1] for s in train])
    write_idx(args.out, "t10k", [s[0] for s in test], [s[1] for s in test])
    print(f"wrote {len(train)} train / {len(test)} test samples to {args.out}")


if __name__ == "__main__":
    main()
