#!/usr/bin/env python3
"""Build the desk-scale MNIST subset used by the acceptance runs.

Pulls the 10,000-digit MNIST sample shipped in the `mnist` npm package,
re-quantizes pixels to bytes and writes standard (gzipped) IDX files:
the first 8,000 digits of the shuffled pool become the training split,
the remaining 2,000 the test split.

    python3 scripts/fetch_mnist_desk.py [out_dir]
"""
import gzip
import json
import random
import struct
import subprocess
import sys
import tarfile
import tempfile
from pathlib import Path

N_TRAIN = 8000


def write_idx(path, magic, dims, payload):
    with gzip.GzipFile(path, "wb", mtime=0) as f:
        f.write(struct.pack(">I", magic))
        for d in dims:
            f.write(struct.pack(">I", d))
        f.write(payload)


def main():
    out = Path(sys.argv[1] if len(sys.argv) > 1 else "data/mnist-desk")
    out.mkdir(parents=True, exist_ok=True)
    with tempfile.TemporaryDirectory() as tmp:
        subprocess.run(["npm", "pack", "mnist@1.1.0"], cwd=tmp, check=True,
                       stdout=subprocess.DEVNULL)
        with tarfile.open(Path(tmp) / "mnist-1.1.0.tgz") as tar:
            tar.extractall(tmp)
        samples = []
        for digit in range(10):
            raw = json.loads((Path(tmp) / "package/src/digits" / f"{digit}.json").read_text())
            flat = raw["data"]
            for k in range(len(flat) // 784):
                px = bytes(min(255, round(v * 255)) for v in flat[k * 784:(k + 1) * 784])
                samples.append((px, digit))
    random.Random(20240101).shuffle(samples)
    splits = {"train": samples[:N_TRAIN], "t10k": samples[N_TRAIN:]}
    for name, rows in splits.items():
        write_idx(out / f"{name}-images-idx3-ubyte.gz", 0x803, [len(rows), 28, 28],
                  b"".join(px for px, _ in rows))
        write_idx(out / f"{name}-labels-idx1-ubyte.gz", 0x801, [len(rows)],
                  bytes(label for _, label in rows))
        print(f"{name}: {len(rows)} samples")


if __name__ == "__main__":
    main()
