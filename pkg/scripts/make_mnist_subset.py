"""Rebuild data/mnist369 from the npm `mnist` package.

The npm package (cazala/mnist, MIT) embeds genuine MNIST samples as JSON
with pixels rounded to 3 decimals of v/255.  Rounding back to bytes is
lossless (worst-case error 0.1275 < 0.5), so the IDX files written here
contain the original MNIST bytes for digits 3, 8 and 9.

Usage:  npm pack mnist && tar xzf mnist-*.tgz && python scripts/make_mnist_subset.py package/src/digits
"""

import json
import struct
import sys
from pathlib import Path

import numpy as np

DIGITS = (3, 8, 9)
OUT_DIR = Path(__file__).resolve().parent.parent / "data" / "mnist369"


def main(digits_dir):
    digits_dir = Path(digits_dir)
    per_digit = {}
    for dig in DIGITS:
        flat = json.loads((digits_dir / f"{dig}.json").read_text())["data"]
        a = np.asarray(flat, dtype=np.float64).reshape(-1, 784)
        per_digit[dig] = np.rint(a * 255.0).astype(np.uint8)

    # round-robin interleave so the file order mixes classes
    order = []
    idx = {d: 0 for d in DIGITS}
    while any(idx[d] < len(per_digit[d]) for d in DIGITS):
        for d in DIGITS:
            if idx[d] < len(per_digit[d]):
                order.append((d, idx[d]))
                idx[d] += 1

    images = np.stack([per_digit[d][i] for d, i in order])
    labels = np.array([d for d, _ in order], dtype=np.uint8)
    n = len(labels)

    OUT_DIR.mkdir(parents=True, exist_ok=True)
    with open(OUT_DIR / "train-images-idx3-ubyte", "wb") as f:
        f.write(struct.pack(">IIII", 0x00000803, n, 28, 28))
        f.write(images.tobytes())
    with open(OUT_DIR / "train-labels-idx1-ubyte", "wb") as f:
        f.write(struct.pack(">II", 0x00000801, n))
        f.write(labels.tobytes())
    print(f"wrote {n} samples to {OUT_DIR}")


if __name__ == "__main__":
    main(sys.argv[1] if len(sys.argv) > 1 else "package/src/digits")
