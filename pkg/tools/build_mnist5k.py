"""Convert the 5,000-image MNIST sample shipped inside the mlxtend wheel to IDX.

Usage: python3 tools/build_mnist5k.py path/to/mlxtend-0.24.0-py3-none-any.whl [outdir]

The CSV holds 784 pixel columns followed by the label, 500 images per digit.
Output is a stratified 4000/1000 train/test split (400/100 per digit) as
gzip-compressed IDX files.
"""
import gzip
import io
import sys
import zipfile
from pathlib import Path

import numpy as np

from mstgd.data import make_rng, write_idx

MEMBER = "mlxtend/data/data/mnist_5k.csv.gz"


def main(wheel, outdir="data/mnist5k"):
    with zipfile.ZipFile(wheel) as zf:
        raw = gzip.decompress(zf.read(MEMBER))
    table = np.loadtxt(io.BytesIO(raw), delimiter=",", dtype=np.int64)
    images = table[:, :784].astype(np.uint8).reshape(-1, 28, 28)
    labels = table[:, 784].astype(np.uint8)

    rng = make_rng(0, "mnist5k-split")
    train, test = [], []
    for digit in range(10):
        ix = rng.permutation(np.flatnonzero(labels == digit))
        cut = len(ix) * 4 // 5
        train.append(ix[:cut])
        test.append(ix[cut:])
    out = Path(outdir)
    out.mkdir(parents=True, exist_ok=True)
    for name, parts in (("train", train), ("t10k", test)):
        idx = rng.permutation(np.concatenate(parts))
        write_idx(images[idx], labels[idx], out / f"{name}-images-idx3-ubyte.gz",
                  out / f"{name}-labels-idx1-ubyte.gz", compress=True)
        print(f"{name}: {len(idx)} images")


if __name__ == "__main__":
    main(*sys.argv[1:])
