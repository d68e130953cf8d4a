"""Convert the 5k-sample MNIST CSV bundled in the mlxtend wheel into gzipped IDX files.

Usage:
    pip download --no-deps mlxtend==0.24.0 -d /tmp/wheels
    python scripts/build_mnist_subset.py /tmp/wheels/mlxtend-0.24.0-py3-none-any.whl data/mnist

The CSV holds 500 images per digit (784 pixel columns then the label). We draw a
fixed stratified split of 400 train / 100 test images per class.
"""
import gzip
import io
import sys
import zipfile
from pathlib import Path

import numpy as np

from shufflefl.datasets import save_idx

CSV_MEMBER = "mlxtend/data/data/mnist_5k.csv.gz"
SPLIT_SEED = 20240


def main(wheel: str, out_dir: str) -> None:
    raw = gzip.decompress(zipfile.ZipFile(wheel).read(CSV_MEMBER))
    table = np.loadtxt(io.BytesIO(raw), delimiter=",", dtype=np.int64)
    pixels = table[:, :784].astype(np.uint8).reshape(-1, 28, 28)
    labels = table[:, 784].astype(np.uint8)

    rng = np.random.default_rng(SPLIT_SEED)
    train_idx, test_idx = [], []
    for c in range(10):
        idx = rng.permutation(np.flatnonzero(labels == c))
        train_idx.append(idx[:400])
        test_idx.append(idx[400:])
    train_idx = rng.permutation(np.concatenate(train_idx))
    test_idx = rng.permutation(np.concatenate(test_idx))

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for name, idx in (("train", train_idx), ("t10k", test_idx)):
        save_idx(out / f"{name}-images-idx3-ubyte.gz", pixels[idx])
        save_idx(out / f"{name}-labels-idx1-ubyte.gz", labels[idx])


if __name__ == "__main__":
    main(*sys.argv[1:3])
