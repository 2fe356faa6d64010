"""Build the bundled desk-scale MNIST subset as gzipped IDX files.

Source: the 5,000-sample MNIST excerpt shipped inside the mlxtend wheel
(``mlxtend/data/data/mnist_5k.csv.gz``, BSD-3-Clause). Rows are grouped by
class, so a seeded permutation is applied before the train/test split.

    python scripts/make_mnist_subset.py path/to/mlxtend-*.whl data/mnist5k
"""

import argparse
import gzip
import io
import struct
import zipfile
from pathlib import Path

import numpy as np

CSV_MEMBER = "mlxtend/data/data/mnist_5k.csv.gz"


def write_idx(path, array):
    array = np.ascontiguousarray(array, dtype=np.uint8)
    header = struct.pack(">BBBB", 0, 0, 0x08, array.ndim)
    header += b"".join(struct.pack(">I", d) for d in array.shape)
    with gzip.GzipFile(path, "wb", mtime=0) as fh:
        fh.write(header + array.tobytes())


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("wheel", type=Path)
    ap.add_argument("outdir", type=Path)
    ap.add_argument("--test-count", type=int, default=1000)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    with zipfile.ZipFile(args.wheel) as zf:
        raw = gzip.decompress(zf.read(CSV_MEMBER))
    table = np.loadtxt(io.BytesIO(raw), delimiter=",")
    images = table[:, :-1].astype(np.uint8).reshape(-1, 28, 28)
    labels = table[:, -1].astype(np.uint8)

    order = np.random.default_rng(args.seed).permutation(len(labels))
    images, labels = images[order], labels[order]
    n_test = args.test_count

    args.outdir.mkdir(parents=True, exist_ok=True)
    write_idx(args.outdir / "train-images-idx3-ubyte.gz", images[n_test:])
    write_idx(args.outdir / "train-labels-idx1-ubyte.gz", labels[n_test:])
    write_idx(args.outdir / "t10k-images-idx3-ubyte.gz", images[:n_test])
    write_idx(args.outdir / "t10k-labels-idx1-ubyte.gz", labels[:n_test])
    print(f"wrote {len(labels) - n_test} train / {n_test} test samples to {args.outdir}")


if __name__ == "__main__":
    main()
