"""Convert the 5000-digit MNIST subset shipped in the mlxtend wheel into
gzipped IDX files (400 train / 100 test per class, first-occurrence order).

usage: python3 make_mnist_subset.py path/to/mlxtend-*.whl out_dir
"""
import gzip
import io
import struct
import sys
import zipfile

import numpy as np

whl, out = sys.argv[1], sys.argv[2]
raw = zipfile.ZipFile(whl).read("mlxtend/data/data/mnist_5k.csv.gz")
table = np.loadtxt(io.BytesIO(gzip.decompress(raw)), delimiter=",")
pixels = table[:, :-1].astype(np.uint8)
labels = table[:, -1].astype(np.uint8)

train_idx, test_idx = [], []
for c in range(10):
    rows = np.flatnonzero(labels == c)
    train_idx.extend(rows[:400])
    test_idx.extend(rows[400:500])


def write(prefix, idx):
    idx = sorted(idx)
    with gzip.GzipFile(f"{out}/{prefix}-images-idx3-ubyte.gz", "wb", mtime=0) as f:
        f.write(struct.pack(">IIII", 0x803, len(idx), 28, 28))
        f.write(pixels[idx].tobytes())
    with gzip.GzipFile(f"{out}/{prefix}-labels-idx1-ubyte.gz", "wb", mtime=0) as f:
        f.write(struct.pack(">II", 0x801, len(idx)))
        f.write(labels[idx].tobytes())


write("train", train_idx)
write("t10k", test_idx)
