"""Build the gzipped IDX FashionMNIST subset under data/fashion-mnist/.

Source: the per-class JSON pixel dumps shipped in the `fashion-mnist` npm
package (src/clothes/<class>.json, 784 bytes per image, row-major 28x28).

    npm pack fashion-mnist && tar xzf fashion-mnist-*.tgz
    python3 tools/make_fashion_fixture.py package/src/clothes data/fashion-mnist
"""
import gzip
import json
import random
import struct
import sys
from pathlib import Path

MAIN_CLASSES = (0, 9)
MAIN_TRAIN, MAIN_TEST = 2000, 500
OTHER_TRAIN, OTHER_TEST = 100, 50
TEST_OFFSET = 6000


def write_idx(path, images, labels):
    with gzip.GzipFile(path / "images-idx3-ubyte.gz", "wb", mtime=0) as f:
        f.write(struct.pack(">IIII", 0x00000803, len(images), 28, 28))
        for img in images:
            f.write(bytes(img))
    with gzip.GzipFile(path / "labels-idx1-ubyte.gz", "wb", mtime=0) as f:
        f.write(struct.pack(">II", 0x00000801, len(labels)))
        f.write(bytes(labels))


def main(src, dst):
    src, dst = Path(src), Path(dst)
    rng = random.Random(20240101)
    splits = {"train": [], "test": []}
    for c in range(10):
        # class 0 carries two empty placeholder entries
        data = [img for img in json.load(open(src / f"{c}.json"))["data"] if len(img) == 784]
        n_train, n_test = (MAIN_TRAIN, MAIN_TEST) if c in MAIN_CLASSES else (OTHER_TRAIN, OTHER_TEST)
        splits["train"] += [(img, c) for img in data[:n_train]]
        splits["test"] += [(img, c) for img in data[TEST_OFFSET:TEST_OFFSET + n_test]]
    for name, rows in splits.items():
        rng.shuffle(rows)
        out = dst / name
        out.mkdir(parents=True, exist_ok=True)
        write_idx(out, [r[0] for r in rows], [r[1] for r in rows])
        print(name, len(rows))


if __name__ == "__main__":
    main(sys.argv[1], sys.argv[2])
