"""Convert the digit JSON files shipped in the `mnist` npm package into IDX archives.

Usage: python3 tools/npm_mnist_to_idx.py <package/src/digits> <out_dir>

Each JSON file holds a flat list of 28x28 pixel intensities in [0, 1]; they are
re-quantised to 8 bits and written as train-images-idx3-ubyte.gz and
train-labels-idx1-ubyte.gz, interleaving classes in file order.
"""
import gzip
import json
import os
import struct
import sys


def main(src, out):
    images, labels = [], []
    for digit in range(10):
        with open(os.path.join(src, f"{digit}.json")) as fh:
            flat = json.load(fh)["data"]
        count = len(flat) // 784
        for i in range(count):
            px = flat[i * 784:(i + 1) * 784]
            images.append(bytes(min(255, max(0, round(v * 255))) for v in px))
            labels.append(digit)
    os.makedirs(out, exist_ok=True)
    # gzip mtime pinned so the archives are reproducible
    with gzip.GzipFile(os.path.join(out, "train-images-idx3-ubyte.gz"), "wb", mtime=0) as fh:
        fh.write(struct.pack(">IIII", 0x00000803, len(images), 28, 28))
        for img in images:
            fh.write(img)
    with gzip.GzipFile(os.path.join(out, "train-labels-idx1-ubyte.gz"), "wb", mtime=0) as fh:
        fh.write(struct.pack(">II", 0x00000801, len(labels)))
        fh.write(bytes(labels))
    print(f"wrote {len(images)} digits to {out}")


if __name__ == "__main__":
    main(sys.argv[1], sys.argv[2])
