#!/usr/bin/env python3
"""Download the MNIST IDX files into data/mnist/ (needs network access).

The library itself never downloads anything; tests and experiments look for
these files via DYNACT_MNIST or ./data/mnist and fall back to the synthetic
digit task when absent.
"""

import os
import sys
import urllib.request

MIRRORS = [
    "https://ossci-datasets.s3.amazonaws.com/mnist/",
    "https://storage.googleapis.com/cvdf-datasets/mnist/",
]
FILES = [
    "train-images-idx3-ubyte.gz",
    "train-labels-idx1-ubyte.gz",
    "t10k-images-idx3-ubyte.gz",
    "t10k-labels-idx1-ubyte.gz",
]


def main() -> int:
    dest = sys.argv[1] if len(sys.argv) > 1 else os.path.join("data", "mnist")
    os.makedirs(dest, exist_ok=True)
    for fname in FILES:
        target = os.path.join(dest, fname)
        if os.path.exists(target):
            print(f"{target} already present")
            continue
        last_err = None
        for mirror in MIRRORS:
            url = mirror + fname
            try:
                print(f"fetching {url}")
                urllib.request.urlretrieve(url, target)
                break
            except OSError as e:
                last_err = e
        else:
            print(f"failed to fetch {fname}: {last_err}", file=sys.stderr)
            return 1
    print(f"done; point DYNACT_MNIST at {os.path.abspath(dest)}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
