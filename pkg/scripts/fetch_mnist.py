#!/usr/bin/env python3
"""Download the four MNIST IDX files into data/mnist.

Tries a list of mirrors for each file and verifies the IDX magic after
download.  Files are stored gzipped, exactly as served; the loader reads
either .gz or raw IDX.
"""
import gzip
import sys
import urllib.error
import urllib.request
from pathlib import Path

MIRRORS = (
    "https://ossci-datasets.s3.amazonaws.com/mnist/",
    "https://storage.googleapis.com/cvdf-datasets/mnist/",
    "http://yann.lecun.com/exdb/mnist/",
)
FILES = (
    "train-images-idx3-ubyte.gz",
    "train-labels-idx1-ubyte.gz",
    "t10k-images-idx3-ubyte.gz",
    "t10k-labels-idx1-ubyte.gz",
)


def fetch(name: str, dest: Path) -> None:
    for mirror in MIRRORS:
        url = mirror + name
        try:
            print(f"  {url}")
            with urllib.request.urlopen(url, timeout=60) as resp:
                payload = resp.read()
        except (urllib.error.URLError, OSError) as exc:
            print(f"    failed: {exc}")
            continue
        # sanity: gunzip and check the IDX magic (0x00 0x00 0x08 dims)
        head = gzip.decompress(payload)[:4]
        if head[:2] != b"\x00\x00" or head[2] != 0x08:
            print("    bad payload, trying next mirror")
            continue
        dest.write_bytes(payload)
        print(f"    ok ({len(payload)} bytes)")
        return
    raise SystemExit(f"could not download {name} from any mirror")


def main() -> None:
    out = Path(sys.argv[1]) if len(sys.argv) > 1 else (
        Path(__file__).resolve().parents[1] / "data" / "mnist")
    out.mkdir(parents=True, exist_ok=True)
    for name in FILES:
        target = out / name
        if target.exists():
            print(f"{name}: already present")
            continue
        print(f"{name}:")
        fetch(name, target)
    print(f"done; files in {out}")


if __name__ == "__main__":
    main()
