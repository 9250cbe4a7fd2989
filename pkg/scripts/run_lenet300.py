#!/usr/bin/env python3
"""Run the full-scale MNIST experiment end to end.

Needs the IDX files in data/mnist first (scripts/fetch_mnist.py downloads
them).  Equivalent to: softshare run --config configs/lenet300.cfg
"""
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "src"))

from softshare.cli import main

if __name__ == "__main__":
    root = Path(__file__).resolve().parents[1]
    sys.exit(main(["run", "--config", str(root / "configs" / "lenet300.cfg")]
                  + sys.argv[1:]))
