#!/usr/bin/env python3
"""Run the reference desk-scale experiment end to end.

Equivalent to: softshare run --config configs/synthetic.cfg
Takes a few minutes on one CPU core; artifacts land in out/synthetic.
"""
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "src"))

from softshare.cli import main

if __name__ == "__main__":
    root = Path(__file__).resolve().parents[1]
    sys.exit(main(["run", "--config", str(root / "configs" / "synthetic.cfg")]
                  + sys.argv[1:]))
