"""Benchmark runner: ebosal vs. random vs. entropy on the default synthetic task.

    python3 scripts/run_benchmark.py [--out runs/benchmark] [--jobs N] [--force]
"""

import sys
from pathlib import Path

from ebosal.cli import main

CONFIG = Path(__file__).resolve().parent.parent / "configs" / "benchmark.yaml"

if __name__ == "__main__":
    sys.exit(main(["run", "--config", str(CONFIG), *sys.argv[1:]]))
