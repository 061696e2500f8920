"""Margin sweep: ebosal over the 3x3 (delta_k, delta_u) grid, 5 seeds per point.

    python3 scripts/run_sweep.py [--out runs/sweep] [--jobs N] [--force]
"""

import sys
from pathlib import Path

from ebosal.cli import main

CONFIG = Path(__file__).resolve().parent.parent / "configs" / "sweep.yaml"

if __name__ == "__main__":
    sys.exit(main(["sweep", "--config", str(CONFIG), *sys.argv[1:]]))
