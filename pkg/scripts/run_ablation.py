"""Ablation runner: ebosal, no_ekus, no_ess and both baselines on the benchmark task.

    python3 scripts/run_ablation.py [--out runs/ablation] [--jobs N] [--force]
"""

import sys
from pathlib import Path

from ebosal.cli import main

CONFIG = Path(__file__).resolve().parent.parent / "configs" / "benchmark.yaml"

if __name__ == "__main__":
    sys.exit(main(["ablate", "--config", str(CONFIG), "--out", "runs/ablation", *sys.argv[1:]]))
