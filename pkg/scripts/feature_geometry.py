"""Diagnostic: how separator training reshapes the backbone features.

Trains the separator for one cycle on the benchmark task and prints the
pairwise cosine similarity of the known-class feature means before and after,
then the scorer's test accuracy for a shared (frozen) and an owned backbone.
Energy-only training tends to pull all known classes onto one direction,
which is why a frozen shared backbone classifies poorly.

    python3 scripts/feature_geometry.py [--seed 0]
"""

import argparse
from dataclasses import replace

import numpy as np

from ebosal import alcycle
from ebosal.config import ExperimentConfig


def class_mean_cosines(state, branch="ekus"):
    ids = state.pool.labeled_ids()
    y = state.pool.labeled_targets(ids)
    f = state.model.features(state.task.x_train[ids], branch).data
    means = np.array([f[y == c].mean(axis=0) for c in range(state.task.n_known)])
    means /= np.maximum(np.linalg.norm(means, axis=1, keepdims=True), 1e-12)
    cos = means @ means.T
    off = cos[~np.eye(len(cos), dtype=bool)]
    return off.min(), off.mean()


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    cfg = ExperimentConfig()
    task = cfg.task.build()
    for shared in (True, False):
        al = replace(cfg.al, model=replace(cfg.al.model, share_backbone=shared))
        state = alcycle.new_run(task, al, args.seed, cfg.run_seed(args.seed))
        before = class_mean_cosines(state)
        alcycle.train_ekus(state)
        after = class_mean_cosines(state)
        alcycle.train_ess(state)
        print(f"share_backbone={shared!s:5}  class-mean cosine min/mean: before {before[0]:.3f}/{before[1]:.3f}  "
              f"after separator {after[0]:.3f}/{after[1]:.3f}  scorer test accuracy {alcycle.evaluate_accuracy(state):.3f}")


if __name__ == "__main__":
    main()
