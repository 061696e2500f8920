"""Synthetic open-set tasks, the labeled/unlabeled pool and the simulated annotator."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Mapping

import numpy as np


class ConfigError(ValueError):
    pass


class PoolError(KeyError):
    pass


@dataclass(frozen=True)
class GeneratorSpec:
    n_classes: int = 20
    dim: int = 8
    n_train_per_class: int = 150
    n_test_per_class: int = 50
    kind: str = "gaussian"  # "gaussian" | "ring"
    # class means uniform in [-box, box]^dim (gaussian) or ring radius (ring)
    box: float = 3.0
    sigma: float = 1.0
    # per-class std drawn uniformly in sigma * [1 - spread, 1 + spread]
    sigma_spread: float = 0.0

    def validate(self) -> None:
        if self.n_classes < 2:
            raise ConfigError(f"task.n_classes must be >= 2, got {self.n_classes}")
        if self.dim < 1:
            raise ConfigError(f"task.dim must be >= 1, got {self.dim}")
        if self.n_train_per_class < 1 or self.n_test_per_class < 1:
            raise ConfigError("task: every class needs at least one train and one test sample")
        if self.kind not in ("gaussian", "ring"):
            raise ConfigError(f"task.kind must be 'gaussian' or 'ring', got {self.kind!r}")
        if self.kind == "ring" and self.dim < 2:
            raise ConfigError("task.kind='ring' needs dim >= 2")
        if not (self.sigma > 0 and self.box > 0 and 0 <= self.sigma_spread < 1):
            raise ConfigError("task: sigma and box must be positive, sigma_spread in [0, 1)")


@dataclass(frozen=True)
class Sample:
    features: np.ndarray
    true_class: int
    pool_id: int


@dataclass
class OpenSetTask:
    dim: int
    known_classes: tuple[int, ...]
    unknown_classes: tuple[int, ...]
    mismatch_ratio: float
    spec: GeneratorSpec
    seed: int
    x_train: np.ndarray  # pool_id indexes rows
    y_train: np.ndarray
    x_test: np.ndarray  # known classes only
    y_test: np.ndarray
    means: np.ndarray = field(repr=False)

    @property
    def n_known(self) -> int:
        return len(self.known_classes)

    @property
    def is_known(self) -> np.ndarray:
        """Boolean mask over pool ids: true class is a known class."""
        return np.isin(self.y_train, self.known_classes)

    def label_index(self, classes) -> np.ndarray:
        """Map known class ids to head indices 0..|C_K|-1."""
        lookup = {c: i for i, c in enumerate(self.known_classes)}
        return np.array([lookup[int(c)] for c in np.atleast_1d(classes)], dtype=np.int64)

    @property
    def test_targets(self) -> np.ndarray:
        return self.label_index(self.y_test)

    def sample(self, pool_id: int) -> Sample:
        return Sample(self.x_train[pool_id], int(self.y_train[pool_id]), int(pool_id))


def n_known_for(n_classes: int, mismatch_ratio: float) -> int:
    return min(n_classes, max(2, int(math.floor(mismatch_ratio * n_classes + 0.5))))


def make_task(spec: GeneratorSpec, mismatch_ratio: float, seed: int) -> OpenSetTask:
    spec.validate()
    if not (0 < mismatch_ratio <= 1):
        raise ConfigError(f"mismatch_ratio must be in (0, 1], got {mismatch_ratio}")
    rng = np.random.default_rng([seed, 0x7A5C])
    c, d = spec.n_classes, spec.dim

    if spec.kind == "gaussian":
        means = rng.uniform(-spec.box, spec.box, size=(c, d))
    else:
        basis, _ = np.linalg.qr(rng.normal(size=(d, 2)))
        angles = 2 * np.pi * (np.arange(c) + rng.uniform(0, 0.5)) / c
        means = spec.box * (np.cos(angles)[:, None] * basis[:, 0] + np.sin(angles)[:, None] * basis[:, 1])
    sigmas = spec.sigma * rng.uniform(1 - spec.sigma_spread, 1 + spec.sigma_spread, size=c)

    k = n_known_for(c, mismatch_ratio)
    perm = rng.permutation(c)
    known = tuple(sorted(int(i) for i in perm[:k]))
    unknown = tuple(sorted(int(i) for i in perm[k:]))

    def draw(classes, per_class):
        ys = np.repeat(np.asarray(classes, dtype=np.int64), per_class)
        xs = means[ys] + sigmas[ys, None] * rng.normal(size=(ys.size, d))
        return xs, ys

    x_train, y_train = draw(range(c), spec.n_train_per_class)
    x_test, y_test = draw(known, spec.n_test_per_class)
    return OpenSetTask(
        dim=d,
        known_classes=known,
        unknown_classes=unknown,
        mismatch_ratio=float(mismatch_ratio),
        spec=spec,
        seed=int(seed),
        x_train=x_train,
        y_train=y_train,
        x_test=x_test,
        y_test=y_test,
        means=means,
    )


def load_csv_task(path, known_classes, test_fraction: float = 0.25, seed: int = 0) -> OpenSetTask:
    """Build a task from ``feat_0,...,feat_{d-1},class_id`` rows (header required).

    A ``test_fraction`` of every known class is held out as the test set.
    """
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or header[-1] != "class_id" or not all(h.startswith("feat_") for h in header[:-1]):
            raise ConfigError(f"{path}: header must be feat_0,...,feat_{{d-1}},class_id")
        rows = [r for r in reader if r]
    x = np.array([[float(v) for v in r[:-1]] for r in rows])
    y = np.array([int(r[-1]) for r in rows], dtype=np.int64)
    classes = sorted(set(y.tolist()))
    known = tuple(sorted(int(c) for c in known_classes))
    if len(known) < 2 or not set(known) <= set(classes):
        raise ConfigError("known_classes must name at least two classes present in the file")
    unknown = tuple(c for c in classes if c not in known)
    rng = np.random.default_rng([seed, 0xC5F])
    test_mask = np.zeros(len(y), dtype=bool)
    for c in known:
        idx = np.flatnonzero(y == c)
        n_test = max(1, int(round(test_fraction * idx.size)))
        if n_test >= idx.size:
            raise ConfigError(f"class {c} has too few rows for a train/test split")
        test_mask[rng.choice(idx, n_test, replace=False)] = True
    spec = GeneratorSpec(n_classes=len(classes), dim=x.shape[1], kind="gaussian")
    return OpenSetTask(
        dim=x.shape[1],
        known_classes=known,
        unknown_classes=unknown,
        mismatch_ratio=len(known) / len(classes),
        spec=spec,
        seed=seed,
        x_train=x[~test_mask],
        y_train=y[~test_mask],
        x_test=x[test_mask],
        y_test=y[test_mask],
        means=np.empty((0, x.shape[1])),
    )


@dataclass
class PoolState:
    task: OpenSetTask
    labeled: dict[int, int]  # pool_id -> known class id
    unlabeled: set[int]
    invalid: set[int]
    pseudo_unknown: set[int] = field(default_factory=set)
    spent_budget: int = 0
    initial_labeled: int = 0

    def labeled_ids(self) -> np.ndarray:
        return np.array(sorted(self.labeled), dtype=np.int64)

    def unlabeled_ids(self) -> np.ndarray:
        return np.array(sorted(self.unlabeled), dtype=np.int64)

    def pseudo_unknown_ids(self) -> np.ndarray:
        return np.array(sorted(self.pseudo_unknown), dtype=np.int64)

    def invalid_ids(self) -> np.ndarray:
        return np.array(sorted(self.invalid), dtype=np.int64)

    def labeled_targets(self, ids) -> np.ndarray:
        return self.task.label_index([self.labeled[int(i)] for i in ids])

    def check(self) -> None:
        """Raise AssertionError if any pool invariant is broken."""
        lab = set(self.labeled)
        assert not (lab & self.unlabeled), "labeled and unlabeled overlap"
        assert not (lab & self.invalid), "labeled and invalid overlap"
        assert not (self.unlabeled & self.invalid), "unlabeled and invalid overlap"
        assert self.pseudo_unknown <= self.unlabeled, "pseudo-unknown set escaped the pool"
        known = set(self.task.known_classes)
        assert all(c in known for c in self.labeled.values()), "unknown class in D_L"
        assert len(lab) + len(self.unlabeled) + len(self.invalid) == self.task.y_train.size
        assert self.spent_budget == len(lab) - self.initial_labeled + len(self.invalid)


def init_pool(task: OpenSetTask, init_fraction: float, seed) -> PoolState:
    if not (0 < init_fraction < 1):
        raise ConfigError(f"init_fraction must be in (0, 1), got {init_fraction}")
    rng = np.random.default_rng(seed)
    known_ids = np.flatnonzero(task.is_known)
    n_init = int(round(init_fraction * known_ids.size))
    if n_init < 1:
        raise ConfigError(f"init_fraction {init_fraction} selects no labeled samples")
    chosen = rng.choice(known_ids, n_init, replace=False)
    labeled = {int(i): int(task.y_train[i]) for i in chosen}
    unlabeled = set(range(task.y_train.size)) - set(labeled)
    return PoolState(task, labeled, unlabeled, set(), initial_labeled=len(labeled))


@dataclass(frozen=True)
class Outcome:
    sample_id: int
    known: bool
    true_class: int | None  # revealed only for known-class samples


def oracle_label(pool: PoolState, sample_ids) -> list[Outcome]:
    ids = [int(i) for i in sample_ids]
    missing = [i for i in ids if i not in pool.unlabeled]
    if missing or len(set(ids)) != len(ids):
        raise PoolError(f"query ids not in the unlabeled pool (or repeated): {missing[:5]}")
    known = set(pool.task.known_classes)
    out = []
    for i in ids:
        cls = int(pool.task.y_train[i])
        pool.unlabeled.discard(i)
        pool.pseudo_unknown.discard(i)
        if cls in known:
            pool.labeled[i] = cls
            out.append(Outcome(i, True, cls))
        else:
            pool.invalid.add(i)
            out.append(Outcome(i, False, None))
    pool.spent_budget += len(ids)
    return out


def top_k_ids(ids: np.ndarray, scores: np.ndarray, k: int) -> np.ndarray:
    """The ``k`` highest-scoring ids; ties go to the smaller id."""
    order = np.lexsort((ids, -scores))
    return ids[order[:k]]


def set_pseudo_unknown(pool: PoolState, energies: Mapping[int, float], rho: float) -> np.ndarray:
    if not (0 < rho < 1):
        raise ConfigError(f"rho must be in (0, 1), got {rho}")
    ids = pool.unlabeled_ids()
    try:
        e = np.array([energies[int(i)] for i in ids], dtype=np.float64)
    except KeyError as exc:
        raise PoolError(f"no energy for pool sample {exc.args[0]}") from None
    k = math.ceil(rho * ids.size - 1e-9)
    chosen = top_k_ids(ids, e, k)
    pool.pseudo_unknown = set(int(i) for i in chosen)
    return chosen


@dataclass(frozen=True)
class EkusBatch:
    labeled: np.ndarray
    pseudo_unknown: np.ndarray
    has_unknown: bool


def _draw_epoch_side(ids: np.ndarray, n: int, rng: np.random.Generator) -> np.ndarray:
    # every id once (shuffled) then extra draws with replacement to fill n slots
    base = rng.permutation(ids)
    if n <= base.size:
        return base[:n]
    return np.concatenate([base, rng.choice(ids, n - base.size, replace=True)])


def balanced_ekus_batches(pool: PoolState, batch_size: int, rng) -> Iterator[EkusBatch]:
    """One epoch of half-labeled, half-pseudo-unknown batches.

    The larger side is covered once; the smaller side is oversampled with
    replacement. With an empty pseudo-unknown set the batches are labeled-only
    and ``has_unknown`` is False.
    """
    if batch_size < 2 or batch_size % 2:
        raise ConfigError(f"EKUS batch_size must be even and >= 2, got {batch_size}")
    rng = np.random.default_rng(rng)
    lab = pool.labeled_ids()
    uk = pool.pseudo_unknown_ids()
    if lab.size == 0:
        raise PoolError("balanced batches need a non-empty labeled set")
    if uk.size == 0:
        order = rng.permutation(lab)
        for s in range(0, order.size, batch_size):
            yield EkusBatch(order[s : s + batch_size], uk, False)
        return
    half = batch_size // 2
    n_batches = math.ceil(max(lab.size, uk.size) / half)
    lab_draw = _draw_epoch_side(lab, n_batches * half, rng)
    uk_draw = _draw_epoch_side(uk, n_batches * half, rng)
    for b in range(n_batches):
        sl = slice(b * half, (b + 1) * half)
        yield EkusBatch(lab_draw[sl], uk_draw[sl], True)


def export_splits(pool: PoolState, path) -> None:
    """Write every train and test sample with its split to CSV."""
    task = pool.task
    path = Path(path)
    header = [f"feat_{j}" for j in range(task.dim)] + ["class_id", "split"]
    split = {}
    for i in pool.labeled:
        split[i] = "labeled"
    for i in pool.unlabeled:
        split[i] = "unlabeled"
    for i in pool.invalid:
        split[i] = "invalid"
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for i in range(task.y_train.size):
            w.writerow([repr(float(v)) for v in task.x_train[i]] + [int(task.y_train[i]), split[i]])
        for x, y in zip(task.x_test, task.y_test):
            w.writerow([repr(float(v)) for v in x] + [int(y), "test"])
