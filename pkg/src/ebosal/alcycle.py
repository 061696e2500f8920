"""Open-set active-learning loop: EKUS filtering, ESS scoring, baselines and ablations."""

from __future__ import annotations

import hashlib
import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import autodiff as ad
from .datagen import (
    ConfigError,
    OpenSetTask,
    PoolState,
    balanced_ekus_batches,
    init_pool,
    oracle_label,
    set_pseudo_unknown,
    top_k_ids,
)
from .losses import (
    MarginConfig,
    contrastive_loss,
    ekus_loss,
    ess_loss,
    negative_learning_loss,
    sample_complementary,
)
from .metrics import CycleReport, accuracy, auroc_arrays
from .model import DualEBM, ModelHyper, entropy, free_energy

log = logging.getLogger(__name__)

METHODS = ("ebosal", "random", "entropy", "no_ekus", "no_ess")
USES_EKUS = {"ebosal", "no_ess"}


@dataclass
class ALConfig:
    cycles: int = 5
    budget: int = 30
    rho: float = 0.05
    beta: float = 0.1
    init_fraction: float = 0.1
    margins: MarginConfig = field(default_factory=MarginConfig)
    model: ModelHyper = field(default_factory=ModelHyper)
    method: str = "ebosal"
    # None: filter with delta_k
    filter_threshold: float | None = None
    pseudo_refresh: str = "epoch"  # "epoch" | "cycle"
    nl_source: str = "pseudo_plus_pool"  # "pseudo_plus_pool" | "pseudo"
    warm_start: bool = False
    use_invalid_as_unknown: bool = False
    calibration_warmup: int = 5
    ess_epochs: int | None = None

    def validate(self) -> None:
        if self.cycles < 1:
            raise ConfigError(f"al.cycles must be >= 1, got {self.cycles}")
        if self.budget < 1:
            raise ConfigError(f"al.budget must be >= 1, got {self.budget}")
        if not 0 < self.rho < 1:
            raise ConfigError(f"al.rho must be in (0, 1), got {self.rho}")
        if self.beta < 0:
            raise ConfigError(f"al.beta must be >= 0, got {self.beta}")
        if self.method not in METHODS:
            raise ConfigError(f"al.method must be one of {METHODS}, got {self.method!r}")
        if self.pseudo_refresh not in ("epoch", "cycle"):
            raise ConfigError(f"al.pseudo_refresh must be 'epoch' or 'cycle', got {self.pseudo_refresh!r}")
        if self.nl_source not in ("pseudo_plus_pool", "pseudo"):
            raise ConfigError(f"al.nl_source must be 'pseudo_plus_pool' or 'pseudo', got {self.nl_source!r}")
        self.margins.validate()
        self.model.validate()


def derive_seed(*parts) -> int:
    """Stable 63-bit seed from any mix of ints and strings."""
    h = hashlib.blake2b(":".join(str(p) for p in parts).encode(), digest_size=8)
    return int.from_bytes(h.digest(), "little") >> 1


def stream(run_seed: int, purpose: str, cycle: int = 0) -> np.random.Generator:
    # streams depend on (seed, purpose, cycle) only, never on the method
    return np.random.default_rng(derive_seed(run_seed, purpose, cycle))


@dataclass
class RunState:
    task: OpenSetTask
    pool: PoolState
    model: DualEBM
    config: ALConfig
    seed: int  # seed label carried into reports
    run_seed: int
    history: list[CycleReport] = field(default_factory=list)
    margins: MarginConfig | None = None  # effective margins this cycle
    trained_ekus: bool = False
    trained_ess: bool = False

    @property
    def cycle(self) -> int:
        return len(self.history)


def new_run(task: OpenSetTask, config: ALConfig, seed: int = 0, run_seed: int | None = None) -> RunState:
    config.validate()
    run_seed = seed if run_seed is None else run_seed
    pool = init_pool(task, config.init_fraction, stream(run_seed, "pool"))
    model = DualEBM(task.dim, task.n_known, config.model)
    model.reinit(stream(run_seed, "init", 0))
    return RunState(task, pool, model, config, seed, run_seed, margins=replace(config.margins))


def _energies(model: DualEBM, x: np.ndarray) -> np.ndarray:
    if x.shape[0] == 0:
        return np.empty(0)
    return free_energy(model.ekus_logits(x)).data


def pool_ekus_energies(state: RunState) -> tuple[np.ndarray, np.ndarray]:
    ids = state.pool.unlabeled_ids()
    return ids, _energies(state.model, state.task.x_train[ids])


def refresh_pseudo_unknown(state: RunState) -> np.ndarray:
    ids, e = pool_ekus_energies(state)
    return set_pseudo_unknown(state.pool, dict(zip(ids.tolist(), e.tolist())), state.config.rho)


def _ekus_epoch(state: RunState, opt: ad.SGD, margins: MarginConfig, rng, nl_rng, use_hinge: bool = True) -> None:
    cfg, pool, model = state.config, state.pool, state.model
    x_all = state.task.x_train
    n_known = state.task.n_known
    # NL sees the pseudo-unknown half plus an equal-size draw from the rest of D_UL
    rest = np.array(sorted(pool.unlabeled - pool.pseudo_unknown), dtype=np.int64)
    if cfg.nl_source != "pseudo_plus_pool":
        rest = rest[:0]
    invalid = pool.invalid_ids() if cfg.use_invalid_as_unknown else np.empty(0, dtype=np.int64)
    for batch in balanced_ekus_batches(pool, cfg.model.batch_size, rng):
        lab, uk = batch.labeled, batch.pseudo_unknown
        n_extra = uk.size if batch.has_unknown else max(1, lab.size // 2)
        extra = rng.choice(rest, n_extra) if rest.size else rest
        hard_uk = rng.choice(invalid, uk.size) if invalid.size and uk.size else invalid[:0]
        rows = np.concatenate([lab, uk, extra, hard_uk])
        nk, nu, nx = lab.size, uk.size, extra.size
        logits = model.ekus_logits(x_all[rows])
        energy = free_energy(logits)
        e_known = ad.take_rows(energy, np.arange(nk))
        unk_rows = np.concatenate([np.arange(nk, nk + nu), np.arange(nk + nu + nx, rows.size)])
        e_pseudo = ad.take_rows(energy, unk_rows) if unk_rows.size else None
        nl_rows = np.arange(nk, nk + nu + nx)
        nl_probs = ad.softmax(ad.take_rows(logits, nl_rows)) if nl_rows.size else None
        comp = sample_complementary(nl_rows.size, n_known, nl_rng)
        if use_hinge:
            loss = ekus_loss(e_known, e_pseudo, nl_probs, comp, margins).total
        else:
            # calibration warmup: margins are not known yet, train the margin-free terms
            loss = None
            if e_pseudo is not None and margins.lam:
                loss = ad.scale(contrastive_loss(e_known, e_pseudo), margins.lam)
            if nl_probs is not None and margins.gamma:
                nl = ad.scale(negative_learning_loss(nl_probs, comp), margins.gamma)
                loss = nl if loss is None else ad.add(loss, nl)
            if loss is None:
                continue
        opt.zero_grad()
        ad.backward(loss)
        opt.step()


def train_ekus(state: RunState, config: ALConfig | None = None) -> None:
    """Fit the separator on D_L (energy anchoring) and D_UL (pseudo-unknowns + NL)."""
    cfg = config or state.config
    pool, model = state.pool, state.model
    if not pool.labeled:
        raise ConfigError("train_ekus needs a non-empty labeled set")
    c = state.cycle
    rng = stream(state.run_seed, "ekus", c)
    nl_rng = stream(state.run_seed, "nl", c)
    hyper = cfg.model
    opt = ad.SGD(model.ekus_params(), hyper.lr, hyper.momentum, hyper.weight_decay, hyper.grad_clip)
    margins = replace(cfg.margins)
    epochs = hyper.epochs
    if margins.auto_calibrate and epochs > 0:
        warm = min(cfg.calibration_warmup, epochs)
        for _ in range(warm):
            refresh_pseudo_unknown(state)
            _ekus_epoch(state, opt, margins, rng, nl_rng, use_hinge=False)
        epochs -= warm
        _, e = pool_ekus_energies(state)
        lo, hi = np.percentile(e, [30, 70])
        if hi <= lo:
            hi = lo + 1e-3
        margins = replace(margins, delta_k=float(lo), delta_u=float(hi))
        log.info("cycle %d: calibrated margins delta_k=%.4g delta_u=%.4g", c, lo, hi)
    state.margins = margins
    refresh_pseudo_unknown(state)
    for epoch in range(epochs):
        if epoch and cfg.pseudo_refresh == "epoch":
            refresh_pseudo_unknown(state)
        _ekus_epoch(state, opt, margins, rng, nl_rng)
    state.trained_ekus = True


def _ess_backbone_trainable(state: RunState) -> bool:
    # the shared backbone belongs to EKUS whenever a separator is in use
    return not (state.model.hyper.share_backbone and state.config.method in USES_EKUS)


def train_ess(state: RunState, config: ALConfig | None = None) -> None:
    """Fit the scorer heads on D_L with cross-entropy plus the energy regularizer."""
    cfg = config or state.config
    pool, model = state.pool, state.model
    if not pool.labeled:
        raise ConfigError("train_ess needs a non-empty labeled set")
    hyper = cfg.model
    trainable = _ess_backbone_trainable(state)
    params = model.ess_head_params() + (model.backbone_params("ess") if trainable else [])
    opt = ad.SGD(params, hyper.lr, hyper.momentum, hyper.weight_decay, hyper.grad_clip)
    rng = stream(state.run_seed, "ess", state.cycle)
    lab = pool.labeled_ids()
    targets = pool.labeled_targets(lab)
    x = state.task.x_train[lab]
    frozen_feats = None if trainable else model.features(x, "ess").data
    epochs = hyper.epochs if cfg.ess_epochs is None else cfg.ess_epochs
    m = cfg.margins
    for _ in range(epochs):
        order = rng.permutation(lab.size)
        for s in range(0, order.size, hyper.batch_size):
            idx = order[s : s + hyper.batch_size]
            feats = ad.constant(frozen_feats[idx]) if frozen_feats is not None else model.features(x[idx], "ess")
            loss = ess_loss(model.ess_logits(None, feats), targets[idx], model.ess_energy(None, feats), m.alpha, m.delta_s)
            opt.zero_grad()
            ad.backward(loss)
            opt.step()
    state.trained_ess = True


def filter_likely_known(state: RunState, threshold: float | None = None) -> tuple[np.ndarray, bool]:
    """Pool ids with E_EKUS below the threshold, padded up to the budget by lowest energy.

    Returns ``(ids, fallback_engaged)``.
    """
    if threshold is None:
        threshold = state.config.filter_threshold
        if threshold is None:
            threshold = (state.margins or state.config.margins).delta_k
    ids, e = pool_ekus_energies(state)
    if ids.size == 0:
        return ids, False
    keep = e < threshold
    b = state.config.budget
    if keep.sum() >= min(b, ids.size):
        return ids[keep], False
    order = np.lexsort((ids, e))  # lowest energy first
    need = min(b, ids.size)
    return np.sort(ids[order[:need]]), True


def score_samples(state: RunState, ids, beta: float) -> dict[int, float]:
    """S(x) = entropy(ESS logits) + beta * E_ESS(x)."""
    return dict(zip(np.asarray(ids).tolist(), _scores(state, np.asarray(ids), beta).tolist()))


def _scores(state: RunState, ids: np.ndarray, beta: float) -> np.ndarray:
    if ids.size == 0:
        return np.empty(0)
    model = state.model
    feats = model.features(state.task.x_train[ids], "ess")
    u = entropy(model.ess_logits(None, feats))
    if not beta:
        return u
    return u + beta * model.ess_energy(None, feats).data


def select_top_b(scores: dict[int, float], b: int) -> np.ndarray:
    if b < 1:
        raise ConfigError(f"budget must be >= 1, got {b}")
    ids = np.array(list(scores), dtype=np.int64)
    vals = np.array([scores[i] for i in ids.tolist()], dtype=np.float64)
    return top_k_ids(ids, vals, b)


def evaluate_accuracy(state: RunState) -> float:
    logits = state.model.ess_logits(state.task.x_test).data
    return accuracy(logits, state.task.test_targets)


def _select(state: RunState) -> tuple[np.ndarray, bool]:
    cfg, method = state.config, state.config.method
    b = cfg.budget
    if method == "random":
        ul = state.pool.unlabeled_ids()
        rng = stream(state.run_seed, "select", state.cycle)
        return np.sort(rng.choice(ul, min(b, ul.size), replace=False)), False
    if method in USES_EKUS:
        cand, fallback = filter_likely_known(state)
    else:
        cand, fallback = state.pool.unlabeled_ids(), False
    beta = 0.0 if method in ("entropy", "no_ess") else cfg.beta
    scores = _scores(state, cand, beta)
    return top_k_ids(cand, scores, b), fallback


def run_cycle(state: RunState, config: ALConfig | None = None) -> CycleReport:
    cfg = config or state.config
    if config is not None:
        state.config = config
    c = state.cycle
    if c >= cfg.cycles:
        raise ConfigError(f"cycle {c} exceeds the configured {cfg.cycles} cycles")
    pool, task = state.pool, state.task
    method = cfg.method

    if c > 0 and not cfg.warm_start:
        state.model.reinit(stream(state.run_seed, "init", c))
    state.trained_ekus = state.trained_ess = False
    if method in USES_EKUS:
        train_ekus(state)
    train_ess(state)

    auroc = mean_k = mean_u = math.nan
    if method in USES_EKUS and pool.unlabeled:
        ids, e = pool_ekus_energies(state)
        unknown = ~np.isin(task.y_train[ids], task.known_classes)
        auroc = auroc_arrays(e, unknown)
        mean_k = float(e[~unknown].mean()) if (~unknown).any() else math.nan
        mean_u = float(e[unknown].mean()) if unknown.any() else math.nan
    acc = evaluate_accuracy(state)

    selected, fallback = _select(state) if pool.unlabeled else (np.empty(0, dtype=np.int64), False)
    truncated = selected.size < cfg.budget
    outcomes = oracle_label(pool, selected)
    n_good = sum(o.known for o in outcomes)
    spent = pool.spent_budget
    report = CycleReport(
        cycle=c + 1,
        seed=state.seed,
        method=method,
        n_labeled=len(pool.labeled),
        spent_budget=spent,
        test_accuracy=acc,
        query_precision_cycle=n_good / len(outcomes) if outcomes else math.nan,
        query_precision_cumulative=(len(pool.labeled) - pool.initial_labeled) / spent if spent else math.nan,
        energy_auroc=auroc,
        mean_E_known=mean_k,
        mean_E_unknown=mean_u,
        fallback_engaged=bool(fallback),
        truncated=bool(truncated),
    )
    state.history.append(report)
    return report


def run_single(task: OpenSetTask, config: ALConfig, seed: int = 0, run_seed: int | None = None) -> list[CycleReport]:
    """All cycles of one (method, seed) run; stops early once the pool is exhausted."""
    state = new_run(task, config, seed, run_seed)
    for _ in range(config.cycles):
        report = run_cycle(state)
        if report.truncated:
            break
    return state.history
