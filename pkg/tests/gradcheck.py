"""Central finite-difference checks for every autodiff op and training loss.

Each case draws random inputs (kept away from relu / hinge / clamp kinks,
where the one-sided derivatives disagree) and returns a scalar-valued
function of a list of arrays. ``check_case`` compares the reverse-mode
gradient with central differences for every input entry.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from ebosal import autodiff as ad
from ebosal.losses import (
    MarginConfig,
    contrastive_loss,
    ekus_loss,
    ess_loss,
    ess_reg_loss,
    hinge_loss,
    negative_learning_loss,
)
from ebosal.model import DualEBM, ModelHyper, free_energy

STEP = 1e-6
TOL = 1e-4


def away_from(x: np.ndarray, points, gap: float = 1e-2) -> np.ndarray:
    """Nudge entries that sit within ``gap`` of any kink point."""
    x = np.array(x, dtype=np.float64)
    for p in np.atleast_1d(points):
        near = np.abs(x - p) < gap
        x[near] = p + np.where(x[near] >= p, gap, -gap) * 2
    return x


def weighted_sum(out: ad.Node, w: np.ndarray) -> ad.Node:
    """Scalarize a non-scalar node with fixed random weights."""
    return ad.total(ad.mul(out, ad.constant(w.reshape(out.shape))))


@dataclass
class Case:
    name: str
    make: Callable[[np.random.Generator], tuple[Callable[[list[ad.Node]], ad.Node], list[np.ndarray]]]
    instances: int = 100


def _op(fn, shapes, kinks=None):
    def make(rng):
        xs = [rng.normal(size=s) for s in shapes]
        if kinks is not None:
            xs = [away_from(x, kinks) for x in xs]
        probe = fn([ad.constant(x) for x in xs])
        w = rng.normal(size=probe.shape) if probe.data.size > 1 else np.ones(probe.shape)

        def f(nodes):
            out = fn(nodes)
            return weighted_sum(out, w) if out.data.size > 1 else out

        return f, xs

    return make


def _positive(shape):
    def make(rng):
        x = rng.uniform(0.2, 3.0, size=shape)
        w = rng.normal(size=shape)
        return (lambda n: weighted_sum(ad.log(n[0]), w)), [x]

    return make


def _take_rows(rng):
    idx = rng.integers(0, 4, size=6)  # repeats on purpose
    w = rng.normal(size=(6, 3))
    return (lambda n: weighted_sum(ad.take_rows(n[0], idx), w)), [rng.normal(size=(4, 3))]


def _pick(rng):
    idx = rng.integers(0, 5, size=4)
    w = rng.normal(size=4)
    return (lambda n: weighted_sum(ad.pick(n[0], idx), w)), [rng.normal(size=(4, 5))]


def _column(rng):
    j = int(rng.integers(0, 3))
    w = rng.normal(size=5)
    return (lambda n: weighted_sum(ad.column(n[0], j), w)), [rng.normal(size=(5, 3))]


def _clamp(rng):
    lo = float(rng.normal())
    x = away_from(rng.normal(size=(3, 4)), [lo])
    w = rng.normal(size=(3, 4))
    return (lambda n: weighted_sum(ad.clamp_min(n[0], lo), w)), [x]


def _xent(rng):
    t = rng.integers(0, 4, size=5)
    return (lambda n: ad.softmax_cross_entropy(n[0], t)), [rng.normal(size=(5, 4)) * 2]


def _margins(rng) -> MarginConfig:
    dk = float(rng.uniform(-6, -2))
    return MarginConfig(delta_k=dk, delta_u=dk + float(rng.uniform(0.5, 4)), delta_s=float(rng.uniform(-5, -1)),
                        lam=float(rng.uniform(0, 1)), gamma=float(rng.uniform(0, 1)), alpha=float(rng.uniform(0, 1)))


def _hinge(rng):
    m = _margins(rng)
    ek = away_from(rng.normal(m.delta_k, 2.0, size=6), [m.delta_k])
    eu = away_from(rng.normal(m.delta_u, 2.0, size=4), [m.delta_u])
    return (lambda n: hinge_loss(n[0], n[1], m.delta_k, m.delta_u)), [ek, eu]


def _contrastive(rng):
    return (lambda n: contrastive_loss(n[0], n[1])), [rng.normal(size=5), rng.normal(size=3)]


def _nl(rng):
    comp = rng.integers(0, 4, size=6)
    return (lambda n: negative_learning_loss(ad.softmax(n[0]), comp)), [rng.normal(size=(6, 4)) * 2]


def _ekus_full(rng):
    m = _margins(rng)
    comp = rng.integers(0, 3, size=5)
    ek = away_from(rng.normal(m.delta_k, 2.0, size=4), [m.delta_k])
    eu = away_from(rng.normal(m.delta_u, 2.0, size=3), [m.delta_u])

    def f(n):
        return ekus_loss(n[0], n[1], ad.softmax(n[2]), comp, m).total

    return f, [ek, eu, rng.normal(size=(5, 3))]


def _ess_reg(rng):
    ds = float(rng.uniform(-5, -1))
    e = away_from(rng.normal(ds, 2.0, size=7), [ds])
    return (lambda n: ess_reg_loss(n[0], ds)), [e]


def _ess_full(rng):
    m = _margins(rng)
    t = rng.integers(0, 4, size=6)
    e = away_from(rng.normal(m.delta_s, 2.0, size=6), [m.delta_s])
    return (lambda n: ess_loss(n[0], t, n[1], m.alpha, m.delta_s)), [rng.normal(size=(6, 4)), e]


def _free_energy(rng):
    w = rng.normal(size=5)
    return (lambda n: weighted_sum(free_energy(n[0]), w)), [rng.normal(size=(5, 4)) * 3]


def _model_ekus(rng):
    """Whole forward pass: gradient of the EKUS objective w.r.t. every weight."""
    model = DualEBM(3, 3, ModelHyper(hidden=(5, 4), feature_scale=2.0))
    names = [n for n in model.params if n.startswith("backbone") or n.startswith("ekus_head")]
    while True:
        # an all-zero feature row puts normalize_rows on its kink; redraw
        model.reinit(int(rng.integers(1 << 30)))
        xk, xu = rng.normal(size=(4, 3)), rng.normal(2.0, 1.0, size=(3, 3))
        raw = DualEBM.features(model, np.vstack([xk, xu])).data
        if np.linalg.norm(raw, axis=1).min() > 1e-3:
            break
    comp = rng.integers(0, 3, size=3)
    m = MarginConfig(delta_k=-1.0, delta_u=-0.5, lam=0.2, gamma=0.5)

    def f(nodes):
        for name, node in zip(names, nodes):
            model.params[name] = node
        ek = free_energy(model.ekus_logits(xk))
        eu = free_energy(model.ekus_logits(xu))
        probs = ad.softmax(model.ekus_logits(xu))
        return ekus_loss(ek, eu, probs, comp, m).total

    return f, [model.params[n].data.copy() for n in names]


CASES = [
    Case("matmul", _op(lambda n: ad.matmul(n[0], n[1]), [(3, 4), (4, 2)])),
    Case("add", _op(lambda n: ad.add(n[0], n[1]), [(3, 4), (3, 4)])),
    Case("sub", _op(lambda n: ad.sub(n[0], n[1]), [(3, 4), (3, 4)])),
    Case("mul", _op(lambda n: ad.mul(n[0], n[1]), [(3, 4), (3, 4)])),
    Case("scale", _op(lambda n: ad.scale(n[0], -1.7), [(3, 4)])),
    Case("shift", _op(lambda n: ad.shift(n[0], 0.3), [(3, 4)])),
    Case("add_bias", _op(lambda n: ad.add_bias(n[0], n[1]), [(3, 4), (4,)])),
    Case("relu", _op(lambda n: ad.relu(n[0]), [(4, 5)], kinks=[0.0])),
    Case("normalize_rows", _op(lambda n: ad.normalize_rows(n[0]), [(3, 4)])),
    Case("square", _op(lambda n: ad.square(n[0]), [(3, 4)])),
    Case("log", _positive((3, 4))),
    Case("clamp_min", _clamp),
    Case("total", _op(lambda n: ad.total(n[0]), [(3, 4)])),
    Case("mean", _op(lambda n: ad.mean(n[0]), [(3, 4)])),
    Case("column", _column),
    Case("take_rows", _take_rows),
    Case("pick", _pick),
    Case("logsumexp", _op(lambda n: ad.logsumexp(n[0]), [(4, 5)])),
    Case("softmax", _op(lambda n: ad.softmax(n[0]), [(4, 5)])),
    Case("softmax_cross_entropy", _xent),
    Case("free_energy", _free_energy),
    Case("hinge_loss", _hinge),
    Case("contrastive_loss", _contrastive),
    Case("negative_learning_loss", _nl),
    Case("ekus_loss", _ekus_full),
    Case("ess_reg_loss", _ess_reg),
    Case("ess_loss", _ess_full),
    # end-to-end through the network; fewer draws since each has ~60 inputs
    Case("model_ekus_objective", _model_ekus, instances=25),
]


def numeric_grad(f, xs: list[np.ndarray], h: float = STEP) -> list[np.ndarray]:
    grads = []
    for i, x in enumerate(xs):
        g = np.zeros_like(x)
        for j in np.ndindex(x.shape):
            plus = [a.copy() for a in xs]
            minus = [a.copy() for a in xs]
            plus[i][j] += h
            minus[i][j] -= h
            fp = f([ad.constant(a) for a in plus]).item()
            fm = f([ad.constant(a) for a in minus]).item()
            g[j] = (fp - fm) / (2 * h)
        grads.append(g)
    return grads


def analytic_grad(f, xs: list[np.ndarray]) -> list[np.ndarray]:
    nodes = [ad.constant(x) for x in xs]
    ad.backward(f(nodes))
    return [n.grad for n in nodes]


def relative_error(a: np.ndarray, b: np.ndarray) -> float:
    """``|a - b| / max(|a| + |b|, 1e-8)`` over all entries jointly."""
    num = float(np.linalg.norm(a - b))
    den = max(float(np.linalg.norm(a) + np.linalg.norm(b)), 1e-8)
    return num / den


def check_case(case: Case, rng: np.random.Generator) -> float:
    f, xs = case.make(rng)
    an = np.concatenate([g.ravel() for g in analytic_grad(f, xs)])
    nu = np.concatenate([g.ravel() for g in numeric_grad(f, xs)])
    return relative_error(an, nu)


def run_case(case: Case, n_instances: int | None = None, seed: int = 0) -> float:
    """Worst relative error over ``n_instances`` (default: the case's own count) draws."""
    n_instances = case.instances if n_instances is None else n_instances
    rng = np.random.default_rng([seed, len(case.name)] + [ord(c) for c in case.name])
    return max(check_case(case, rng) for _ in range(n_instances))
