"""Training objectives for the separator (EKUS) and the scorer (ESS).

Hinge and energy-regularizer terms are raw sums over the batch; contrastive,
negative-learning and cross-entropy terms are batch means. Changing that
convention rescales the weights ``lam``, ``gamma`` and ``alpha``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Node
from .datagen import ConfigError

log = logging.getLogger(__name__)

NL_CLAMP = 1e-12


@dataclass
class MarginConfig:
    delta_k: float = -4.0
    delta_u: float = -1.0
    delta_s: float = -3.0
    lam: float = 0.2
    gamma: float = 0.2
    alpha: float = 0.1
    # set delta_k / delta_u from pool-energy percentiles after a short warmup
    auto_calibrate: bool = False

    def validate(self) -> None:
        if not self.delta_k < self.delta_u:
            raise ConfigError(f"margins: delta_k ({self.delta_k}) must be below delta_u ({self.delta_u})")
        for name in ("lam", "gamma", "alpha"):
            if getattr(self, name) < 0:
                raise ConfigError(f"margins.{name} must be >= 0")

    @classmethod
    def full_scale(cls) -> "MarginConfig":
        """Margins for large image backbones, whose free energies span a much wider range."""
        return cls(delta_k=-23.0, delta_u=-5.0, delta_s=-20.0)


def _empty(e: Node | None) -> bool:
    return e is None or e.data.size == 0


def hinge_loss(e_known: Node | None, e_pseudo: Node | None, delta_k: float, delta_u: float) -> Node:
    """Squared hinge: push known energies below delta_k and pseudo-unknowns above delta_u."""
    if _empty(e_known) and _empty(e_pseudo):
        raise ValueError("hinge_loss needs at least one non-empty batch")
    terms = []
    if not _empty(e_known):
        terms.append(ad.total(ad.square(ad.relu(ad.shift(e_known, -delta_k)))))
    if not _empty(e_pseudo):
        terms.append(ad.total(ad.square(ad.relu(ad.shift(ad.scale(e_pseudo, -1.0), delta_u)))))
    return terms[0] if len(terms) == 1 else ad.add(terms[0], terms[1])


def contrastive_loss(e_known: Node | None, e_pseudo: Node | None) -> Node:
    """mean(E_known) - mean(E_pseudo); zero (and logged) if either side is empty."""
    if _empty(e_known) or _empty(e_pseudo):
        log.debug("contrastive term skipped: empty side")
        return ad.constant(0.0)
    return ad.sub(ad.mean(e_known), ad.mean(e_pseudo))


def negative_learning_loss(probs: Node, complementary) -> Node:
    """mean of -log(1 - p[comp]) with ``1 - p`` clamped below at 1e-12."""
    p_bar = ad.pick(probs, complementary)
    return ad.mean(ad.scale(ad.log(ad.clamp_min(ad.shift(ad.scale(p_bar, -1.0), 1.0), NL_CLAMP)), -1.0))


def sample_complementary(n: int, n_known: int, rng: np.random.Generator) -> np.ndarray:
    return rng.integers(0, n_known, size=n)


@dataclass
class EkusTerms:
    total: Node
    hinge: float
    contrastive: float
    nl: float


def ekus_loss(
    e_known: Node | None,
    e_pseudo: Node | None,
    nl_probs: Node | None,
    complementary,
    margins: MarginConfig,
) -> EkusTerms:
    """hinge + lam * contrastive + gamma * NL."""
    hinge = hinge_loss(e_known, e_pseudo, margins.delta_k, margins.delta_u)
    total = hinge
    con = contrastive_loss(e_known, e_pseudo)
    if margins.lam and con.parents:
        total = ad.add(total, ad.scale(con, margins.lam))
    nl_val = 0.0
    if nl_probs is not None and nl_probs.data.size:
        nl = negative_learning_loss(nl_probs, complementary)
        nl_val = nl.item()
        if margins.gamma:
            total = ad.add(total, ad.scale(nl, margins.gamma))
    return EkusTerms(total, hinge.item(), con.item(), nl_val)


def ess_reg_loss(e_ess: Node, delta_s: float) -> Node:
    """sum of max(0, E_ESS - delta_s)^2 over a labeled batch."""
    return ad.total(ad.square(ad.relu(ad.shift(e_ess, -delta_s))))


def ess_loss(logits: Node, targets, e_ess: Node, alpha: float, delta_s: float) -> Node:
    """Cross-entropy + alpha * energy regularizer."""
    ce = ad.softmax_cross_entropy(logits, targets)
    if not alpha:
        return ce
    return ad.add(ce, ad.scale(ess_reg_loss(e_ess, delta_s), alpha))
