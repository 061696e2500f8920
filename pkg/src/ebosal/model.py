"""Dual-stage MLP: shared backbone with EKUS, ESS-classifier and ESS-energy heads."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import DimensionError, Node

CHECKPOINT_MAGIC = "ebosal-checkpoint"
CHECKPOINT_VERSION = 1


@dataclass
class ModelHyper:
    hidden: tuple[int, ...] = (64, 64)
    init: str = "glorot_uniform"
    epochs: int = 60
    batch_size: int = 32
    lr: float = 0.02
    momentum: float = 0.9
    weight_decay: float = 1e-2
    # True: ESS heads sit on the (frozen) EKUS backbone; False: ESS owns a copy
    share_backbone: bool = False
    # joint L2 clip on each step's gradient; 0 disables
    grad_clip: float = 1.0
    # unit-norm features scaled by this factor before the heads; 0 disables
    feature_scale: float = 3.0

    def validate(self) -> None:
        from .datagen import ConfigError

        if self.epochs < 0:
            raise ConfigError(f"model.epochs must be >= 0, got {self.epochs}")
        if not self.hidden or min(self.hidden) < 1:
            raise ConfigError(f"model.hidden sizes must be >= 1, got {self.hidden}")
        if self.batch_size < 2 or self.batch_size % 2:
            raise ConfigError(f"model.batch_size must be even and >= 2, got {self.batch_size}")
        if self.init not in ("glorot_uniform", "zeros"):
            raise ConfigError(f"model.init must be 'glorot_uniform' or 'zeros', got {self.init!r}")


@dataclass
class DualEBM:
    in_dim: int
    n_known: int
    hyper: ModelHyper = field(default_factory=ModelHyper)
    params: dict[str, Node] = field(init=False, repr=False)

    def __post_init__(self):
        if self.n_known < 2:
            raise DimensionError(f"need at least 2 known classes, got {self.n_known}")
        self.params = {}
        for name, shape in self.param_shapes().items():
            self.params[name] = Node(np.zeros(shape), name=name)
        self.reinit(0)

    def _backbone_prefixes(self) -> list[str]:
        return ["backbone"] if self.hyper.share_backbone else ["backbone", "ess_backbone"]

    def param_shapes(self) -> dict[str, tuple[int, ...]]:
        shapes: dict[str, tuple[int, ...]] = {}
        dims = (self.in_dim, *self.hyper.hidden)
        for prefix in self._backbone_prefixes():
            for i, (a, b) in enumerate(zip(dims[:-1], dims[1:])):
                shapes[f"{prefix}.{i}.weight"] = (a, b)
                shapes[f"{prefix}.{i}.bias"] = (b,)
        h = dims[-1]
        for head, out in (("ekus_head", self.n_known), ("ess_cls_head", self.n_known), ("ess_energy_head", 1)):
            shapes[f"{head}.weight"] = (h, out)
            shapes[f"{head}.bias"] = (out,)
        return shapes

    @property
    def feature_dim(self) -> int:
        return self.hyper.hidden[-1]

    def reinit(self, seed) -> None:
        """Redraw every parameter; biases start at zero, gradients are cleared."""
        rng = np.random.default_rng(seed)
        for name, shape in self.param_shapes().items():
            node = self.params[name]
            if name.endswith(".bias") or self.hyper.init == "zeros":
                node.data = np.zeros(shape)
            else:
                a = np.sqrt(6.0 / (shape[0] + shape[1]))
                node.data = rng.uniform(-a, a, size=shape)
            node.zero_grad()

    # parameter groups
    def backbone_params(self, stage: str = "ekus") -> list[Node]:
        prefix = "backbone" if stage == "ekus" or self.hyper.share_backbone else "ess_backbone"
        return [p for n, p in self.params.items() if n.startswith(prefix + ".")]

    def ekus_params(self) -> list[Node]:
        return self.backbone_params("ekus") + [self.params["ekus_head.weight"], self.params["ekus_head.bias"]]

    def ess_head_params(self) -> list[Node]:
        return [self.params[f"{h}.{k}"] for h in ("ess_cls_head", "ess_energy_head") for k in ("weight", "bias")]

    def all_params(self) -> list[Node]:
        return list(self.params.values())

    # forward
    def _input(self, x) -> Node:
        node = x if isinstance(x, Node) else ad.constant(np.atleast_2d(np.asarray(x, dtype=np.float64)))
        if node.data.ndim != 2 or node.shape[1] != self.in_dim:
            raise DimensionError(f"expected inputs of width {self.in_dim}, got {node.shape}")
        return node

    def features(self, x, stage: str = "ekus") -> Node:
        prefix = "backbone" if stage == "ekus" or self.hyper.share_backbone else "ess_backbone"
        h = self._input(x)
        for i in range(len(self.hyper.hidden)):
            w = self.params[f"{prefix}.{i}.weight"]
            b = self.params[f"{prefix}.{i}.bias"]
            h = ad.relu(ad.add_bias(ad.matmul(h, w), b))
        if self.hyper.feature_scale:
            h = ad.scale(ad.normalize_rows(h), self.hyper.feature_scale)
        return h

    def _head(self, feats: Node, head: str) -> Node:
        return ad.add_bias(ad.matmul(feats, self.params[f"{head}.weight"]), self.params[f"{head}.bias"])

    def ekus_logits(self, x, feats: Node | None = None) -> Node:
        return self._head(feats if feats is not None else self.features(x, "ekus"), "ekus_head")

    def ess_logits(self, x, feats: Node | None = None) -> Node:
        return self._head(feats if feats is not None else self.features(x, "ess"), "ess_cls_head")

    def ess_energy(self, x, feats: Node | None = None) -> Node:
        """Scalar energy per row straight from the linear energy head."""
        out = self._head(feats if feats is not None else self.features(x, "ess"), "ess_energy_head")
        return ad.column(out, 0)

    def ekus_energy(self, x) -> Node:
        return free_energy(self.ekus_logits(x))

    # checkpoints
    def save(self, path) -> None:
        lines = [f"{CHECKPOINT_MAGIC} v{CHECKPOINT_VERSION}"]
        for name, node in self.params.items():
            shape = " ".join(str(s) for s in node.data.shape)
            lines.append(f"{name} {node.data.ndim} {shape}")
            lines.append(" ".join(repr(float(v)) for v in node.data.ravel()))
        Path(path).write_text("\n".join(lines) + "\n")

    def load(self, path) -> None:
        lines = Path(path).read_text().splitlines()
        if not lines or lines[0] != f"{CHECKPOINT_MAGIC} v{CHECKPOINT_VERSION}":
            raise ValueError(f"{path}: not a v{CHECKPOINT_VERSION} checkpoint")
        it = iter(lines[1:])
        loaded = {}
        for head in it:
            name, ndim, *dims = head.split()
            shape = tuple(int(d) for d in dims[: int(ndim)])
            values = np.array([float(v) for v in next(it).split()], dtype=np.float64)
            loaded[name] = values.reshape(shape)
        expected = self.param_shapes()
        if set(loaded) != set(expected):
            raise ValueError(f"{path}: parameter names do not match this model")
        for name, arr in loaded.items():
            if arr.shape != expected[name]:
                raise DimensionError(f"{path}: {name} has shape {arr.shape}, expected {expected[name]}")
            self.params[name].data = arr
            self.params[name].zero_grad()


def free_energy(logits: Node) -> Node:
    """E(x) = -logsumexp over classes, one value per row."""
    return ad.scale(ad.logsumexp(logits), -1.0)


def entropy(logits) -> np.ndarray:
    """Softmax entropy per row (natural log), as ``sum p * (lse(z) - z)``."""
    z = logits.data if isinstance(logits, Node) else np.asarray(logits, dtype=np.float64)
    z = np.atleast_2d(z)
    m = z.max(axis=1, keepdims=True)
    e = np.exp(z - m)
    s = e.sum(axis=1, keepdims=True)
    p = e / s
    # every term is >= 0: no cancellation
    return (p * (np.log(s) - (z - m))).sum(axis=1)
