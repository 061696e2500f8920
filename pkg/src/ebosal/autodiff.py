"""Small define-by-run reverse-mode autodiff over dense float64 arrays.

Rows are samples: every batch tensor is laid out ``n x d``. There is no
general broadcasting; the only mixed-shape ops are ``add_bias`` (row vector
added to every row) and ``shift`` (scalar constant added everywhere).
"""

from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np


class DimensionError(ValueError):
    pass


class NonFiniteError(FloatingPointError):
    pass


class Node:
    """A graph node holding a value, its accumulated gradient and a backward rule."""

    __slots__ = ("data", "_grad", "parents", "_backward", "name")

    def __init__(self, data, parents: Sequence["Node"] = (), backward=None, name: str = ""):
        # op results are fresh arrays already; ``constant`` copies caller data
        arr = np.asarray(data, dtype=np.float64)
        if not np.isfinite(arr).all():
            raise NonFiniteError(f"non-finite value in node {name or '<anon>'}")
        self.data = arr
        self._grad = None  # allocated on first read
        self.parents = tuple(parents)
        # backward(upstream) -> tuple of gradients, one per parent
        self._backward: Callable[[np.ndarray], tuple] | None = backward
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def grad(self) -> np.ndarray:
        if self._grad is None:
            self._grad = np.zeros_like(self.data)
        return self._grad

    @grad.setter
    def grad(self, value) -> None:
        self._grad = value

    def zero_grad(self) -> None:
        self._grad = None

    def item(self) -> float:
        return float(self.data)

    def __repr__(self) -> str:
        label = f" {self.name}" if self.name else ""
        return f"Node{label}(shape={self.data.shape})"

    # operator sugar for the common cases
    def __add__(self, other):
        return add(self, other) if isinstance(other, Node) else shift(self, other)

    def __radd__(self, other):
        return shift(self, other)

    def __sub__(self, other):
        return sub(self, other) if isinstance(other, Node) else shift(self, -other)

    def __rsub__(self, other):
        return shift(scale(self, -1.0), other)

    def __mul__(self, other):
        return mul(self, other) if isinstance(other, Node) else scale(self, other)

    def __rmul__(self, other):
        return scale(self, other)

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


def constant(data, name: str = "") -> Node:
    return Node(np.array(data, dtype=np.float64), name=name)


def _require_same(a: Node, b: Node, op: str) -> None:
    if a.shape != b.shape:
        raise DimensionError(f"{op}: shapes {a.shape} and {b.shape} differ")


def matmul(a: Node, b: Node) -> Node:
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise DimensionError(f"matmul expects 2-d operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul: inner dimensions {a.shape} x {b.shape} disagree")
    ad, bd = a.data, b.data
    return Node(ad @ bd, (a, b), lambda g: (g @ bd.T, ad.T @ g))


def add(a: Node, b: Node) -> Node:
    _require_same(a, b, "add")
    return Node(a.data + b.data, (a, b), lambda g: (g, g))


def sub(a: Node, b: Node) -> Node:
    _require_same(a, b, "sub")
    return Node(a.data - b.data, (a, b), lambda g: (g, -g))


def mul(a: Node, b: Node) -> Node:
    _require_same(a, b, "mul")
    ad, bd = a.data, b.data
    return Node(ad * bd, (a, b), lambda g: (g * bd, g * ad))


def scale(a: Node, k: float) -> Node:
    k = float(k)
    return Node(a.data * k, (a,), lambda g: (g * k,))


def shift(a: Node, c: float) -> Node:
    return Node(a.data + float(c), (a,), lambda g: (g,))


def add_bias(a: Node, bias: Node) -> Node:
    """``a[n x k] + bias[k]`` with the bias repeated on every row."""
    if a.data.ndim != 2 or bias.data.ndim != 1 or a.shape[1] != bias.shape[0]:
        raise DimensionError(f"add_bias: cannot add {bias.shape} to rows of {a.shape}")
    return Node(a.data + bias.data, (a, bias), lambda g: (g, g.sum(axis=0)))


def relu(a: Node) -> Node:
    # strict inequality: relu'(0) = 0
    mask = a.data > 0
    return Node(np.where(mask, a.data, 0.0), (a,), lambda g: (g * mask,))


def normalize_rows(a: Node, eps: float = 1e-12) -> Node:
    """Each row divided by its Euclidean norm (``sqrt(|x|^2 + eps)``)."""
    if a.data.ndim != 2:
        raise DimensionError(f"normalize_rows expects n x d, got {a.shape}")
    r = np.sqrt((a.data * a.data).sum(axis=1, keepdims=True) + eps)
    y = a.data / r

    def back(g):
        return ((g - y * (y * g).sum(axis=1, keepdims=True)) / r,)

    return Node(y, (a,), back)


def square(a: Node) -> Node:
    ad = a.data
    return Node(ad * ad, (a,), lambda g: (2.0 * ad * g,))


def log(a: Node) -> Node:
    ad = a.data
    if np.any(ad <= 0):
        raise NonFiniteError("log of a non-positive value")
    return Node(np.log(ad), (a,), lambda g: (g / ad,))


def clamp_min(a: Node, lo: float) -> Node:
    """max(a, lo); the gradient is zero wherever the clamp is active."""
    mask = a.data >= lo
    return Node(np.where(mask, a.data, lo), (a,), lambda g: (g * mask,))


def total(a: Node) -> Node:
    """Sum of all entries, as a scalar node."""
    shape = a.shape
    return Node(a.data.sum(), (a,), lambda g: (np.full(shape, float(g)),))


def mean(a: Node) -> Node:
    n = a.data.size
    if n == 0:
        raise DimensionError("mean of an empty tensor")
    shape = a.shape
    return Node(a.data.mean(), (a,), lambda g: (np.full(shape, float(g) / n),))


def column(a: Node, j: int) -> Node:
    """Column ``j`` of an ``n x k`` node as a length-n vector."""
    if a.data.ndim != 2:
        raise DimensionError(f"column expects a 2-d node, got {a.shape}")
    shape = a.shape

    def back(g):
        out = np.zeros(shape)
        out[:, j] = g
        return (out,)

    return Node(a.data[:, j], (a,), back)


def take_rows(a: Node, rows) -> Node:
    """Rows ``a[rows]`` (first axis); repeated rows accumulate gradient."""
    idx = np.asarray(rows, dtype=np.int64)
    shape = a.shape

    def back(g):
        out = np.zeros(shape)
        np.add.at(out, idx, g)
        return (out,)

    return Node(a.data[idx], (a,), back)


def pick(a: Node, index) -> Node:
    """Row-wise gather: ``out[i] = a[i, index[i]]``."""
    idx = np.asarray(index, dtype=np.int64)
    if a.data.ndim != 2 or idx.shape != (a.shape[0],):
        raise DimensionError(f"pick: {idx.shape} indices for node of shape {a.shape}")
    if idx.size and (idx.min() < 0 or idx.max() >= a.shape[1]):
        raise IndexError(f"pick: index out of range for {a.shape[1]} columns")
    rows = np.arange(a.shape[0])
    shape = a.shape

    def back(g):
        out = np.zeros(shape)
        out[rows, idx] = g
        return (out,)

    return Node(a.data[rows, idx], (a,), back)


def _softmax(z: np.ndarray) -> np.ndarray:
    e = np.exp(z - z.max(axis=1, keepdims=True))
    return e / e.sum(axis=1, keepdims=True)


def _logsumexp(z: np.ndarray) -> np.ndarray:
    m = z.max(axis=1)
    return m + np.log(np.exp(z - m[:, None]).sum(axis=1))


def logsumexp(logits: Node) -> Node:
    """Row-wise stable ``log sum exp``: ``n x C -> n``."""
    z = logits.data
    if z.ndim != 2 or z.shape[1] < 1:
        raise DimensionError(f"logsumexp expects n x C with C >= 1, got {z.shape}")
    p = _softmax(z)
    return Node(_logsumexp(z), (logits,), lambda g: (g[:, None] * p,))


def softmax(logits: Node) -> Node:
    z = logits.data
    if z.ndim != 2:
        raise DimensionError(f"softmax expects n x C, got {z.shape}")
    p = _softmax(z)

    def back(g):
        inner = (g * p).sum(axis=1, keepdims=True)
        return (p * (g - inner),)

    return Node(p, (logits,), back)


def softmax_cross_entropy(logits: Node, targets) -> Node:
    """Mean over rows of ``-log softmax(logits)[target]``."""
    z = logits.data
    t = np.asarray(targets, dtype=np.int64)
    if z.ndim != 2 or t.shape != (z.shape[0],):
        raise DimensionError(f"cross entropy: {t.shape} targets for logits {z.shape}")
    n, c = z.shape
    if n == 0:
        raise DimensionError("cross entropy over an empty batch")
    if t.min() < 0 or t.max() >= c:
        raise IndexError(f"target out of range [0, {c})")
    rows = np.arange(n)
    lse = _logsumexp(z)
    loss = float(np.mean(lse - z[rows, t]))
    p = _softmax(z)

    def back(g):
        d = p.copy()
        d[rows, t] -= 1.0
        return (d * (float(g) / n),)

    return Node(loss, (logits,), back)


def _topo_order(root: Node) -> list[Node]:
    order: list[Node] = []
    seen: set[int] = set()
    stack: list[tuple[Node, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            if id(p) not in seen:
                stack.append((p, False))
    return order


def backward(root: Node) -> None:
    """Accumulate d(root)/d(node) into ``node.grad`` for every reachable node.

    Gradients are propagated through a fresh buffer, so calling this twice
    without a reset adds the same gradient twice.
    """
    if root.data.size != 1:
        raise ValueError(f"backward needs a scalar root, got shape {root.shape}")
    upstream: dict[int, np.ndarray] = {id(root): np.ones_like(root.data)}
    for node in reversed(_topo_order(root)):
        g = upstream.pop(id(node), None)
        if g is None:
            continue
        node._grad = g if node._grad is None else node._grad + g
        if node._backward is None:
            continue
        for parent, pg in zip(node.parents, node._backward(g)):
            key = id(parent)
            if key in upstream:
                upstream[key] = upstream[key] + pg
            else:
                upstream[key] = np.asarray(pg, dtype=np.float64).reshape(parent.shape)


def zero_grad(nodes: Iterable[Node]) -> None:
    for n in nodes:
        n.zero_grad()


def clip_grad_norm(params: Sequence[Node], max_norm: float) -> float:
    """Rescale all grads so their joint L2 norm is at most ``max_norm``; returns the pre-clip norm."""
    norm = float(np.sqrt(sum(float((p.grad * p.grad).sum()) for p in params)))
    if max_norm > 0 and norm > max_norm:
        k = max_norm / norm
        for p in params:
            p.grad = p.grad * k
    return norm


def sgd_step(
    params: Sequence[Node],
    velocities: Sequence[np.ndarray],
    lr: float,
    momentum: float = 0.0,
    weight_decay: float = 0.0,
) -> None:
    """Momentum SGD with coupled weight decay, using each param's ``grad``.

    ``v <- momentum * v + grad + weight_decay * param``; ``param <- param - lr * v``.
    Velocity buffers are updated in place.
    """
    for p, v in zip(params, velocities):
        if v.shape != p.data.shape:
            raise DimensionError(f"velocity {v.shape} does not match param {p.data.shape}")
        v *= momentum
        v += p.grad + weight_decay * p.data
        p.data = p.data - lr * v


class SGD:
    def __init__(
        self,
        params: Sequence[Node],
        lr: float,
        momentum: float = 0.0,
        weight_decay: float = 0.0,
        grad_clip: float = 0.0,
    ):
        self.params = list(params)
        self.lr = lr
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.grad_clip = grad_clip  # 0 disables clipping
        self.velocities = [np.zeros_like(p.data) for p in self.params]

    def zero_grad(self) -> None:
        zero_grad(self.params)

    def step(self) -> None:
        if self.grad_clip:
            clip_grad_norm(self.params, self.grad_clip)
        sgd_step(self.params, self.velocities, self.lr, self.momentum, self.weight_decay)
        for p in self.params:
            if not np.all(np.isfinite(p.data)):
                raise NonFiniteError(f"parameter {p.name or '<anon>'} diverged")
