"""Dense float64 tensors with reverse-mode automatic differentiation.

Deliberately small: only the operations needed to train residual MLPs and
to attach regularization terms whose subgradients are supplied analytically.
Everything is 64-bit so gradient checks against central finite differences
have enough headroom.
"""

from __future__ import annotations

from typing import Callable, Iterable, Mapping

import numpy as np

Array = np.ndarray


class ShapeError(ValueError):
    """Operand shapes are incompatible for the requested operation."""


class NumericError(RuntimeError):
    """A non-finite value appeared where finite numbers are required."""


class Tensor:
    """A node on the computation tape.

    Leaf tensors hold parameters or inputs. Non-leaf tensors remember the
    parents and the local backward rule of the operation that produced them,
    so ``backward`` can sweep the tape once in reverse topological order.
    Data is always a C-contiguous float64 ndarray; zero-length extents are
    rejected because no operation here produces or consumes them.
    """

    __slots__ = ("data", "grad", "requires_grad", "name", "_parents", "_backward_fn")

    def __init__(self, values, requires_grad: bool = False, name: str | None = None):
        data = np.asarray(values, dtype=np.float64, order="C")
        if data.ndim > 0 and not data.flags["C_CONTIGUOUS"]:
            data = np.ascontiguousarray(data)
        if data.size == 0:
            raise ShapeError(f"tensor extents must be positive, got shape {data.shape}")
        self.data = data
        self.grad: Array | None = None
        self.requires_grad = bool(requires_grad)
        self.name = name
        self._parents: tuple[Tensor, ...] = ()
        self._backward_fn: Callable[[Array], None] | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.data.shape}{tag})"


def _node(data: Array, parents: Iterable[Tensor], backward_fn: Callable[[Array], None]) -> Tensor:
    out = Tensor(data)
    parents = tuple(parents)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward_fn = backward_fn
    return out


def _accumulate(t: Tensor, g: Array) -> None:
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.zeros_like(t.data)
    t.grad += g


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product of two 2-D tensors."""
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ShapeError(f"matmul needs 2-D operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul inner extents differ: {a.shape} x {b.shape}")
    out_data = a.data @ b.data

    def backward_fn(g: Array) -> None:
        _accumulate(a, g @ b.data.T)
        _accumulate(b, a.data.T @ g)

    return _node(out_data, (a, b), backward_fn)


def transpose(a: Tensor) -> Tensor:
    if a.data.ndim != 2:
        raise ShapeError(f"transpose needs a 2-D operand, got {a.shape}")

    def backward_fn(g: Array) -> None:
        _accumulate(a, g.T)

    return _node(a.data.T.copy(), (a,), backward_fn)


def add(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise sum; also accepts a (n, m) matrix plus an (m,) row bias."""
    if a.shape == b.shape:
        def backward_fn(g: Array) -> None:
            _accumulate(a, g)
            _accumulate(b, g)
    elif a.data.ndim == 2 and b.data.ndim == 1 and a.shape[1] == b.shape[0]:
        def backward_fn(g: Array) -> None:
            _accumulate(a, g)
            _accumulate(b, g.sum(axis=0))
    else:
        raise ShapeError(f"add shapes incompatible: {a.shape} + {b.shape}")
    return _node(a.data + b.data, (a, b), backward_fn)


def mul(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ShapeError(f"mul shapes differ: {a.shape} * {b.shape}")

    def backward_fn(g: Array) -> None:
        _accumulate(a, g * b.data)
        _accumulate(b, g * a.data)

    return _node(a.data * b.data, (a, b), backward_fn)


def scale(a: Tensor, c: float) -> Tensor:
    c = float(c)

    def backward_fn(g: Array) -> None:
        _accumulate(a, c * g)

    return _node(c * a.data, (a,), backward_fn)


def linear(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """Fused dense layer: x @ w.T + b for w of shape (out, in).

    Input channels whose weight column is entirely zero are skipped before the
    contraction. The result is numerically the same sum, but its rounding no
    longer depends on how many dead channels are present, so pruning a channel
    whose touched weights are exactly zero reproduces the unpruned outputs bit
    for bit on any BLAS.
    """
    if x.data.ndim != 2 or w.data.ndim != 2 or b.data.ndim != 1:
        raise ShapeError(f"linear needs (n,k) x (m,k) + (m,), got {x.shape}, "
                         f"{w.shape}, {b.shape}")
    if x.shape[1] != w.shape[1] or w.shape[0] != b.shape[0]:
        raise ShapeError(f"linear shapes incompatible: {x.shape}, {w.shape}, "
                         f"{b.shape}")
    live = np.flatnonzero(np.any(w.data != 0.0, axis=0))
    if live.size == w.shape[1]:
        out_data = x.data @ w.data.T + b.data
    else:
        out_data = x.data[:, live] @ w.data[:, live].T + b.data

    def backward_fn(g: Array) -> None:
        _accumulate(x, g @ w.data)
        _accumulate(w, g.T @ x.data)
        _accumulate(b, g.sum(axis=0))

    return _node(out_data, (x, w, b), backward_fn)


def relu(a: Tensor) -> Tensor:
    """Elementwise max(0, x). The subgradient at exactly 0 is fixed to 0."""
    mask = a.data > 0.0

    def backward_fn(g: Array) -> None:
        _accumulate(a, g * mask)

    return _node(np.where(mask, a.data, 0.0), (a,), backward_fn)


def tsum(a: Tensor) -> Tensor:
    """Sum of all elements, as a 0-d tensor."""

    def backward_fn(g: Array) -> None:
        _accumulate(a, np.full_like(a.data, float(g)))

    return _node(np.asarray(a.data.sum()), (a,), backward_fn)


def softmax_cross_entropy(logits: Tensor, labels: Array) -> Tensor:
    """Mean cross-entropy of softmax(logits) against integer class labels.

    Fused and stabilized by max subtraction, so saturated logits stay finite.
    Backward rule: (softmax - onehot) / batch.
    """
    if logits.data.ndim != 2:
        raise ShapeError(f"logits must be 2-D (batch x classes), got {logits.shape}")
    labels = np.asarray(labels)
    n, c = logits.shape
    if labels.shape != (n,):
        raise ShapeError(f"labels shape {labels.shape} does not match batch {n}")
    if labels.min() < 0 or labels.max() >= c:
        raise ValueError(f"labels must lie in [0, {c}), got range "
                         f"[{labels.min()}, {labels.max()}]")
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    ez = np.exp(z)
    total = ez.sum(axis=1, keepdims=True)
    probs = ez / total
    logp = z - np.log(total)
    loss = -logp[np.arange(n), labels].mean()

    def backward_fn(g: Array) -> None:
        grad = probs.copy()
        grad[np.arange(n), labels] -= 1.0
        _accumulate(logits, float(g) * grad / n)

    return _node(np.asarray(loss), (logits,), backward_fn)


def penalty_node(value: float, grads: Mapping[str, Array], params: Mapping[str, Tensor]) -> Tensor:
    """A 0-d tape node carrying a precomputed value and analytic gradients.

    Used to splice regularization terms into the loss without differentiating
    through their kinks: backward scatters ``adjoint * grads[name]`` into each
    named parameter.
    """
    touched = tuple(sorted(grads))
    parents = tuple(params[name] for name in touched)
    for name, p in zip(touched, parents):
        if grads[name].shape != p.data.shape:
            raise ShapeError(f"gradient for {name!r} has shape {grads[name].shape}, "
                             f"parameter has {p.data.shape}")

    def backward_fn(g: Array) -> None:
        for name, p in zip(touched, parents):
            _accumulate(p, float(g) * grads[name])

    return _node(np.asarray(float(value)), parents, backward_fn)


def _topo_order(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss: Tensor) -> None:
    """Reverse sweep from a scalar root, accumulating into ``.grad`` fields.

    Each tape node is visited exactly once. A tape is single-use: running
    backward twice over the same nodes doubles the accumulated gradients.
    """
    if loss.data.ndim != 0:
        raise ShapeError(f"backward root must be a scalar, got shape {loss.shape}")
    loss.grad = np.ones_like(loss.data)
    for node in reversed(_topo_order(loss)):
        if node._backward_fn is not None and node.grad is not None:
            node._backward_fn(node.grad)


def gradients(loss: Tensor, params: Mapping[str, Tensor]) -> dict[str, Array]:
    """Gradient map of a scalar loss over named parameters.

    Parameters not reached by the tape get an exact zero gradient.
    """
    for p in params.values():
        p.grad = None
    backward(loss)
    out: dict[str, Array] = {}
    for name, p in params.items():
        out[name] = p.grad.copy() if p.grad is not None else np.zeros_like(p.data)
    return out


def sgd_step(
    params: Mapping[str, Tensor],
    grads: Mapping[str, Array],
    lr: float,
    momentum: float = 0.0,
    velocity: dict[str, Array] | None = None,
) -> dict[str, Array]:
    """In-place SGD update w <- w - lr * v, v = momentum * v + g.

    Returns the velocity buffers so callers can thread them through steps.
    With momentum=0 this is plain w <- w - lr * g.
    """
    if velocity is None:
        velocity = {}
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.data.shape:
            raise ShapeError(f"gradient shape {g.shape} does not match parameter "
                             f"{name!r} with shape {p.data.shape}")
        if momentum != 0.0:
            v = velocity.get(name)
            if v is None:
                v = np.zeros_like(p.data)
            v = momentum * v + g
            velocity[name] = v
            p.data -= lr * v
        else:
            p.data -= lr * g
    return velocity


def assert_finite(arrays: Mapping[str, Array] | Iterable[Array], context: str = "") -> None:
    """Raise NumericError if any array contains NaN or Inf."""
    items = arrays.items() if isinstance(arrays, Mapping) else enumerate(arrays)
    for key, arr in items:
        if not np.all(np.isfinite(arr)):
            where = f" in {key!r}" if isinstance(key, str) else ""
            ctx = f" ({context})" if context else ""
            raise NumericError(f"non-finite values{where}{ctx}")
