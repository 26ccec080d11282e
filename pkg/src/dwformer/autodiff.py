"""Dense float64 tensors with tape-based reverse-mode differentiation.

Every operation records a node on the tape holding its inputs and whatever
forward values its backward rule needs.  ``Tensor.backward`` walks the tape
once in reverse topological order.
"""
from __future__ import annotations

import contextlib
import threading
from typing import Callable, Iterable, Sequence

import numpy as np

__all__ = [
    "Tensor",
    "DimensionError",
    "InvalidMaskError",
    "no_grad",
    "tensor",
    "matmul",
    "add",
    "mul",
    "scale",
    "relu",
    "exp",
    "sum_over_axis",
    "mean_over_axis",
    "concat",
    "slice_axis",
    "reshape",
    "swapaxes",
    "masked_softmax",
    "softmax",
    "layer_norm",
    "cross_entropy",
]

DTYPE = np.float64
LN_EPS = 1e-5

_state = threading.local()


def _grad_enabled() -> bool:
    return getattr(_state, "enabled", True)


@contextlib.contextmanager
def no_grad():
    """Run operations without recording them on the tape."""
    prev = _grad_enabled()
    _state.enabled = False
    try:
        yield
    finally:
        _state.enabled = prev


class DimensionError(ValueError):
    pass


class InvalidMaskError(ValueError):
    """A softmax row had every entry masked out."""


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "_consumed", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.asarray(data, dtype=DTYPE)
        if arr.ndim == 0:
            arr = arr.reshape(())
        elif 0 in arr.shape:
            raise DimensionError(f"all dimension sizes must be >= 1, got {arr.shape}")
        self.data = np.ascontiguousarray(arr)
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], Sequence[np.ndarray | None]] | None = None
        self._consumed = False
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def __repr__(self):
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{tag}, requires_grad={self.requires_grad})"

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __matmul__(self, other):
        return matmul(self, other)

    def zero_grad(self):
        self.grad = None

    def backward(self, accumulate: bool = True) -> dict["Tensor", np.ndarray]:
        """Backpropagate from this scalar.

        Returns a map from every leaf tensor with ``requires_grad`` to its
        gradient.  With ``accumulate`` the gradients are also added into the
        leaves' ``.grad`` fields.  Calling this twice on the same loss is an
        error because saved forward values are released after the first pass.
        """
        if self.data.ndim != 0 and self.data.size != 1:
            raise ValueError(f"backward() needs a scalar loss, got shape {self.shape}")
        if self._consumed:
            raise RuntimeError("backward() already ran on this graph; rebuild the forward pass")
        order = _topo_order(self)
        grads: dict[int, np.ndarray] = {id(self): np.ones_like(self.data)}
        leaves: dict[Tensor, np.ndarray] = {}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                if node.requires_grad:
                    leaves[node] = g
                continue
            in_grads = node._backward(g)
            for parent, pg in zip(node._parents, in_grads):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg
            node._backward = None
            node._parents = ()
            node._consumed = True
        self._consumed = True
        if accumulate:
            for leaf, g in leaves.items():
                leaf.grad = g.copy() if leaf.grad is None else leaf.grad + g
        return leaves


def _topo_order(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack = [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen and p.requires_grad:
                stack.append((p, False))
    return order


def tensor(data, requires_grad: bool = False, name: str | None = None) -> Tensor:
    return data if isinstance(data, Tensor) else Tensor(data, requires_grad, name)


def _wrap(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data: np.ndarray, parents: Iterable[Tensor], backward) -> Tensor:
    parents = tuple(parents)
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.name = None
    out._consumed = False
    if _grad_enabled() and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward
    else:
        out.requires_grad = False
        out._parents = ()
        out._backward = None
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    lead = g.ndim - len(shape)
    if lead:
        g = g.sum(axis=tuple(range(lead)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def _check_broadcast(a: np.ndarray, b: np.ndarray, op: str):
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise DimensionError(f"{op}: shapes {a.shape} and {b.shape} do not broadcast") from None


# ---------------------------------------------------------------- elementwise

def add(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    _check_broadcast(a.data, b.data, "add")
    sa, sb = a.shape, b.shape

    def backward(g):
        return _unbroadcast(g, sa), _unbroadcast(g, sb)

    return _make(a.data + b.data, (a, b), backward)


def mul(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    _check_broadcast(a.data, b.data, "mul")
    ad, bd = a.data, b.data

    def backward(g):
        return (
            _unbroadcast(g * bd, ad.shape) if a.requires_grad else None,
            _unbroadcast(g * ad, bd.shape) if b.requires_grad else None,
        )

    return _make(ad * bd, (a, b), backward)


def scale(x, c: float) -> Tensor:
    x = _wrap(x)
    c = float(c)
    return _make(x.data * c, (x,), lambda g: (g * c,))


def relu(x) -> Tensor:
    x = _wrap(x)
    on = x.data > 0  # relu'(0) = 0
    return _make(np.maximum(x.data, 0.0), (x,), lambda g: (g * on,))


def exp(x) -> Tensor:
    x = _wrap(x)
    out = np.exp(x.data)
    return _make(out, (x,), lambda g: (g * out,))


def sum_over_axis(x, axis: int | None = None, keepdims: bool = False) -> Tensor:
    x = _wrap(x)
    shape = x.shape
    out = x.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return _make(np.asarray(out), (x,), backward)


def mean_over_axis(x, axis: int, keepdims: bool = False) -> Tensor:
    x = _wrap(x)
    n = x.shape[axis]
    return scale(sum_over_axis(x, axis, keepdims), 1.0 / n)


def concat(items: Sequence, axis: int) -> Tensor:
    items = [_wrap(t) for t in items]
    if not items:
        raise DimensionError("concat of an empty list")
    ref = items[0].shape
    ax = axis % len(ref)
    for t in items[1:]:
        if len(t.shape) != len(ref) or any(
            i != ax and m != n for i, (m, n) in enumerate(zip(t.shape, ref))
        ):
            raise DimensionError(f"concat: incompatible shapes {ref} and {t.shape} on axis {axis}")
    sizes = [t.shape[ax] for t in items]
    bounds = np.cumsum(sizes)[:-1]

    def backward(g):
        return tuple(np.split(g, bounds, axis=ax))

    return _make(np.concatenate([t.data for t in items], axis=ax), items, backward)


def slice_axis(x, axis: int, begin: int, end: int) -> Tensor:
    """Half-open slice ``[begin, end)`` along ``axis``."""
    x = _wrap(x)
    n = x.shape[axis]
    if not (0 <= begin < end <= n):
        raise IndexError(f"slice [{begin}, {end}) out of range for axis of size {n}")
    idx = [slice(None)] * x.ndim
    idx[axis] = slice(begin, end)
    idx = tuple(idx)
    shape = x.shape

    def backward(g):
        full = np.zeros(shape, dtype=DTYPE)
        full[idx] = g
        return (full,)

    return _make(x.data[idx].copy(), (x,), backward)


def reshape(x, shape: tuple[int, ...]) -> Tensor:
    x = _wrap(x)
    old = x.shape
    return _make(x.data.reshape(shape), (x,), lambda g: (g.reshape(old),))


def swapaxes(x, a: int, b: int) -> Tensor:
    x = _wrap(x)
    out = np.ascontiguousarray(np.swapaxes(x.data, a, b))
    return _make(out, (x,), lambda g: (np.swapaxes(g, a, b),))


# ---------------------------------------------------------------- linear algebra

def matmul(a, b) -> Tensor:
    """Batched matrix product.

    Leading axes must match exactly, except that a 2-D right operand is
    shared across every leading index of the left one (weight matrices).
    """
    a, b = _wrap(a), _wrap(b)
    ad, bd = a.data, b.data
    if ad.ndim < 2 or bd.ndim < 2 or ad.shape[-1] != bd.shape[-2]:
        raise DimensionError(f"matmul: cannot multiply {ad.shape} by {bd.shape}")
    if bd.ndim > 2 and ad.shape[:-2] != bd.shape[:-2]:
        raise DimensionError(f"matmul: batch axes differ between {ad.shape} and {bd.shape}")
    if bd.ndim == 2 and ad.ndim > 2:
        out = (ad.reshape(-1, ad.shape[-1]) @ bd).reshape(ad.shape[:-1] + (bd.shape[-1],))
    else:
        out = ad @ bd

    def backward(g):
        ga = gb = None
        if a.requires_grad:
            ga = g @ np.swapaxes(bd, -1, -2)
        if b.requires_grad:
            if bd.ndim == 2 and ad.ndim > 2:
                gb = ad.reshape(-1, ad.shape[-1]).T @ g.reshape(-1, g.shape[-1])
            else:
                gb = np.swapaxes(ad, -1, -2) @ g
        return ga, gb

    return _make(out, (a, b), backward)


# ---------------------------------------------------------------- fused ops

def _softmax_rows(logits: np.ndarray, mask: np.ndarray | None) -> np.ndarray:
    if mask is None:
        z = logits - logits.max(axis=-1, keepdims=True)
    else:
        if not (mask == 0).any(axis=-1).all():
            raise InvalidMaskError("masked_softmax: a row has every entry masked")
        z = logits + mask
        z -= z.max(axis=-1, keepdims=True)
    np.exp(z, out=z)  # exp(-inf) == 0, so masked entries are exact zeros
    z /= z.sum(axis=-1, keepdims=True)
    return z


def masked_softmax(logits, mask=None) -> Tensor:
    """Softmax over the last axis with an additive ``{0, -inf}`` mask.

    Masked entries come out as exact zeros.  ``mask`` is a plain array that
    must broadcast against ``logits``; it carries no gradient.
    """
    logits = _wrap(logits)
    if mask is not None:
        mask = np.asarray(mask.data if isinstance(mask, Tensor) else mask, dtype=DTYPE)
        _check_broadcast(logits.data, mask, "masked_softmax")
        bad = (mask != 0) & ~np.isneginf(mask)
        if bad.any():
            raise InvalidMaskError("mask entries must be 0 or -inf")
    p = _softmax_rows(logits.data, mask)
    shape = logits.shape

    def backward(g):
        gp = g * p
        gp -= p * gp.sum(axis=-1, keepdims=True)
        return (_unbroadcast(gp, shape),)

    return _make(p, (logits,), backward)


def softmax(logits) -> Tensor:
    return masked_softmax(logits, None)


def layer_norm(x, gain, bias, eps: float = LN_EPS) -> Tensor:
    x, gain, bias = _wrap(x), _wrap(gain), _wrap(bias)
    d = x.shape[-1]
    if gain.shape != (d,) or bias.shape != (d,):
        raise DimensionError(
            f"layer_norm: last dim {d} vs gain {gain.shape} / bias {bias.shape}"
        )
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    gd = gain.data

    def backward(g):
        lead = tuple(range(g.ndim - 1))
        gg = (g * xhat).sum(axis=lead) if gain.requires_grad else None
        gbias = g.sum(axis=lead) if bias.requires_grad else None
        gx = None
        if x.requires_grad:
            gh = g * gd
            gx = inv * (
                gh - gh.mean(axis=-1, keepdims=True)
                - xhat * (gh * xhat).mean(axis=-1, keepdims=True)
            )
        return gx, gg, gbias

    return _make(xhat * gd + bias.data, (x, gain, bias), backward)


def cross_entropy(logits, labels) -> Tensor:
    """Mean cross-entropy of ``(batch, classes)`` logits against integer labels."""
    logits = _wrap(logits)
    labels = np.asarray(labels)
    if logits.ndim != 2 or labels.shape != (logits.shape[0],):
        raise DimensionError(f"cross_entropy: logits {logits.shape} vs labels {labels.shape}")
    n, c = logits.shape
    if labels.size and (labels.min() < 0 or labels.max() >= c):
        raise ValueError(f"labels must lie in [0, {c}), got range [{labels.min()}, {labels.max()}]")
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    logz = np.log(np.exp(z).sum(axis=1, keepdims=True))
    logp = z - logz
    rows = np.arange(n)
    loss = -logp[rows, labels].mean()

    def backward(g):
        d = np.exp(logp)
        d[rows, labels] -= 1.0
        return (d * (g / n),)

    return _make(np.asarray(loss), (logits,), backward)
