"""Define-by-run reverse-mode differentiation over dense numpy arrays.

Every operation returns a new :class:`Tensor` that remembers its parents and a
closure mapping the upstream gradient to one gradient per parent. Calling
:func:`backward` on a scalar walks the graph in reverse topological order and
accumulates into the ``grad`` of every leaf that requires it.
"""

from __future__ import annotations

from typing import Callable, Optional, Sequence

import numpy as np

from ..errors import InvalidArgumentError, ShapeError

BackwardFn = Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]


class Tensor:
    """A node in the computation graph."""

    __slots__ = ("value", "grad", "requires_grad", "_parents", "_backward", "name")

    __array_priority__ = 100  # make ndarray <op> Tensor defer to Tensor

    def __init__(self, value, requires_grad: bool = False, name: Optional[str] = None):
        value = np.asarray(value)
        if not np.issubdtype(value.dtype, np.floating):
            value = value.astype(np.float64)
        self.value = value
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = requires_grad
        self._parents: tuple = ()
        self._backward: Optional[BackwardFn] = None
        self.name = name

    @property
    def shape(self) -> tuple:
        return self.value.shape

    @property
    def ndim(self) -> int:
        return self.value.ndim

    @property
    def dtype(self):
        return self.value.dtype

    @property
    def is_leaf(self) -> bool:
        return not self._parents

    def zero_grad(self) -> None:
        self.grad = None

    def numpy(self) -> np.ndarray:
        return self.value

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{label}, requires_grad={self.requires_grad})"

    # operator sugar ---------------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __getitem__(self, index):
        return getitem(self, index)

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _node(value: np.ndarray, parents: tuple, backward: BackwardFn) -> Tensor:
    out = Tensor(value)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` after numpy broadcasting."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def _operands(a, b) -> tuple:
    """Wrap both operands; a bare scalar takes the dtype of the tensor it meets."""
    if not isinstance(b, Tensor) and isinstance(a, Tensor) and np.ndim(b) == 0:
        b = Tensor(np.asarray(b, dtype=a.dtype))
    if not isinstance(a, Tensor) and isinstance(b, Tensor) and np.ndim(a) == 0:
        a = Tensor(np.asarray(a, dtype=b.dtype))
    return as_tensor(a), as_tensor(b)


def _check_broadcast(op: str, a: Tensor, b: Tensor) -> tuple:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: incompatible shapes {a.shape} and {b.shape}") from None


# elementwise arithmetic ------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = _operands(a, b)
    _check_broadcast("add", a, b)
    return _node(
        a.value + b.value,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)),
    )


def sub(a, b) -> Tensor:
    a, b = _operands(a, b)
    _check_broadcast("sub", a, b)
    return _node(
        a.value - b.value,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)),
    )


def mul(a, b) -> Tensor:
    a, b = _operands(a, b)
    _check_broadcast("mul", a, b)
    return _node(
        a.value * b.value,
        (a, b),
        lambda g: (
            _unbroadcast(g * b.value, a.shape) if a.requires_grad else None,
            _unbroadcast(g * a.value, b.shape) if b.requires_grad else None,
        ),
    )


def div(a, b) -> Tensor:
    a, b = _operands(a, b)
    _check_broadcast("div", a, b)
    out = a.value / b.value
    return _node(
        out,
        (a, b),
        lambda g: (
            _unbroadcast(g / b.value, a.shape) if a.requires_grad else None,
            _unbroadcast(-g * out / b.value, b.shape) if b.requires_grad else None,
        ),
    )


def neg(a) -> Tensor:
    a = as_tensor(a)
    return _node(-a.value, (a,), lambda g: (-g,))


def square(a) -> Tensor:
    a = as_tensor(a)
    return _node(a.value * a.value, (a,), lambda g: (2.0 * a.value * g,))


def exp(a) -> Tensor:
    a = as_tensor(a)
    out = np.exp(a.value)
    return _node(out, (a,), lambda g: (g * out,))


def log(a) -> Tensor:
    a = as_tensor(a)
    return _node(np.log(a.value), (a,), lambda g: (g / a.value,))


# matrix products ---------------------------------------------------------------

def matmul(a, b) -> Tensor:
    """``np.matmul`` semantics including 1-D promotion and batch broadcasting."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim == 0 or b.ndim == 0:
        raise ShapeError(f"matmul: scalar operand, shapes {a.shape} and {b.shape}")
    av = a.value[None, :] if a.ndim == 1 else a.value
    bv = b.value[:, None] if b.ndim == 1 else b.value
    if av.shape[-1] != bv.shape[-2]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    if a.ndim > 2 and b.ndim == 2:
        # batched activations times one weight matrix: a single 2-D product is much faster
        lead, k = av.shape[:-1], av.shape[-1]
        flat = av.reshape(-1, k)

        def backward_flat(g):
            g2 = g.reshape(-1, g.shape[-1])
            ga = (g2 @ bv.T).reshape(av.shape) if a.requires_grad else None
            gb = flat.T @ g2 if b.requires_grad else None
            return ga, gb

        return _node((flat @ bv).reshape(lead + (bv.shape[-1],)), (a, b), backward_flat)
    try:
        out = np.matmul(av, bv)
    except ValueError:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}") from None

    def backward(g):
        if a.ndim == 1:
            g = np.expand_dims(g, -2)
        if b.ndim == 1:
            g = g[..., None]
        ga = gb = None
        if a.requires_grad:
            ga = _unbroadcast(np.matmul(g, np.swapaxes(bv, -1, -2)), av.shape).reshape(a.shape)
        if b.requires_grad:
            gb = _unbroadcast(np.matmul(np.swapaxes(av, -1, -2), g), bv.shape).reshape(b.shape)
        return ga, gb

    if a.ndim == 1:
        out = out.squeeze(-2)
    if b.ndim == 1:
        out = out.squeeze(-1)
    return _node(out, (a, b), backward)


# reductions and reshaping --------------------------------------------------------

def sum_(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)
    out = a.value.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return _node(out, (a,), backward)


def mean(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)
    if axis is None:
        count = a.value.size
    else:
        axes = (axis,) if isinstance(axis, int) else tuple(axis)
        count = int(np.prod([a.shape[ax] for ax in axes]))
    return sum_(a, axis=axis, keepdims=keepdims) * (1.0 / count)


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    try:
        out = a.value.reshape(shape)
    except ValueError:
        raise ShapeError(f"reshape: cannot reshape {a.shape} to {tuple(shape)}") from None
    return _node(out, (a,), lambda g: (g.reshape(a.shape),))


def transpose(a, axes=None) -> Tensor:
    a = as_tensor(a)
    out = np.transpose(a.value, axes)
    inverse = None if axes is None else tuple(np.argsort(axes))
    return _node(out, (a,), lambda g: (np.transpose(g, inverse),))


def swapaxes(a, axis1: int, axis2: int) -> Tensor:
    a = as_tensor(a)
    return _node(np.swapaxes(a.value, axis1, axis2), (a,), lambda g: (np.swapaxes(g, axis1, axis2),))


def expand_dims(a, axis: int) -> Tensor:
    a = as_tensor(a)
    return reshape(a, np.expand_dims(a.value, axis).shape)


def _is_basic_index(index) -> bool:
    items = index if isinstance(index, tuple) else (index,)
    return all(isinstance(i, (int, np.integer, slice)) or i is None or i is Ellipsis for i in items)


def getitem(a, index) -> Tensor:
    """Slicing (``slice`` in the operator inventory); fancy indexing is supported too."""
    a = as_tensor(a)
    try:
        out = a.value[index]
    except IndexError as exc:
        raise ShapeError(f"slice: {exc} for shape {a.shape}") from None
    basic = _is_basic_index(index)

    def backward(g):
        full = np.zeros(a.shape, dtype=g.dtype)
        if basic:
            full[index] += g
        else:
            np.add.at(full, index, g)
        return (full,)

    return _node(out, (a,), backward)


def concat(tensors: Sequence, axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    if not tensors:
        raise InvalidArgumentError("concat: no tensors given")
    try:
        out = np.concatenate([t.value for t in tensors], axis=axis)
    except ValueError:
        shapes = ", ".join(str(t.shape) for t in tensors)
        raise ShapeError(f"concat: incompatible shapes {shapes} along axis {axis}") from None
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]
    return _node(out, tuple(tensors), lambda g: tuple(np.split(g, bounds, axis=axis)))


def stack(tensors: Sequence, axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    if not tensors:
        raise InvalidArgumentError("stack: no tensors given")
    try:
        out = np.stack([t.value for t in tensors], axis=axis)
    except ValueError:
        shapes = ", ".join(str(t.shape) for t in tensors)
        raise ShapeError(f"stack: incompatible shapes {shapes}") from None
    n = len(tensors)
    return _node(
        out,
        tuple(tensors),
        lambda g: tuple(np.take(g, i, axis=axis) for i in range(n)),
    )


# nonlinearities --------------------------------------------------------------------

def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    # tanh form never overflows
    out = np.tanh(a.value * 0.5)
    out *= 0.5
    out += 0.5
    return _node(out, (a,), lambda g: (g * out * (1.0 - out),))


def tanh(a) -> Tensor:
    a = as_tensor(a)
    out = np.tanh(a.value)
    return _node(out, (a,), lambda g: (g * (1.0 - out * out),))


def elu(a, alpha: float = 1.0) -> Tensor:
    a = as_tensor(a)
    x = a.value
    neg_part = alpha * np.expm1(np.minimum(x, 0.0))
    out = np.where(x > 0, x, neg_part)
    return _node(out, (a,), lambda g: (g * np.where(x > 0, 1.0, neg_part + alpha),))


def relu(a) -> Tensor:
    a = as_tensor(a)
    positive = a.value > 0
    return _node(np.where(positive, a.value, 0.0).astype(a.dtype), (a,), lambda g: (g * positive,))


def softmax(a, axis: int = -1) -> Tensor:
    a = as_tensor(a)
    shifted = a.value - a.value.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return _node(out, (a,), backward)


def masked_fill(a, mask: np.ndarray, value: float) -> Tensor:
    """Replace entries where ``mask`` is true by a constant; no gradient flows there."""
    a = as_tensor(a)
    mask = np.asarray(mask, dtype=bool)
    try:
        out = np.where(mask, value, a.value).astype(a.dtype, copy=False)
    except ValueError:
        raise ShapeError(f"masked_fill: mask shape {mask.shape} incompatible with {a.shape}") from None
    keep = ~mask
    return _node(out, (a,), lambda g: (_unbroadcast(np.where(keep, g, 0.0), a.shape),))


def layer_norm(a, scale=None, shift=None, axis: int = -1, eps: float = 1e-8) -> Tensor:
    """Normalize to zero mean and unit variance along ``axis``, then ``scale * x + shift``."""
    a = as_tensor(a)
    x = a.value
    mu = x.mean(axis=axis, keepdims=True)
    centred = x - mu
    var = (centred * centred).mean(axis=axis, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = centred * inv_std
    parents = [a]
    if scale is not None:
        scale = as_tensor(scale)
        _check_broadcast("layer_norm", a, scale)
        parents.append(scale)
    if shift is not None:
        shift = as_tensor(shift)
        _check_broadcast("layer_norm", a, shift)
        parents.append(shift)
    out = xhat
    if scale is not None:
        out = out * scale.value
    if shift is not None:
        out = out + shift.value

    def backward(g):
        gx = g * scale.value if scale is not None else g
        gx = inv_std * (
            gx
            - gx.mean(axis=axis, keepdims=True)
            - xhat * (gx * xhat).mean(axis=axis, keepdims=True)
        )
        grads = [gx]
        if scale is not None:
            grads.append(_unbroadcast(g * xhat, scale.shape))
        if shift is not None:
            grads.append(_unbroadcast(g, shift.shape))
        return tuple(grads)

    return _node(out, tuple(parents), backward)


def dropout(a, rate: float, rng: Optional[np.random.Generator] = None, train: bool = False) -> Tensor:
    """Inverted dropout: kept units are scaled by ``1/(1-rate)`` at train time."""
    a = as_tensor(a)
    if not 0.0 <= rate < 1.0:
        raise InvalidArgumentError(f"dropout rate must be in [0, 1), got {rate}")
    if not train or rate == 0.0:
        return a
    if rng is None:
        raise InvalidArgumentError("dropout in train mode needs a random generator")
    keep = (rng.random(a.shape) >= rate).astype(a.dtype) / (1.0 - rate)
    return _node(a.value * keep, (a,), lambda g: (g * keep,))


def embedding(table, indices) -> Tensor:
    """Row lookup ``table[indices]`` with scatter-add backward."""
    table = as_tensor(table)
    indices = np.asarray(indices)
    if not np.issubdtype(indices.dtype, np.integer):
        raise InvalidArgumentError("embedding indices must be integers")
    if indices.size and (indices.min() < 0 or indices.max() >= table.shape[0]):
        raise ShapeError(f"embedding: index out of range for table of shape {table.shape}")

    def backward(g):
        full = np.zeros(table.shape, dtype=g.dtype)
        np.add.at(full, indices, g)
        return (full,)

    return _node(table.value[indices], (table,), backward)


# backward pass ----------------------------------------------------------------------

def _topological_order(root: Tensor) -> list:
    order, seen = [], set()
    stack_ = [(root, False)]
    while stack_:
        node, expanded = stack_.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack_.append((node, True))
        for parent in node._parents:
            if parent.requires_grad and id(parent) not in seen:
                stack_.append((parent, False))
    return order


def backward(loss: Tensor, grad: Optional[np.ndarray] = None) -> None:
    """Accumulate d(loss)/d(leaf) into ``leaf.grad`` for every leaf requiring gradients.

    Intermediate gradients live only for the duration of the call, so repeated
    calls on the same graph add to the leaf gradients exactly once per call.
    """
    if loss.value.size != 1 and grad is None:
        raise InvalidArgumentError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    seed = np.ones_like(loss.value) if grad is None else np.asarray(grad, dtype=loss.dtype)
    grads = {id(loss): seed}
    for node in reversed(_topological_order(loss)):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node.is_leaf:
            node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg
