"""Dense float64 tensors with reverse-mode automatic differentiation.

Every differentiable operation returns a fresh ``Tensor`` whose buffer never
aliases its inputs, records its parents, and carries a closure computing the
parent gradients from the output gradient.  ``backward`` linearizes the
recorded operation graph into a topological tape and visits each node exactly
once, accumulating (never overwriting) gradients on every node that
participates in differentiation.

Domain violations (division by zero, log of a non-positive value, fractional
powers of negative bases) raise ``DomainError`` instead of silently producing
NaN.  Shape problems raise ``ShapeError``.
"""

from __future__ import annotations

import numpy as np

from . import kernels


class ShapeError(ValueError):
    """Operand shapes are incompatible with the requested operation."""


class DomainError(ValueError):
    """Operand values lie outside the mathematical domain of the operation."""


def _asarray(data) -> np.ndarray:
    arr = np.asarray(data, dtype=np.float64)
    # ascontiguousarray would promote 0-d scalars to shape (1,)
    return arr if arr.ndim == 0 else np.ascontiguousarray(arr)


class Tensor:
    """N-dimensional float64 array, optionally tracked for differentiation."""

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward_fn")

    def __init__(self, data, requires_grad=False, _parents=(), _backward_fn=None):
        self.data = _asarray(data)
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._parents = tuple(_parents)
        self._backward_fn = _backward_fn

    # -- basic introspection -------------------------------------------------

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else _raise_nonscalar(self)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    def zero_grad(self):
        self.grad = None

    def grad_array(self) -> np.ndarray:
        """Accumulated gradient; zeros when this leaf never joined a backward pass."""
        if self.grad is None:
            return np.zeros_like(self.data)
        return self.grad

    # -- operator sugar --------------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(as_tensor(other), self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(as_tensor(other), self)

    def __pow__(self, other):
        return power(self, other)

    def __neg__(self):
        return mul(self, -1.0)

    def __getitem__(self, idx):
        return take(self, idx)

    # -- method forms used throughout the package ------------------------------

    def sum(self, axes=None, keepdims=False):
        return reduce_sum(self, axes, keepdims)

    def mean(self, axes=None, keepdims=False):
        return reduce_mean(self, axes, keepdims)

    def max(self, axes=None, keepdims=False):
        return reduce_max(self, axes, keepdims)

    def reshape(self, shape):
        return reshape(self, shape)

    def transpose(self, axes):
        return transpose(self, axes)

    def matmul(self, other):
        return matmul(self, other)

    def backward(self):
        backward(self)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def constant(x) -> Tensor:
    """Wrap data as a non-differentiable graph leaf."""
    return Tensor(x, requires_grad=False)


def _raise_nonscalar(t):
    raise ShapeError(f"expected a scalar tensor, got shape {t.shape}")


def _make(data, parents, backward_fn):
    req = any(p.requires_grad for p in parents)
    return Tensor(data, requires_grad=req,
                  _parents=parents if req else (),
                  _backward_fn=backward_fn if req else None)


def _unbroadcast(grad: np.ndarray, shape) -> np.ndarray:
    """Sum a broadcast gradient back down to the original operand shape."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def _check_broadcast(a_shape, b_shape):
    try:
        return np.broadcast_shapes(a_shape, b_shape)
    except ValueError as exc:
        raise ShapeError(f"shapes {a_shape} and {b_shape} do not broadcast") from exc


# ---------------------------------------------------------------------------
# elementwise binary operations
# ---------------------------------------------------------------------------

def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a.shape, b.shape)
    out = a.data + b.data

    def bwd(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _make(out, (a, b), bwd)


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a.shape, b.shape)
    out = a.data - b.data

    def bwd(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _make(out, (a, b), bwd)


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a.shape, b.shape)
    out = a.data * b.data

    def bwd(g):
        return (_unbroadcast(g * b.data, a.shape),
                _unbroadcast(g * a.data, b.shape))

    return _make(out, (a, b), bwd)


def div(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a.shape, b.shape)
    if np.any(b.data == 0.0):
        raise DomainError("division by zero")
    out = a.data / b.data

    def bwd(g):
        return (_unbroadcast(g / b.data, a.shape),
                _unbroadcast(-g * a.data / (b.data * b.data), b.shape))

    return _make(out, (a, b), bwd)


def power(a, b):
    """Elementwise a**b.  Fractional exponents require non-negative bases;
    a differentiable exponent additionally requires strictly positive bases."""
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a.shape, b.shape)
    exponent_varies = b.requires_grad
    is_integral = np.all(b.data == np.round(b.data))
    if not is_integral and np.any(a.data < 0.0):
        raise DomainError("fractional power of a negative base")
    if exponent_varies and np.any(a.data <= 0.0):
        raise DomainError("differentiable exponent requires positive base")
    if a.requires_grad and not is_integral and np.any(a.data == 0.0):
        raise DomainError("gradient of fractional power undefined at base 0")
    out = a.data ** b.data

    def bwd(g):
        ga = gb = None
        if a.requires_grad:
            ga = _unbroadcast(g * b.data * a.data ** (b.data - 1.0), a.shape)
        if b.requires_grad:
            gb = _unbroadcast(g * out * np.log(a.data), b.shape)
        return ga, gb

    return _make(out, (a, b), bwd)


def maximum(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a.shape, b.shape)
    out = np.maximum(a.data, b.data)

    def bwd(g):
        pick_a = a.data >= b.data
        return (_unbroadcast(g * pick_a, a.shape),
                _unbroadcast(g * ~pick_a, b.shape))

    return _make(out, (a, b), bwd)


def minimum(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a.shape, b.shape)
    out = np.minimum(a.data, b.data)

    def bwd(g):
        pick_a = a.data <= b.data
        return (_unbroadcast(g * pick_a, a.shape),
                _unbroadcast(g * ~pick_a, b.shape))

    return _make(out, (a, b), bwd)


# ---------------------------------------------------------------------------
# elementwise unary operations
# ---------------------------------------------------------------------------

def exp(a):
    a = as_tensor(a)
    out = np.exp(a.data)
    if not np.all(np.isfinite(out)):
        raise DomainError("exp overflow")

    def bwd(g):
        return (g * out,)

    return _make(out, (a,), bwd)


def log(a):
    a = as_tensor(a)
    if np.any(a.data <= 0.0):
        raise DomainError("log of a non-positive value")
    out = np.log(a.data)

    def bwd(g):
        return (g / a.data,)

    return _make(out, (a,), bwd)


def absolute(a):
    a = as_tensor(a)
    out = np.abs(a.data)

    def bwd(g):
        return (g * np.sign(a.data),)

    return _make(out, (a,), bwd)


def clamp(a, lo, hi):
    a = as_tensor(a)
    if lo > hi:
        raise DomainError(f"clamp bounds inverted: {lo} > {hi}")
    out = np.clip(a.data, lo, hi)

    def bwd(g):
        inside = (a.data >= lo) & (a.data <= hi)
        return (g * inside,)

    return _make(out, (a,), bwd)


def sigmoid(a):
    a = as_tensor(a)
    x = a.data
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)

    def bwd(g):
        return (g * out * (1.0 - out),)

    return _make(out, (a,), bwd)


def tanh(a):
    a = as_tensor(a)
    out = np.tanh(a.data)

    def bwd(g):
        return (g * (1.0 - out * out),)

    return _make(out, (a,), bwd)


# ---------------------------------------------------------------------------
# reductions
# ---------------------------------------------------------------------------

def _norm_axes(axes, ndim):
    if axes is None:
        return None
    if isinstance(axes, (int, np.integer)):
        axes = (int(axes),)
    axes = tuple(int(ax) for ax in axes)
    norm = []
    for ax in axes:
        if not -ndim <= ax < ndim:
            raise ShapeError(f"axis {ax} out of range for {ndim}-d tensor")
        norm.append(ax % ndim)
    if len(set(norm)) != len(norm):
        raise ShapeError(f"duplicate axes in {axes}")
    return tuple(sorted(norm))


def reduce_sum(a, axes=None, keepdims=False):
    a = as_tensor(a)
    axes = _norm_axes(axes, a.ndim)
    if axes == ():
        return _identity(a)
    out = a.data.sum(axis=axes, keepdims=keepdims)

    def bwd(g):
        return (_spread(g, a.shape, axes, keepdims),)

    return _make(out, (a,), bwd)


def reduce_mean(a, axes=None, keepdims=False):
    a = as_tensor(a)
    axes = _norm_axes(axes, a.ndim)
    if axes == ():
        return _identity(a)
    count = a.size if axes is None else int(np.prod([a.shape[ax] for ax in axes]))
    out = a.data.mean(axis=axes, keepdims=keepdims)

    def bwd(g):
        return (_spread(g, a.shape, axes, keepdims) / count,)

    return _make(out, (a,), bwd)


def reduce_max(a, axes=None, keepdims=False):
    a = as_tensor(a)
    axes = _norm_axes(axes, a.ndim)
    if axes == ():
        return _identity(a)
    out = a.data.max(axis=axes, keepdims=keepdims)

    def bwd(g):
        # split the gradient evenly over tied maxima
        expanded = out if keepdims else (
            out if axes is None else np.expand_dims(out, axes))
        mask = (a.data == expanded)
        ties = mask.sum(axis=axes, keepdims=True)
        gexp = _spread(g, a.shape, axes, keepdims)
        return (gexp * mask / ties,)

    return _make(out, (a,), bwd)


def _identity(a):
    out = a.data.copy()

    def bwd(g):
        return (g,)

    return _make(out, (a,), bwd)


def _spread(g, shape, axes, keepdims):
    """Broadcast a reduced gradient back to the pre-reduction shape."""
    g = np.asarray(g, dtype=np.float64)
    if axes is None:
        g = g.reshape((1,) * len(shape))
    elif not keepdims:
        g = np.expand_dims(g, axes)
    return np.broadcast_to(g, shape).copy()


# ---------------------------------------------------------------------------
# linear algebra and shaping
# ---------------------------------------------------------------------------

def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError("matmul operands must have at least 2 dimensions")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"inner dimensions disagree: {a.shape} @ {b.shape}")
    _check_broadcast(a.shape[:-2], b.shape[:-2])
    out = a.data @ b.data

    def bwd(g):
        ga = gb = None
        if a.requires_grad:
            ga = _unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.shape)
        if b.requires_grad:
            gb = _unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape)
        return ga, gb

    return _make(out, (a, b), bwd)


def reshape(a, shape):
    a = as_tensor(a)
    out = a.data.reshape(shape).copy()

    def bwd(g):
        return (g.reshape(a.shape),)

    return _make(out, (a,), bwd)


def transpose(a, axes):
    a = as_tensor(a)
    axes = tuple(axes)
    out = np.ascontiguousarray(a.data.transpose(axes))
    inverse = np.argsort(axes)

    def bwd(g):
        return (np.ascontiguousarray(g.transpose(inverse)),)

    return _make(out, (a,), bwd)


def take(a, idx):
    """Basic/advanced indexing as a differentiable gather (always copies)."""
    a = as_tensor(a)
    out = np.array(a.data[idx])

    def bwd(g):
        ga = np.zeros_like(a.data)
        np.add.at(ga, idx, g)
        return (ga,)

    return _make(out, (a,), bwd)


def concat(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]
    out = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def bwd(g):
        return tuple(np.ascontiguousarray(p) for p in np.split(g, splits, axis=axis))

    return _make(out, tuple(tensors), bwd)


def pad2d_edge(a, pad_h, pad_w):
    """Edge-replicate padding on the trailing two axes (bottom/right only)."""
    a = as_tensor(a)
    if pad_h == 0 and pad_w == 0:
        return _identity(a)
    h, w = a.shape[-2], a.shape[-1]
    idx_h = np.minimum(np.arange(h + pad_h), h - 1)
    idx_w = np.minimum(np.arange(w + pad_w), w - 1)
    out = a.data[..., idx_h[:, None], idx_w[None, :]]

    def bwd(g):
        ga = np.zeros_like(a.data)
        np.add.at(ga, (..., idx_h[:, None], idx_w[None, :]), g)
        return (ga,)

    return _make(out, (a,), bwd)


def softmax(a, axis=-1):
    a = as_tensor(a)
    x = a.data
    shifted = x - x.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def bwd(g):
        inner = (g * out).sum(axis=axis, keepdims=True)
        return (out * (g - inner),)

    return _make(out, (a,), bwd)


def conv2d(x, w, stride=1, padding=0):
    """2D cross-correlation, NCHW activations against OIKK weights."""
    x, w = as_tensor(x), as_tensor(w)
    if x.ndim != 4 or w.ndim != 4:
        raise ShapeError("conv2d expects NCHW input and OIKK weights")
    n, c, h, wd = x.shape
    o, ci, kh, kw = w.shape
    if ci != c:
        raise ShapeError(f"channel mismatch: input {c}, weights expect {ci}")
    if kh != kw or kh % 2 == 0:
        raise ShapeError(f"kernel must be square with odd size, got {kh}x{kw}")
    if kh > h + 2 * padding or kw > wd + 2 * padding:
        raise ShapeError("kernel larger than padded input")
    out = kernels.conv2d_forward(x.data, w.data, stride, padding)

    def bwd(g):
        g = np.ascontiguousarray(g)
        gx = gw = None
        if x.requires_grad:
            gx = kernels.conv2d_backward_x(w.data, g, stride, padding, h, wd)
        if w.requires_grad:
            gw = kernels.conv2d_backward_w(x.data, g, kh, stride, padding)
        return gx, gw

    return _make(out, (x, w), bwd)


def stop_gradient(a):
    """Value-identical tensor with the backward path severed."""
    a = as_tensor(a)
    return Tensor(a.data.copy(), requires_grad=False)


# ---------------------------------------------------------------------------
# backward traversal
# ---------------------------------------------------------------------------

def _topo_order(root):
    """Ancestors of ``root`` in topological order (parents precede children)."""
    order = []
    seen = set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if parent.requires_grad and id(parent) not in seen:
                stack.append((parent, False))
    return order


def backward(loss):
    """Accumulate d(loss)/d(node) into ``grad`` for every tracked ancestor."""
    loss = as_tensor(loss)
    if loss.size != 1:
        raise ShapeError(f"backward requires a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        raise ValueError("loss does not require grad; nothing to differentiate")
    order = _topo_order(loss)
    pending = {id(loss): np.ones_like(loss.data)}
    for node in reversed(order):
        g = pending.pop(id(node), None)
        if g is None:
            continue
        node.grad = g if node.grad is None else node.grad + g
        if node._backward_fn is None:
            continue
        parent_grads = node._backward_fn(g)
        for parent, pg in zip(node._parents, parent_grads):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            if key in pending:
                pending[key] = pending[key] + pg
            else:
                pending[key] = pg
