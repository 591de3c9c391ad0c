"""Dense float64 tensors with reverse-mode automatic differentiation.

Small graph-based engine in the micrograd style: every operation records its
parents and a closure that pushes the output gradient back to them. Shapes are
explicit; broadcasting is limited to what numpy would do when a trailing-shape
operand is repeated along leading axes (the backward rules sum the broadcast
axes away, which keeps them auditable).
"""

from __future__ import annotations

import numpy as np
from scipy.special import erf

_EPS_DEFAULT = 1e-5


class Tensor:
    """A dense float64 array node on the gradient tape."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "_done")

    def __init__(self, data, requires_grad=False):
        arr = np.asarray(data, dtype=np.float64)
        self.data = np.ascontiguousarray(arr)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = ()
        self._backward = None
        self._done = False

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    def detach(self):
        return Tensor(self.data.copy())

    def zero_grad(self):
        self.grad = None

    def _accumulate(self, g):
        if g.shape != self.data.shape:
            raise ValueError(
                f"gradient shape {g.shape} does not match tensor shape {self.data.shape}"
            )
        if self.grad is None:
            self.grad = g.copy()
        else:
            self.grad += g

    # Operator sugar; the real work lives in the module-level functions.
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(_as_tensor(other), self)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(_as_tensor(other), self)

    def __neg__(self):
        return mul(self, _as_tensor(-1.0))

    def __truediv__(self, other):
        return div(self, other)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return getitem(self, idx)


def _as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _node(data, parents, backward_fn):
    out = Tensor(data)
    if any(p.requires_grad or p._backward is not None for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward_fn
    return out


def _unbroadcast(g, shape):
    """Sum gradient g down to `shape` (inverse of numpy broadcasting)."""
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


# ---------------------------------------------------------------------------
# elementwise arithmetic


def add(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    data = a.data + b.data

    def backward(g, out):
        return (_unbroadcast(g, a.data.shape), _unbroadcast(g, b.data.shape))

    return _node(data, (a, b), backward)


def sub(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    data = a.data - b.data

    def backward(g, out):
        return (_unbroadcast(g, a.data.shape), _unbroadcast(-g, b.data.shape))

    return _node(data, (a, b), backward)


def mul(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    data = a.data * b.data

    def backward(g, out):
        return (
            _unbroadcast(g * b.data, a.data.shape),
            _unbroadcast(g * a.data, b.data.shape),
        )

    return _node(data, (a, b), backward)


def div(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    data = a.data / b.data

    def backward(g, out):
        return (
            _unbroadcast(g / b.data, a.data.shape),
            _unbroadcast(-g * a.data / (b.data * b.data), b.data.shape),
        )

    return _node(data, (a, b), backward)


def exp(x):
    x = _as_tensor(x)
    data = np.exp(x.data)

    def backward(g, out):
        return (g * data,)

    return _node(data, (x,), backward)


def log(x):
    x = _as_tensor(x)
    data = np.log(x.data)

    def backward(g, out):
        return (g / x.data,)

    return _node(data, (x,), backward)


def sqrt(x):
    x = _as_tensor(x)
    data = np.sqrt(x.data)

    def backward(g, out):
        return (g * 0.5 / data,)

    return _node(data, (x,), backward)


def sigmoid(x):
    x = _as_tensor(x)
    data = 1.0 / (1.0 + np.exp(-x.data))

    def backward(g, out):
        return (g * data * (1.0 - data),)

    return _node(data, (x,), backward)


def tanh(x):
    x = _as_tensor(x)
    data = np.tanh(x.data)

    def backward(g, out):
        return (g * (1.0 - data * data),)

    return _node(data, (x,), backward)


def gelu(x):
    """Exact-erf GELU: x * Phi(x)."""
    x = _as_tensor(x)
    phi_cdf = 0.5 * (1.0 + erf(x.data / np.sqrt(2.0)))
    data = x.data * phi_cdf

    def backward(g, out):
        pdf = np.exp(-0.5 * x.data * x.data) / np.sqrt(2.0 * np.pi)
        return (g * (phi_cdf + x.data * pdf),)

    return _node(data, (x,), backward)


# ---------------------------------------------------------------------------
# shape ops


def reshape(x, shape):
    x = _as_tensor(x)
    data = x.data.reshape(shape)

    def backward(g, out):
        return (g.reshape(x.data.shape),)

    return _node(data, (x,), backward)


def swapaxes(x, a, b):
    x = _as_tensor(x)
    data = np.ascontiguousarray(np.swapaxes(x.data, a, b))

    def backward(g, out):
        return (np.ascontiguousarray(np.swapaxes(g, a, b)),)

    return _node(data, (x,), backward)


def expand_leading(x, n):
    """Repeat x along a new leading axis of extent n (the one sanctioned
    broadcast). Backward sums over that axis."""
    x = _as_tensor(x)
    data = np.broadcast_to(x.data, (n,) + x.data.shape).copy()

    def backward(g, out):
        return (g.sum(axis=0),)

    return _node(data, (x,), backward)


def concatenate(tensors, axis):
    tensors = [_as_tensor(t) for t in tensors]
    data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def backward(g, out):
        return tuple(np.ascontiguousarray(p) for p in np.split(g, splits, axis=axis))

    return _node(data, tuple(tensors), backward)


def getitem(x, idx):
    x = _as_tensor(x)
    data = np.ascontiguousarray(x.data[idx])

    def backward(g, out):
        gx = np.zeros_like(x.data)
        np.add.at(gx, idx, g)
        return (gx,)

    return _node(data, (x,), backward)


def take_rows(x, indices):
    """Gather rows of x (axis 0) by an integer index array; scatter-add on
    backward. Used for embedding lookup."""
    x = _as_tensor(x)
    idx = np.asarray(indices, dtype=np.intp)
    data = np.ascontiguousarray(x.data[idx])

    def backward(g, out):
        gx = np.zeros_like(x.data)
        np.add.at(gx, idx, g)
        return (gx,)

    return _node(data, (x,), backward)


def stack(tensors, axis=0):
    tensors = [_as_tensor(t) for t in tensors]
    data = np.stack([t.data for t in tensors], axis=axis)

    def backward(g, out):
        parts = np.split(g, len(tensors), axis=axis)
        return tuple(np.ascontiguousarray(np.squeeze(p, axis=axis)) for p in parts)

    return _node(data, tuple(tensors), backward)


# ---------------------------------------------------------------------------
# reductions


def tsum(x, axis=None, keepdims=False):
    x = _as_tensor(x)
    data = x.data.sum(axis=axis, keepdims=keepdims)

    def backward(g, out):
        if axis is None:
            return (np.broadcast_to(g, x.data.shape).copy(),)
        ax = axis if isinstance(axis, tuple) else (axis,)
        if not keepdims:
            g = np.expand_dims(g, ax)
        return (np.broadcast_to(g, x.data.shape).copy(),)

    return _node(data, (x,), backward)


def tmean(x, axis=None, keepdims=False):
    x = _as_tensor(x)
    if axis is None:
        count = x.data.size
    else:
        ax = axis if isinstance(axis, tuple) else (axis,)
        count = int(np.prod([x.data.shape[a] for a in ax]))
    return mul(tsum(x, axis=axis, keepdims=keepdims), _as_tensor(1.0 / count))


# ---------------------------------------------------------------------------
# linear algebra


def matmul(a, b):
    """Matrix product with optional shared leading batch axes.

    2-D: (m,k)@(k,n). Batched: (..., m, k) @ (..., k, n) with identical
    leading shapes. Backward: a_grad = g @ b^T, b_grad = a^T @ g.
    """
    a, b = _as_tensor(a), _as_tensor(b)
    if a.data.ndim < 2 or b.data.ndim < 2:
        raise ValueError(f"matmul needs >=2-D operands, got {a.shape} and {b.shape}")
    if a.data.shape[-1] != b.data.shape[-2]:
        raise ValueError(f"matmul shape mismatch: {a.shape} @ {b.shape}")
    if a.data.shape[:-2] != b.data.shape[:-2]:
        raise ValueError(f"matmul batch-shape mismatch: {a.shape} @ {b.shape}")
    data = a.data @ b.data

    def backward(g, out):
        return (
            g @ np.swapaxes(b.data, -1, -2),
            np.swapaxes(a.data, -1, -2) @ g,
        )

    return _node(data, (a, b), backward)


def softmax(x, axis=-1):
    """Max-subtracted softmax along `axis` with the exact Jacobian-vector
    product as the backward rule."""
    x = _as_tensor(x)
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    data = e / e.sum(axis=axis, keepdims=True)

    def backward(g, out):
        dot = (g * data).sum(axis=axis, keepdims=True)
        return (data * (g - dot),)

    return _node(data, (x,), backward)


def layernorm(x, gain, bias, eps=_EPS_DEFAULT):
    """Normalize the last axis to mean 0 / variance 1, then apply affine."""
    x, gain, bias = _as_tensor(x), _as_tensor(gain), _as_tensor(bias)
    d = x.data.shape[-1]
    if gain.data.shape != (d,) or bias.data.shape != (d,):
        raise ValueError(
            f"layernorm affine shapes {gain.shape}/{bias.shape} do not match last axis {d}"
        )
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    data = xhat * gain.data + bias.data

    def backward(g, out):
        gg = g * gain.data
        # d xhat: standard layernorm backward
        gx = inv * (
            gg
            - gg.mean(axis=-1, keepdims=True)
            - xhat * (gg * xhat).mean(axis=-1, keepdims=True)
        )
        ggain = _unbroadcast(g * xhat, gain.data.shape)
        gbias = _unbroadcast(g, bias.data.shape)
        return (gx, ggain, gbias)

    return _node(data, (x, gain, bias), backward)


# ---------------------------------------------------------------------------
# backward pass


def backward(loss):
    """Populate gradients of `loss` w.r.t. every requires-grad tensor
    reachable on the tape. Rejects non-scalar losses and repeated calls."""
    if not isinstance(loss, Tensor):
        raise TypeError("backward expects a Tensor")
    if loss.data.size != 1:
        raise ValueError(f"backward requires a scalar loss, got shape {loss.shape}")
    if loss._done:
        raise RuntimeError("backward already called on this tape; re-run the forward pass")
    loss._done = True

    topo = []
    visited = set()
    stack_ = [(loss, False)]
    while stack_:
        node, processed = stack_.pop()
        if processed:
            topo.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack_.append((node, True))
        for p in node._parents:
            if id(p) not in visited:
                stack_.append((p, False))

    grads = {id(loss): np.ones_like(loss.data)}
    for node in reversed(topo):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node.requires_grad:
            node._accumulate(g)
        if node._backward is None:
            continue
        parent_grads = node._backward(g, node)
        for p, pg in zip(node._parents, parent_grads):
            if pg is None:
                continue
            if id(p) in grads:
                grads[id(p)] += pg
            else:
                grads[id(p)] = pg


def grad_check(f, x, h=1e-5):
    """Max relative error between analytic and central-difference gradients.

    `f` must be a deterministic scalar-valued function of one Tensor. The
    analytic side runs f once with requires_grad; the numeric side perturbs
    each coordinate of a gradient-free copy.
    """
    xt = Tensor(x.data.copy() if isinstance(x, Tensor) else np.asarray(x, float))
    xt.requires_grad = True
    loss = f(xt)
    backward(loss)
    analytic = xt.grad.copy() if xt.grad is not None else np.zeros_like(xt.data)

    base = xt.data.copy()
    numeric = np.zeros_like(base)
    flat = base.reshape(-1)
    nflat = numeric.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = f(Tensor(base)).data.item()
        flat[i] = orig - h
        fm = f(Tensor(base)).data.item()
        flat[i] = orig
        nflat[i] = (fp - fm) / (2.0 * h)

    denom = np.abs(numeric) + 1e-8
    return float(np.max(np.abs(analytic - numeric) / denom))
