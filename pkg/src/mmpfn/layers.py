"""Parameterized layers: linear, MLP blocks, GLU, masked multi-head attention.

Initialization is fully deterministic: every parameter stream is drawn from a
Philox counter-based generator keyed by (seed, stream name), so identical
(scheme, seed, shape) requests always yield identical tensors.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

MASK_NEG = -1e30  # additive mask constant; exact zeros after max-subtracted softmax


def _philox(seed, name):
    digest = hashlib.sha256(name.encode("utf-8")).digest()
    key = int.from_bytes(digest[:8], "little")
    return np.random.Generator(np.random.Philox(key=[seed & 0xFFFFFFFFFFFFFFFF, key]))


@dataclass(frozen=True)
class InitSpec:
    scheme: str = "scaled-uniform"  # or "zeros"
    seed: int = 0


def init_params(spec, shape, name="param", fan_in=None):
    """Draw a parameter tensor. scaled-uniform draws in
    [-1/sqrt(fan_in), +1/sqrt(fan_in)]; fan_in defaults to the last extent."""
    shape = tuple(int(s) for s in shape)
    if spec.scheme == "zeros":
        return Tensor(np.zeros(shape), requires_grad=True)
    if spec.scheme != "scaled-uniform":
        raise ValueError(f"unknown init scheme {spec.scheme!r}")
    if fan_in is None:
        fan_in = shape[-1] if shape else 1
    bound = 1.0 / np.sqrt(fan_in)
    rng = _philox(spec.seed, name)
    return Tensor(rng.uniform(-bound, bound, size=shape), requires_grad=True)


class Linear:
    """y = x @ weight^T + bias, weight stored out x in."""

    def __init__(self, in_dim, out_dim, spec, name):
        self.in_dim = in_dim
        self.out_dim = out_dim
        self.weight = init_params(spec, (out_dim, in_dim), name=f"{name}.weight")
        self.bias = Tensor(np.zeros(out_dim), requires_grad=True)
        self.name = name

    def __call__(self, x):
        if x.shape[-1] != self.in_dim:
            raise ValueError(
                f"linear {self.name}: input last axis {x.shape[-1]} != in_dim {self.in_dim}"
            )
        lead = x.shape[:-1]
        flat = ad.reshape(x, (-1, self.in_dim))
        out = ad.matmul(flat, ad.swapaxes(self.weight, 0, 1)) + self.bias
        return ad.reshape(out, lead + (self.out_dim,))

    def params(self):
        return {f"{self.name}.weight": self.weight, f"{self.name}.bias": self.bias}


def glu(x):
    """Gated linear unit over the last axis: first half is content, second
    half is the sigmoid gate."""
    h2 = x.shape[-1]
    if h2 % 2 != 0:
        raise ValueError(f"glu requires an even last axis, got {h2}")
    h = h2 // 2
    content = x[..., :h]
    gate = x[..., h:]
    return content * ad.sigmoid(gate)


class LayerNorm:
    def __init__(self, dim, name, eps=1e-5):
        self.gain = Tensor(np.ones(dim), requires_grad=True)
        self.bias = Tensor(np.zeros(dim), requires_grad=True)
        self.eps = eps
        self.name = name

    def __call__(self, x):
        return ad.layernorm(x, self.gain, self.bias, eps=self.eps)

    def params(self):
        return {f"{self.name}.gain": self.gain, f"{self.name}.bias": self.bias}


class MLPBlock:
    """linear -> activation -> linear, optional residual connection."""

    def __init__(self, dim, hidden_mult, spec, name, activation="gelu", residual=True,
                 out_dim=None):
        hidden = int(dim * hidden_mult)
        out_dim = dim if out_dim is None else out_dim
        self.activation = activation
        self.residual = residual and out_dim == dim
        if activation == "glu":
            self.fc1 = Linear(dim, 2 * hidden, spec, f"{name}.fc1")
        elif activation == "gelu":
            self.fc1 = Linear(dim, hidden, spec, f"{name}.fc1")
        else:
            raise ValueError(f"unknown activation {activation!r}")
        self.fc2 = Linear(hidden, out_dim, spec, f"{name}.fc2")

    def __call__(self, x):
        h = self.fc1(x)
        h = glu(h) if self.activation == "glu" else ad.gelu(h)
        out = self.fc2(h)
        return x + out if self.residual else out

    def params(self):
        return {**self.fc1.params(), **self.fc2.params()}


class MultiHeadAttention:
    """Masked multi-head attention over batched sequences.

    q_in: [B, Tq, d], kv_in: [B, Tk, d]; mask, when given, is a boolean
    [Tq, Tk] matrix shared across the batch (True = attend allowed). Masked
    positions receive an additive -1e30 before the max-subtracted softmax,
    which normalizes to exactly zero weight in binary64.
    """

    def __init__(self, dim, head_count, spec, name):
        if dim % head_count != 0:
            raise ValueError(f"model dim {dim} not divisible by head count {head_count}")
        self.dim = dim
        self.head_count = head_count
        self.head_dim = dim // head_count
        self.wq = Linear(dim, dim, spec, f"{name}.wq")
        self.wk = Linear(dim, dim, spec, f"{name}.wk")
        self.wv = Linear(dim, dim, spec, f"{name}.wv")
        self.wo = Linear(dim, dim, spec, f"{name}.wo")
        self.name = name

    def _split_heads(self, x, b, t):
        # [B, T, d] -> [B, H, T, hd]
        x = ad.reshape(x, (b, t, self.head_count, self.head_dim))
        return ad.swapaxes(x, 1, 2)

    def __call__(self, q_in, kv_in, mask=None, return_weights=False):
        b, tq, d = q_in.shape
        tk = kv_in.shape[1]
        if kv_in.shape[0] != b or kv_in.shape[2] != d or d != self.dim:
            raise ValueError(
                f"attention {self.name}: incompatible shapes {q_in.shape} vs {kv_in.shape}"
            )
        if mask is not None:
            mask = np.asarray(mask, dtype=bool)
            if mask.shape != (tq, tk):
                raise ValueError(
                    f"attention {self.name}: mask shape {mask.shape} != ({tq}, {tk})"
                )
            dead = ~mask.any(axis=1)
            if dead.any():
                row = int(np.argmax(dead))
                raise ValueError(
                    f"attention {self.name}: query row {row} has every key masked"
                )
        q = self._split_heads(self.wq(q_in), b, tq)
        k = self._split_heads(self.wk(kv_in), b, tk)
        v = self._split_heads(self.wv(kv_in), b, tk)
        scores = ad.matmul(q, ad.swapaxes(k, 2, 3)) * (1.0 / np.sqrt(self.head_dim))
        if mask is not None:
            bias = np.where(mask, 0.0, MASK_NEG)
            scores = scores + Tensor(bias)
        weights = ad.softmax(scores, axis=-1)  # [B, H, Tq, Tk]
        ctx = ad.matmul(weights, v)
        ctx = ad.swapaxes(ctx, 1, 2)
        ctx = ad.reshape(ctx, (b, tq, d))
        out = self.wo(ctx)
        if return_weights:
            return out, weights
        return out

    def params(self):
        return {**self.wq.params(), **self.wk.params(),
                **self.wv.params(), **self.wo.params()}


def collect_params(*modules):
    out = {}
    for m in modules:
        for name, p in m.params().items():
            if name in out:
                raise ValueError(f"duplicate parameter name {name!r}")
            out[name] = p
    return out
