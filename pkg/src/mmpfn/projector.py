"""Modality projector: multi-head gated expansion of a pooled embedding into
tabular-compatible tokens, cross-attention pooling down to a balanced token
set, the ablation variants, fusion, and the head-orthogonality metric.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .layers import InitSpec, Linear, MLPBlock, MultiHeadAttention, glu, collect_params


@dataclass(frozen=True)
class ProjectorVariant:
    tag: str  # linear | mlp | multihead_mlp | mgm
    n_heads: int = 1
    cap_enabled: bool = False
    cap_queries: int = 1

    def __post_init__(self):
        if self.tag not in ("linear", "mlp", "multihead_mlp", "mgm"):
            raise ValueError(f"unknown projector variant {self.tag!r}")
        if self.tag in ("linear", "mlp") and self.n_heads != 1:
            raise ValueError(f"{self.tag} variant forces a single head")
        if self.cap_enabled and self.n_heads < self.cap_queries:
            raise ValueError(
                f"cross-attention pooling needs n_heads >= cap_queries "
                f"({self.n_heads} < {self.cap_queries})"
            )


class MGM:
    """N parallel MLP heads (encoder_dim -> hidden -> 2d), each gated by a GLU
    down to d. Heads have independent parameters; hidden = 2 * encoder_dim."""

    def __init__(self, encoder_dim, dim, n_heads, spec, name, gated=True):
        if n_heads < 1:
            raise ValueError("MGM needs at least one head")
        self.encoder_dim = encoder_dim
        self.dim = dim
        self.n_heads = n_heads
        self.gated = gated
        hidden = 2 * encoder_dim
        self.hidden = hidden
        out = 2 * dim if gated else dim
        # head weights stacked: [N, hidden, encoder_dim] and [N, out, hidden]
        self.w1 = _stacked(spec, (n_heads, hidden, encoder_dim), f"{name}.w1",
                           fan_in=encoder_dim)
        self.b1 = Tensor(np.zeros((n_heads, 1, hidden)), requires_grad=True)
        self.w2 = _stacked(spec, (n_heads, out, hidden), f"{name}.w2", fan_in=hidden)
        self.b2 = Tensor(np.zeros((n_heads, 1, out)), requires_grad=True)
        self.name = name

    def __call__(self, cls):
        """cls: [n, encoder_dim] -> tokens [n, N, d]."""
        if cls.shape[-1] != self.encoder_dim:
            raise ValueError(
                f"{self.name}: encoder dim {cls.shape[-1]} != {self.encoder_dim}"
            )
        n = cls.shape[0]
        x = ad.expand_leading(cls, self.n_heads)  # [N, n, e]
        h = ad.matmul(x, ad.swapaxes(self.w1, 1, 2)) + self.b1  # [N, n, hidden]
        h = ad.gelu(h)
        out = ad.matmul(h, ad.swapaxes(self.w2, 1, 2)) + self.b2  # [N, n, out]
        if self.gated:
            out = glu(out)
        return ad.swapaxes(out, 0, 1)  # [n, N, d]

    def params(self):
        return {f"{self.name}.w1": self.w1, f"{self.name}.b1": self.b1,
                f"{self.name}.w2": self.w2, f"{self.name}.b2": self.b2}

    def head_param_names(self):
        return list(self.params())


def _stacked(spec, shape, name, fan_in):
    from .layers import init_params

    return init_params(spec, shape, name=name, fan_in=fan_in)


class CAP:
    """K learnable query vectors cross-attend over the projected tokens,
    yielding K pooled tokens, each refined by an MLP (residual by default)."""

    def __init__(self, dim, n_queries, spec, name, head_count=1, residual=True):
        if n_queries < 1:
            raise ValueError("CAP needs at least one query")
        from .layers import init_params

        self.dim = dim
        self.n_queries = n_queries
        self.queries = init_params(spec, (n_queries, dim), name=f"{name}.queries")
        self.attn = MultiHeadAttention(dim, head_count, spec, f"{name}.attn")
        self.mlp = MLPBlock(dim, 2, spec, f"{name}.mlp", residual=residual)
        self.name = name

    def __call__(self, tokens, return_pre_mlp=False):
        """tokens: [n, N, d] -> [n, K, d]."""
        n, n_tok, d = tokens.shape
        if n_tok < 1:
            raise ValueError(f"{self.name}: empty key set")
        q = ad.expand_leading(self.queries, n)  # [n, K, d]
        pooled = self.attn(q, tokens)
        refined = self.mlp(pooled)
        if return_pre_mlp:
            return refined, pooled
        return refined

    def params(self):
        return {f"{self.name}.queries": self.queries,
                **self.attn.params(), **self.mlp.params()}


class ModalityProjector:
    """Dispatches one of the ablation variants for a single modality."""

    def __init__(self, encoder_dim, dim, variant, seed, name):
        spec = InitSpec(seed=seed)
        self.variant = variant
        self.name = name
        self.mgm = None
        self.cap = None
        self.single = None
        if variant.tag == "linear":
            self.single = Linear(encoder_dim, dim, spec, f"{name}.linear")
        elif variant.tag == "mlp":
            self.single = _SingleMLP(encoder_dim, dim, spec, f"{name}.mlp")
        elif variant.tag == "multihead_mlp":
            self.mgm = MGM(encoder_dim, dim, variant.n_heads, spec,
                           f"{name}.heads", gated=False)
        else:  # mgm
            self.mgm = MGM(encoder_dim, dim, variant.n_heads, spec,
                           f"{name}.heads", gated=True)
        if variant.cap_enabled:
            self.cap = CAP(dim, variant.cap_queries, spec, f"{name}.cap")

    def __call__(self, cls):
        """cls: [n, encoder_dim] -> tokens [n, n_tokens, d]."""
        if self.single is not None:
            out = self.single(cls)
            tokens = ad.reshape(out, (cls.shape[0], 1, out.shape[-1]))
        else:
            tokens = self.mgm(cls)
        if self.cap is not None:
            tokens = self.cap(tokens)
        return tokens

    @property
    def n_tokens(self):
        if self.cap is not None:
            return self.variant.cap_queries
        return self.variant.n_heads

    def params(self):
        out = {}
        for m in (self.single, self.mgm, self.cap):
            if m is not None:
                out.update(m.params())
        return out


class _SingleMLP:
    """encoder_dim -> 2*encoder_dim -> d with GELU (single-head MLP variant)."""

    def __init__(self, encoder_dim, dim, spec, name):
        self.fc1 = Linear(encoder_dim, 2 * encoder_dim, spec, f"{name}.fc1")
        self.fc2 = Linear(2 * encoder_dim, dim, spec, f"{name}.fc2")

    def __call__(self, x):
        return self.fc2(ad.gelu(self.fc1(x)))

    def params(self):
        return collect_params(self.fc1, self.fc2)


def fuse_tokens(tabular, modality_tokens):
    """Concatenate [n, f_T, d] tabular tokens with per-modality [n, f_m, d]
    token blocks along the feature axis. Returns (fused, partition) where
    partition maps modality name -> feature-column indices."""
    n = tabular.shape[0]
    parts = [tabular]
    partition = {"tabular": list(range(tabular.shape[1]))}
    offset = tabular.shape[1]
    for name, tok in modality_tokens:
        if tok.shape[0] != n:
            raise ValueError(
                f"modality {name!r}: sample count {tok.shape[0]} != tabular {n}"
            )
        parts.append(tok)
        partition[name] = list(range(offset, offset + tok.shape[1]))
        offset += tok.shape[1]
    fused = ad.concatenate(parts, axis=1) if len(parts) > 1 else tabular
    return fused, partition


def orthogonality_metric(head_outputs):
    """Mean over samples of the mean over unordered head pairs of
    (1 - |cosine similarity|). head_outputs: array [n, N, d]; zero-vector
    heads contribute similarity 0 for their pairs."""
    x = head_outputs.data if isinstance(head_outputs, Tensor) else np.asarray(head_outputs)
    n, N, d = x.shape
    if N < 2:
        raise ValueError("orthogonality metric needs at least two heads")
    norms = np.linalg.norm(x, axis=-1)  # [n, N]
    safe = np.where(norms > 0, norms, 1.0)
    unit = x / safe[..., None]
    gram = np.abs(unit @ np.swapaxes(unit, 1, 2))  # [n, N, N]
    zero = norms == 0
    pair_zero = zero[:, :, None] | zero[:, None, :]
    gram = np.where(pair_zero, 0.0, gram)
    iu = np.triu_indices(N, k=1)
    pair_vals = 1.0 - gram[:, iu[0], iu[1]]
    return float(pair_vals.mean())
