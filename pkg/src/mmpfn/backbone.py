"""In-context tabular transformer: cell embedding with label tokens, stacked
two-stage blocks (feature attention, then masked sample attention), and an
MLP decoder head.

The grid is a [n_samples, n_features + 1, d] tensor; the last column is the
label token. Train rows carry a learned per-class embedding there, test rows a
learned shared placeholder. Sample attention is masked so every row attends
only to train rows; test rows are never attended to by anyone.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .layers import InitSpec, LayerNorm, Linear, MLPBlock, MultiHeadAttention, collect_params


def build_incontext_mask(n_train, n_test):
    """Boolean [n, n] matrix: every row may attend to all train columns and to
    no test column."""
    if n_train < 1:
        raise ValueError("build_incontext_mask: n_train must be >= 1 (no context otherwise)")
    n = n_train + n_test
    mask = np.zeros((n, n), dtype=bool)
    mask[:, :n_train] = True
    return mask


class PFNBlock:
    """Feature attention within each sample, then masked sample attention
    within each feature column; pre-layernorm, residual, MLP after each stage."""

    def __init__(self, dim, head_count, hidden_mult, spec, name):
        self.feat_ln = LayerNorm(dim, f"{name}.feat_ln")
        self.feat_attn = MultiHeadAttention(dim, head_count, spec, f"{name}.feat_attn")
        self.feat_mlp_ln = LayerNorm(dim, f"{name}.feat_mlp_ln")
        self.feat_mlp = MLPBlock(dim, hidden_mult, spec, f"{name}.feat_mlp", residual=False)
        self.samp_ln = LayerNorm(dim, f"{name}.samp_ln")
        self.samp_attn = MultiHeadAttention(dim, head_count, spec, f"{name}.samp_attn")
        self.samp_mlp_ln = LayerNorm(dim, f"{name}.samp_mlp_ln")
        self.samp_mlp = MLPBlock(dim, hidden_mult, spec, f"{name}.samp_mlp", residual=False)

    def __call__(self, grid, mask, collect=None):
        # stage 1: features attend within each sample (batch = samples)
        h = self.feat_ln(grid)
        if collect is not None:
            attn_out, weights = self.feat_attn(h, h, return_weights=True)
            collect.append(weights.data.copy())
        else:
            attn_out = self.feat_attn(h, h)
        grid = grid + attn_out
        grid = grid + self.feat_mlp(self.feat_mlp_ln(grid))
        # stage 2: samples attend within each feature column (batch = columns)
        cols = ad.swapaxes(grid, 0, 1)
        h = self.samp_ln(cols)
        attn_out = self.samp_attn(h, h, mask=mask)
        cols = cols + attn_out
        cols = cols + self.samp_mlp(self.samp_mlp_ln(cols))
        return ad.swapaxes(cols, 0, 1)

    def params(self):
        return collect_params(
            self.feat_ln, self.feat_attn, self.feat_mlp_ln, self.feat_mlp,
            self.samp_ln, self.samp_attn, self.samp_mlp_ln, self.samp_mlp,
        )


class PFNBackbone:
    """Stack of PFN blocks plus label-token embeddings and the decoder head."""

    def __init__(self, dim=64, head_count=4, block_count=3, hidden_mult=2,
                 n_classes=10, seed=0):
        spec = InitSpec(seed=seed)
        self.dim = dim
        self.n_classes = n_classes
        self.blocks = [
            PFNBlock(dim, head_count, hidden_mult, spec, f"backbone.block{i}")
            for i in range(block_count)
        ]
        self.label_embed = Linear(n_classes, dim, spec, "backbone.label_embed")
        self.placeholder = ad.Tensor(
            np.zeros(dim), requires_grad=True
        )  # learned test-row label token
        self.final_ln = LayerNorm(dim, "backbone.final_ln")
        self.decoder = MLPBlock(dim, hidden_mult, spec, "backbone.decoder",
                                residual=False, out_dim=n_classes)

    # -- cell embedding ----------------------------------------------------
    def embed_cells(self, table, train_labels, n_train):
        """Append the label-token column to a [n, f, d] feature-token table.

        `train_labels` are class indices for the first n_train rows; test rows
        get the shared placeholder embedding.
        """
        n, f, d = table.shape
        labels = np.asarray(train_labels, dtype=np.intp)
        if labels.shape != (n_train,):
            raise ValueError(f"expected {n_train} train labels, got {labels.shape}")
        if labels.size and (labels.min() < 0 or labels.max() >= self.n_classes):
            raise ValueError(
                f"label out of range [0, {self.n_classes}): {labels.min()}..{labels.max()}"
            )
        onehot = np.zeros((n, self.n_classes))
        onehot[np.arange(n_train), labels] = 1.0
        # train rows: class embedding; test rows: zero one-hot -> bias only
        label_tok = self.label_embed(Tensor(onehot))  # [n, d]
        is_test = np.zeros((n, 1))
        is_test[n_train:] = 1.0
        label_tok = label_tok + Tensor(is_test) * self.placeholder
        label_col = ad.reshape(label_tok, (n, 1, d))
        return ad.concatenate([table, label_col], axis=1)

    # -- forward -----------------------------------------------------------
    def forward_grid(self, grid, mask, collect_attention=None):
        for i, block in enumerate(self.blocks):
            coll = None
            if collect_attention is not None:
                coll = collect_attention.setdefault(i, [])
            grid = block(grid, mask, collect=coll)
        return grid

    def decode(self, grid, n_train):
        """Logits for the test rows from their label-token embeddings."""
        n = grid.shape[0]
        n_test = n - n_train
        if n_test < 1:
            raise ValueError("decode: no test rows present")
        test_tok = grid[n_train:, -1, :]  # [n_test, d]
        return self.decoder(self.final_ln(test_tok))

    def predict_logits(self, table, train_labels, n_train, collect_attention=None):
        n = table.shape[0]
        grid = self.embed_cells(table, train_labels, n_train)
        mask = build_incontext_mask(n_train, n - n_train)
        grid = self.forward_grid(grid, mask, collect_attention=collect_attention)
        return self.decode(grid, n_train)

    def params(self):
        out = {}
        for b in self.blocks:
            out.update(b.params())
        out.update(self.label_embed.params())
        out["backbone.placeholder"] = self.placeholder
        out.update(self.final_ln.params())
        out.update(self.decoder.params())
        return out

    def backbone_param_names(self):
        """Names of block/label parameters (the 'backbone' trainable group)."""
        return [n for n in self.params() if not n.startswith("backbone.decoder")]

    def decoder_param_names(self):
        return [n for n in self.params() if n.startswith("backbone.decoder")]


def softmax_probabilities(logits):
    return ad.softmax(logits, axis=-1)


def attention_mass_probe(backbone, table, train_labels, n_train, partition,
                         block_index=0):
    """Empirical per-modality attention mass from the stage-1 (feature)
    attention of one block.

    `partition` maps modality name -> list of feature-column indices; it must
    cover every feature column exactly once. The label token's mass is
    reported under 'label'. Returns means over samples, heads and queries.
    """
    n, f, d = table.shape
    seen = np.zeros(f, dtype=int)
    for cols in partition.values():
        for c in cols:
            if c < 0 or c >= f:
                raise ValueError(f"partition column {c} out of range [0, {f})")
            seen[c] += 1
    if (seen > 1).any():
        raise ValueError("partition cells overlap")
    if (seen == 0).any():
        raise ValueError("partition does not cover every feature column")
    collected = {}
    backbone.predict_logits(table, train_labels, n_train, collect_attention=collected)
    weights = collected[block_index][0]  # [n, H, f+1, f+1]
    mass = {}
    for name, cols in partition.items():
        mass[name] = float(weights[..., list(cols)].sum(axis=-1).mean())
    mass["label"] = float(weights[..., f].mean())
    return mass
