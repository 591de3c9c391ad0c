"""Full pipeline: frozen tabular encoder + per-modality projectors + in-context
backbone + decoder, with the trainable/frozen split used by fine-tuning.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .backbone import PFNBackbone, attention_mass_probe
from .checkpoint import params_digest
from .encoders import TabularEncoder
from .projector import ModalityProjector, ProjectorVariant, fuse_tokens


@dataclass
class MultimodalDataset:
    """Tabular tokens (already encoded, frozen) plus raw per-modality pooled
    embeddings, labels, and the train/test split point. Rows [0, n_train) are
    train, the rest test."""

    tabular_tokens: Tensor  # [n, f_T, d]
    embeddings: dict  # modality name -> np.ndarray [n, encoder_dim]
    labels: np.ndarray  # [n] class indices
    n_train: int
    n_classes: int
    modality_order: list = field(default_factory=list)

    def __post_init__(self):
        if not self.modality_order:
            self.modality_order = sorted(self.embeddings)
        self.labels = np.asarray(self.labels, dtype=np.intp)

    @property
    def n_samples(self):
        return self.tabular_tokens.shape[0]

    @property
    def n_tabular_features(self):
        return self.tabular_tokens.shape[1]


class MMPFN:
    """One projector per modality (independent parameters) feeding the shared
    backbone. Encoders are frozen; projector/backbone/decoder are trainable."""

    def __init__(self, dim, n_classes, projector_variants, embedding_dims,
                 backbone_kwargs=None, encoder=None, seed=0):
        backbone_kwargs = dict(backbone_kwargs or {})
        self.backbone = PFNBackbone(dim=dim, n_classes=n_classes, seed=seed,
                                    **backbone_kwargs)
        self.encoder = encoder if encoder is not None else TabularEncoder(dim, seed=seed)
        self.projectors = {}
        for name, variant in projector_variants.items():
            self.projectors[name] = ModalityProjector(
                embedding_dims[name], dim, variant, seed=seed + 1000,
                name=f"projector.{name}",
            )

    # ------------------------------------------------------------------
    def _fused_rows(self, dataset, rows):
        tab = Tensor(dataset.tabular_tokens.data[rows])  # frozen constant
        modality_tokens = []
        for name in dataset.modality_order:
            if name not in self.projectors:
                raise ValueError(f"no projector configured for modality {name!r}")
            cls = Tensor(dataset.embeddings[name][rows])
            modality_tokens.append((name, self.projectors[name](cls)))
        return fuse_tokens(tab, modality_tokens)

    def forward(self, dataset, context_idx, query_idx, collect_attention=None):
        """Logits for query rows given context rows (in-context inference)."""
        rows = np.concatenate([context_idx, query_idx])
        fused, _ = self._fused_rows(dataset, rows)
        return self.backbone.predict_logits(
            fused, dataset.labels[context_idx], len(context_idx),
            collect_attention=collect_attention,
        )

    def attention_mass(self, dataset, context_idx, query_idx, block_index=0):
        rows = np.concatenate([context_idx, query_idx])
        fused, partition = self._fused_rows(dataset, rows)
        return attention_mass_probe(
            self.backbone, fused, dataset.labels[context_idx], len(context_idx),
            partition, block_index=block_index,
        )

    def block_outputs(self, dataset, context_idx, query_idx):
        """Per-block grids [n, f+1, d] for the similarity analysis."""
        from .backbone import build_incontext_mask

        rows = np.concatenate([context_idx, query_idx])
        fused, partition = self._fused_rows(dataset, rows)
        grid = self.backbone.embed_cells(fused, dataset.labels[context_idx],
                                         len(context_idx))
        mask = build_incontext_mask(len(context_idx), len(query_idx))
        outs = []
        for block in self.backbone.blocks:
            grid = block(grid, mask)
            outs.append(grid.data.copy())
        return outs, partition

    # ------------------------------------------------------------------
    def trainable_params(self):
        out = dict(self.backbone.params())
        for proj in self.projectors.values():
            out.update(proj.params())
        return out

    def frozen_params(self):
        return self.encoder.params()

    def frozen_digest(self):
        return params_digest(self.frozen_params())

    def assert_frozen_clean(self):
        for name, t in self.frozen_params().items():
            if t.grad is not None and np.any(t.grad):
                raise RuntimeError(f"gradient reached frozen parameter {name!r}")

    def all_params(self):
        return self.trainable_params()
