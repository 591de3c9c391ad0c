"""Multimodal in-context tabular transformer with gated multi-head projection,
cross-attention pooling, and an attention-imbalance laboratory."""

from .autodiff import Tensor, backward, grad_check
from .backbone import PFNBackbone, build_incontext_mask
from .model import MMPFN, MultimodalDataset
from .projector import MGM, CAP, ModalityProjector, ProjectorVariant
from .training import FineTuneConfig, fine_tune

__all__ = [
    "Tensor", "backward", "grad_check",
    "PFNBackbone", "build_incontext_mask",
    "MMPFN", "MultimodalDataset",
    "MGM", "CAP", "ModalityProjector", "ProjectorVariant",
    "FineTuneConfig", "fine_tune",
]

__version__ = "0.1.0"
