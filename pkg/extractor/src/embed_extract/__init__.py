"""Offline extraction of frozen image/text embeddings into MMPE files."""

from .encoders import (ReferenceImageEncoder, ReferenceTextEncoder,
                       get_encoder, register_encoder,
                       resize_to_patch_multiple)
from .extract import (ExtractJob, ExtractReport, extract_image_embeddings,
                      extract_text_embeddings, run_job)
from .mmpe import write_embeddings

__all__ = [
    "ExtractJob", "ExtractReport", "ReferenceImageEncoder",
    "ReferenceTextEncoder", "extract_image_embeddings",
    "extract_text_embeddings", "get_encoder", "register_encoder",
    "resize_to_patch_multiple", "run_job", "write_embeddings",
]

__version__ = "0.1.0"
