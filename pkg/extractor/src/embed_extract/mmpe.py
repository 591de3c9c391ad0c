"""Writer for the MMPE embedding-file format.

Layout: magic ``MMPE``; version u32; dtype code u8 (0 = IEEE-754 binary32
little-endian); dim u32; count u64; modality-name length u16 + UTF-8 bytes;
fingerprint length u16 + UTF-8 bytes; then the row-major payload.
"""

from __future__ import annotations

import struct

import numpy as np

MMPE_MAGIC = b"MMPE"
MMPE_VERSION = 1
DTYPE_F32 = 0


def write_embeddings(path, vectors, modality, fingerprint):
    """Write [n, dim] vectors as binary32 little-endian MMPE."""
    vectors = np.asarray(vectors, dtype=np.float64)
    if vectors.ndim != 2:
        raise ValueError(f"expected [n, dim] vectors, got shape {vectors.shape}")
    if not np.isfinite(vectors).all():
        raise ValueError("refusing to write non-finite embedding values")
    count, dim = vectors.shape
    name_b = modality.encode("utf-8")
    fp_b = fingerprint.encode("utf-8")
    with open(path, "wb") as f:
        f.write(MMPE_MAGIC)
        f.write(struct.pack("<I", MMPE_VERSION))
        f.write(struct.pack("<B", DTYPE_F32))
        f.write(struct.pack("<I", dim))
        f.write(struct.pack("<Q", count))
        f.write(struct.pack("<H", len(name_b)))
        f.write(name_b)
        f.write(struct.pack("<H", len(fp_b)))
        f.write(fp_b)
        f.write(np.ascontiguousarray(vectors, dtype="<f4").tobytes())
