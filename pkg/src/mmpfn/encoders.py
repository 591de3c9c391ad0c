"""Per-modality token inputs.

Three pieces live here: a frozen per-feature tabular encoder whose parameters
are derived deterministically from a seed (so it handles any table width and
the freeze contract is trivial to audit), a loader/writer for the MMPE binary
embedding file format, and a synthetic embedding generator used as a stand-in
for real foundation-encoder outputs in tests.
"""

from __future__ import annotations

import logging
import struct
from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tensor
from .layers import _philox

log = logging.getLogger(__name__)

MMPE_MAGIC = b"MMPE"
MMPE_VERSION = 1
DTYPE_F32 = 0


# ---------------------------------------------------------------------------
# column specs and the frozen tabular encoder


@dataclass
class ColumnSpec:
    name: str
    kind: str  # "numeric" | "categorical"
    categories: list = field(default_factory=list)

    def __post_init__(self):
        if self.kind not in ("numeric", "categorical"):
            raise ValueError(f"column {self.name!r}: unknown kind {self.kind!r}")
        if self.kind == "categorical" and not self.categories:
            raise ValueError(f"categorical column {self.name!r} needs a vocabulary")


class TabularEncoder:
    """Frozen per-feature encoder: numerics are z-scored by train-split
    statistics and lifted to d via a per-feature affine map; categoricals are
    looked up in per-column embedding tables; missing values map to a
    dedicated per-column missing token. All parameters are deterministic
    functions of (seed, column index) and never receive gradients.
    """

    def __init__(self, dim, seed=0, max_vocab=64):
        self.dim = dim
        self.seed = seed
        self.max_vocab = max_vocab
        self._cache = {}

    # frozen parameter streams ------------------------------------------------
    def _feature_map(self, col_index):
        key = ("affine", col_index)
        if key not in self._cache:
            rng = _philox(self.seed, f"tab_encoder.col{col_index}")
            scale = 1.0 / np.sqrt(self.dim)
            w = rng.uniform(-1.0, 1.0, size=self.dim) * scale
            b = rng.uniform(-1.0, 1.0, size=self.dim) * scale
            miss = rng.uniform(-1.0, 1.0, size=self.dim) * scale
            self._cache[key] = (w, b, miss)
        return self._cache[key]

    def _category_table(self, col_index, vocab_size):
        key = ("embed", col_index, vocab_size)
        if key not in self._cache:
            rng = _philox(self.seed, f"tab_encoder.col{col_index}.vocab")
            self._cache[key] = rng.uniform(-1.0, 1.0, size=(vocab_size, self.dim)) / np.sqrt(self.dim)
        return self._cache[key]

    # encoding ----------------------------------------------------------------
    def encode_numeric_matrix(self, values, train_count):
        """Encode an all-numeric [n, f] array (NaN = missing) into [n, f, d]
        tokens, z-scoring each column by the statistics of its first
        `train_count` rows."""
        values = np.asarray(values, dtype=np.float64)
        n, f = values.shape
        out = np.zeros((n, f, self.dim))
        for j in range(f):
            w, b, miss = self._feature_map(j)
            col = values[:, j]
            train = col[:train_count]
            finite = train[np.isfinite(train)]
            mu = finite.mean() if finite.size else 0.0
            sd = finite.std() if finite.size else 1.0
            if sd == 0.0:
                sd = 1.0
            z = (col - mu) / sd
            missing = ~np.isfinite(col)
            z = np.where(missing, 0.0, z)
            out[:, j, :] = z[:, None] * w[None, :] + b[None, :]
            if missing.any():
                out[missing, j, :] = miss
        return Tensor(out)

    def encode_table(self, rows, specs, train_count):
        """Encode raw rows (list of dicts or a 2-D object array) per `specs`
        into [n, f, d] tokens. Unseen categories in the train split are
        rejected; at inference they map to the missing token."""
        n = len(rows)
        f = len(specs)
        names = [s.name for s in specs]
        if len(set(names)) != f:
            raise ValueError("column names must be unique")
        out = np.zeros((n, f, self.dim))
        for j, spec in enumerate(specs):
            if spec.kind == "numeric":
                col = np.array(
                    [_to_float(row[spec.name]) for row in rows], dtype=np.float64
                )
                w, b, miss = self._feature_map(j)
                train = col[:train_count]
                finite = train[np.isfinite(train)]
                mu = finite.mean() if finite.size else 0.0
                sd = finite.std() if finite.size else 1.0
                if sd == 0.0:
                    sd = 1.0
                z = np.where(np.isfinite(col), (col - mu) / sd, 0.0)
                out[:, j, :] = z[:, None] * w[None, :] + b[None, :]
                missing = ~np.isfinite(col)
                if missing.any():
                    out[missing, j, :] = miss
            else:
                vocab = list(spec.categories)[: self.max_vocab]
                index = {c: i for i, c in enumerate(vocab)}
                table = self._category_table(j, len(vocab))
                _, _, miss = self._feature_map(j)
                for i, row in enumerate(rows):
                    val = row[spec.name]
                    if val in index:
                        out[i, j, :] = table[index[val]]
                    elif i < train_count and val not in (None, ""):
                        if val in spec.categories:
                            # beyond the vocabulary cap: tail maps to missing
                            out[i, j, :] = miss
                        else:
                            raise ValueError(
                                f"unseen category {val!r} in train split, column {spec.name!r}"
                            )
                    else:
                        if val not in (None, ""):
                            log.warning(
                                "unseen category %r in column %r mapped to missing token",
                                val, spec.name,
                            )
                        out[i, j, :] = miss
        return Tensor(out)

    def params(self):
        """Realized frozen parameters for freeze-contract audits."""
        out = {}
        for key, val in sorted(self._cache.items(), key=lambda kv: repr(kv[0])):
            if key[0] == "affine":
                w, b, miss = val
                out[f"tab_encoder.col{key[1]}.w"] = Tensor(w)
                out[f"tab_encoder.col{key[1]}.b"] = Tensor(b)
                out[f"tab_encoder.col{key[1]}.miss"] = Tensor(miss)
            else:
                out[f"tab_encoder.col{key[1]}.vocab{key[2]}"] = Tensor(val)
        return out


def _to_float(v):
    if v is None or v == "":
        return np.nan
    return float(v)


# ---------------------------------------------------------------------------
# MMPE embedding files


@dataclass
class EmbeddingSet:
    modality: str
    dim: int
    vectors: Tensor  # [n_samples, dim], float64 in-core
    fingerprint: str = ""

    def __post_init__(self):
        if self.vectors.shape != (self.vectors.shape[0], self.dim):
            raise ValueError(
                f"embedding set {self.modality!r}: vectors {self.vectors.shape} vs dim {self.dim}"
            )
        if not np.isfinite(self.vectors.data).all():
            raise ValueError(f"embedding set {self.modality!r} contains non-finite values")

    @property
    def count(self):
        return self.vectors.shape[0]


def write_embedding_file(path, eset):
    """Write an EmbeddingSet as binary32 little-endian in the MMPE format."""
    name_b = eset.modality.encode("utf-8")
    fp_b = eset.fingerprint.encode("utf-8")
    payload = np.ascontiguousarray(eset.vectors.data, dtype="<f4").tobytes()
    with open(path, "wb") as f:
        f.write(MMPE_MAGIC)
        f.write(struct.pack("<I", MMPE_VERSION))
        f.write(struct.pack("<B", DTYPE_F32))
        f.write(struct.pack("<I", eset.dim))
        f.write(struct.pack("<Q", eset.count))
        f.write(struct.pack("<H", len(name_b)))
        f.write(name_b)
        f.write(struct.pack("<H", len(fp_b)))
        f.write(fp_b)
        f.write(payload)


def load_embedding_file(path):
    """Read and validate an MMPE file; widens binary32 payload to float64."""
    with open(path, "rb") as f:
        raw = f.read()
    if raw[:4] != MMPE_MAGIC:
        raise ValueError(f"bad embedding magic {raw[:4]!r} at byte 0 in {path}")
    off = 4
    (version,) = struct.unpack_from("<I", raw, off); off += 4
    if version != MMPE_VERSION:
        raise ValueError(f"unsupported embedding file version {version} at byte 4")
    (dtype_code,) = struct.unpack_from("<B", raw, off); off += 1
    if dtype_code != DTYPE_F32:
        raise ValueError(f"unsupported dtype code {dtype_code} at byte 8")
    (dim,) = struct.unpack_from("<I", raw, off); off += 4
    (count,) = struct.unpack_from("<Q", raw, off); off += 8
    (nlen,) = struct.unpack_from("<H", raw, off); off += 2
    modality = raw[off : off + nlen].decode("utf-8"); off += nlen
    (flen,) = struct.unpack_from("<H", raw, off); off += 2
    fingerprint = raw[off : off + flen].decode("utf-8"); off += flen
    expected = count * dim * 4
    if len(raw) - off != expected:
        raise ValueError(
            f"truncated embedding payload at byte {off}: have {len(raw) - off}, need {expected}"
        )
    vecs = np.frombuffer(raw[off:], dtype="<f4").astype(np.float64).reshape(count, dim)
    return EmbeddingSet(modality=modality, dim=dim, vectors=Tensor(vecs),
                        fingerprint=fingerprint)


# ---------------------------------------------------------------------------
# synthetic embedding provider (test double for frozen foundation encoders)


def synthetic_embedding_provider(latent, dim, noise_scale=0.0, seed=0,
                                 modality="synthetic"):
    """Embed per-sample latent values through a fixed random nonlinear map
    into `dim` dimensions plus Gaussian noise. Deterministic in seed; the map
    is injective on the latent range so the latent stays recoverable."""
    latent = np.asarray(latent, dtype=np.float64)
    if latent.ndim == 1:
        latent = latent[:, None]
    n, L = latent.shape
    if dim < 1:
        raise ValueError("dim must be >= 1")
    rng = _philox(seed, f"synthetic_embedding.{modality}")
    w1 = rng.normal(size=(L, dim))
    b1 = rng.normal(size=dim)
    w2 = rng.normal(size=(L, dim)) * 0.5
    h = np.tanh(latent @ w1 + b1) + latent @ w2  # injective: linear part dominates
    noise = rng.normal(size=(n, dim)) * noise_scale
    return EmbeddingSet(modality=modality, dim=dim, vectors=Tensor(h + noise),
                        fingerprint=f"synthetic:seed={seed}:noise={noise_scale}")
