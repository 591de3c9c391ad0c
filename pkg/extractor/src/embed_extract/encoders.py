"""Frozen reference encoders.

Each encoder is a pure function of its inputs and its identifier string —
no weights files, no global state — so extraction is deterministic and
reruns are byte-identical. The preprocessing contracts (divisible-by-14
image resize, 512-token text truncation, out-of-script character removal)
match what full-size foundation encoders would require, so those can be
registered under new identifiers without touching the extraction pipeline.
"""

from __future__ import annotations

import hashlib

import numpy as np
from PIL import Image

PREPROCESSING_VERSION = "v1"
MAX_TEXT_TOKENS = 512
PATCH = 14


def _rng(encoder_id, name):
    digest = hashlib.sha256(f"{encoder_id}:{name}".encode("utf-8")).digest()
    return np.random.default_rng(int.from_bytes(digest[:8], "little"))


def fingerprint(encoder_id):
    return f"{encoder_id}:pre={PREPROCESSING_VERSION}"


def resize_to_patch_multiple(width, height):
    """Nearest multiples of 14, floored at 14."""
    w = max(PATCH, int(round(width / PATCH)) * PATCH)
    h = max(PATCH, int(round(height / PATCH)) * PATCH)
    return w, h


class ReferenceImageEncoder:
    """Patch statistics pushed through a fixed random projection.

    The image is resized so height and width are multiples of 14, split into
    14x14 patches, and summarized by per-channel moments plus an 8x8
    luminance map; a seeded projection of that summary plays the role of the
    pooled [CLS] vector.
    """

    dim = 32

    def __init__(self, encoder_id):
        self.encoder_id = encoder_id
        rng = _rng(encoder_id, "image_projection")
        # summary vector: 3 channel means + 3 channel stds + 64 luminance cells
        self.w = rng.normal(size=(self.dim, 70)) / np.sqrt(70)
        self.b = rng.normal(size=self.dim) * 0.1

    def preprocess(self, image):
        image = image.convert("RGB")
        w, h = resize_to_patch_multiple(*image.size)
        if (w, h) != image.size:
            image = image.resize((w, h), Image.BILINEAR)
        return np.asarray(image, dtype=np.float64) / 255.0

    def encode(self, image):
        arr = self.preprocess(image)  # [H, W, 3]
        gh, gw = arr.shape[0] // PATCH, arr.shape[1] // PATCH
        patches = arr.reshape(gh, PATCH, gw, PATCH, 3).mean(axis=(1, 3))
        lum = patches.mean(axis=2)  # [gh, gw]
        lum8 = np.asarray(
            Image.fromarray(lum.astype(np.float32), mode="F").resize(
                (8, 8), Image.BILINEAR),
            dtype=np.float64,
        )
        summary = np.concatenate([
            patches.reshape(-1, 3).mean(axis=0),
            patches.reshape(-1, 3).std(axis=0),
            lum8.reshape(-1),
        ])
        return np.tanh(self.w @ summary + self.b)


class ReferenceTextEncoder:
    """Hashed-token bag with positional damping.

    Characters outside the encoder's script (printable ASCII for the
    reference encoder) are removed before tokenization; whitespace
    tokenization; at most 512 tokens contribute. Each token maps to a fixed
    seeded random vector, and the pooled [CLS] analog is the tanh of a
    position-weighted mean pushed through a fixed projection.
    """

    dim = 32

    def __init__(self, encoder_id):
        self.encoder_id = encoder_id
        rng = _rng(encoder_id, "text_projection")
        self.w = rng.normal(size=(self.dim, self.dim)) / np.sqrt(self.dim)
        self.b = rng.normal(size=self.dim) * 0.1

    def strip_out_of_script(self, text):
        return "".join(c for c in text if c == "\n" or 32 <= ord(c) < 127)

    def tokenize(self, text):
        return self.strip_out_of_script(text).split()

    def _token_vector(self, token):
        rng = _rng(self.encoder_id, f"token:{token}")
        return rng.normal(size=self.dim)

    def encode(self, text):
        tokens = self.tokenize(text)[:MAX_TEXT_TOKENS]
        pooled = np.zeros(self.dim)
        if tokens:
            weights = 1.0 / (1.0 + np.arange(len(tokens)))
            for tok, wt in zip(tokens, weights):
                pooled += wt * self._token_vector(tok)
            pooled /= weights.sum()
        return np.tanh(self.w @ pooled + self.b)


_REGISTRY = {
    ("image", "ref-image"): ReferenceImageEncoder,
    ("text", "ref-text"): ReferenceTextEncoder,
}


def get_encoder(modality, encoder_id):
    key = (modality, encoder_id)
    if key not in _REGISTRY:
        known = ", ".join(sorted(i for m, i in _REGISTRY if m == modality))
        raise KeyError(
            f"no {modality} encoder {encoder_id!r} (known: {known})")
    return _REGISTRY[key](encoder_id)


def register_encoder(modality, encoder_id, factory):
    """Plug in an additional encoder; `factory(encoder_id)` must return an
    object with `.dim` and `.encode`."""
    _REGISTRY[(modality, encoder_id)] = factory
