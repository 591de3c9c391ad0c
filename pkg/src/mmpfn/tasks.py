"""Synthetic multimodal task builders used by the reference configs, the
imbalance sweeps, and the end-to-end tests.

Each builder returns a MultimodalDataset whose tabular tokens are produced by
a frozen TabularEncoder and whose non-tabular modalities are synthetic
embedding sets hiding a recoverable latent.
"""

from __future__ import annotations

import numpy as np

from .encoders import TabularEncoder, synthetic_embedding_provider
from .layers import _philox
from .model import MultimodalDataset


def xor_task(seed, n_train=96, n_test=48, n_noise_features=3, embed_dim=16,
             noise_scale=0.1, dim=16, encoder_seed=0, n_distractors=3):
    """Label = tabular bit XOR embedding latent bit.

    The tabular view carries one informative bit plus noise columns; the
    second bit exists only in the synthetic embedding, so tabular-only
    accuracy is chance and the full pipeline must extract the latent. The
    embedding also carries `n_distractors` label-irrelevant latent factors,
    mirroring the incidental content a pooled foundation-encoder vector
    holds alongside the predictive signal.
    """
    rng = _philox(seed, "xor_task")
    n = n_train + n_test
    b_tab = rng.integers(0, 2, size=n)
    b_lat = rng.integers(0, 2, size=n)
    labels = np.bitwise_xor(b_tab, b_lat)
    x = np.concatenate(
        [b_tab[:, None].astype(float), rng.normal(size=(n, n_noise_features))],
        axis=1,
    )
    encoder = TabularEncoder(dim, seed=encoder_seed)
    tab_tokens = encoder.encode_numeric_matrix(x, n_train)
    latent = np.concatenate(
        [b_lat[:, None].astype(float), rng.normal(size=(n, n_distractors))],
        axis=1,
    )
    eset = synthetic_embedding_provider(
        latent, embed_dim, noise_scale=noise_scale,
        seed=seed + 7, modality="image",
    )
    ds = MultimodalDataset(
        tabular_tokens=tab_tokens,
        embeddings={"image": eset.vectors.data},
        labels=labels,
        n_train=n_train,
        n_classes=2,
        modality_order=["image"],
    )
    return ds, encoder


def tabular_only_view(dataset):
    """The same task with the non-tabular modalities dropped."""
    return MultimodalDataset(
        tabular_tokens=dataset.tabular_tokens,
        embeddings={},
        labels=dataset.labels,
        n_train=dataset.n_train,
        n_classes=dataset.n_classes,
        modality_order=[],
    )


def three_signal_task(seed, n_train=128, n_test=64, embed_dim=16,
                      noise_scale=0.1, dim=16, encoder_seed=0,
                      modalities=("image", "text")):
    """Independent informative bits in the tabular, image, and text views.

    The 8-class label is the concatenation of the three bits, so each added
    modality strictly increases the resolvable label information:
    T alone ~0.25, T+one modality ~0.5, all three ~1.0.
    """
    rng = _philox(seed, "three_signal_task")
    n = n_train + n_test
    b_tab = rng.integers(0, 2, size=n)
    b_img = rng.integers(0, 2, size=n)
    b_txt = rng.integers(0, 2, size=n)
    labels = b_tab * 4 + b_img * 2 + b_txt
    x = np.concatenate(
        [b_tab[:, None].astype(float), rng.normal(size=(n, 3))], axis=1
    )
    encoder = TabularEncoder(dim, seed=encoder_seed)
    tab_tokens = encoder.encode_numeric_matrix(x, n_train)
    embeddings = {}
    latents = {"image": b_img, "text": b_txt}
    for name in modalities:
        eset = synthetic_embedding_provider(
            latents[name].astype(float), embed_dim, noise_scale=noise_scale,
            seed=seed + {"image": 11, "text": 13}[name], modality=name,
        )
        embeddings[name] = eset.vectors.data
    ds = MultimodalDataset(
        tabular_tokens=tab_tokens,
        embeddings=embeddings,
        labels=labels,
        n_train=n_train,
        n_classes=8,
        modality_order=list(modalities),
    )
    return ds, encoder


def imbalance_task(seed, n_train=96, n_test=48, n_tabular_features=8,
                   embed_dim=16, noise_scale=0.1, dim=16, encoder_seed=0,
                   n_distractors=2):
    """Reference task for the token-ratio sweeps.

    The label is the quartile bucket of the sum of a tabular latent value and
    an embedding latent value, so accuracy needs *graded* precision from both
    views: starving the tabular tokens of attention (many non-tabular tokens)
    blurs the tabular half of the sum, and starving or over-squeezing the
    non-tabular side blurs the other half. Accuracy therefore degrades
    smoothly as the token ratio leaves parity, in either direction."""
    rng = _philox(seed, "imbalance_task")
    n = n_train + n_test
    z_tab = rng.normal(size=n)
    z_lat = rng.normal(size=n)
    total = z_tab + z_lat
    labels = np.digitize(total, np.quantile(total, [0.25, 0.5, 0.75]))
    x = np.concatenate(
        [z_tab[:, None], rng.normal(size=(n, n_tabular_features - 1))],
        axis=1,
    )
    encoder = TabularEncoder(dim, seed=encoder_seed)
    tab_tokens = encoder.encode_numeric_matrix(x, n_train)
    latent = np.concatenate(
        [z_lat[:, None], rng.normal(size=(n, n_distractors))],
        axis=1,
    )
    eset = synthetic_embedding_provider(
        latent, embed_dim, noise_scale=noise_scale,
        seed=seed + 7, modality="image",
    )
    ds = MultimodalDataset(
        tabular_tokens=tab_tokens,
        embeddings={"image": eset.vectors.data},
        labels=labels,
        n_train=n_train,
        n_classes=4,
        modality_order=["image"],
    )
    return ds, encoder
