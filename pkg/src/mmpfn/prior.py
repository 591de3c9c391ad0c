"""Synthetic tabular prior: random layered structural-causal tables and the
meta-pretraining loop that teaches the backbone in-context classification.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .layers import _philox
from .training import AdamW, cross_entropy

DEFAULT_PRETRAIN_TASKS = 20_000  # repo constant; arbitrary budget


@dataclass
class PriorConfig:
    feature_range: tuple = (2, 6)
    sample_range: tuple = (32, 64)
    class_range: tuple = (2, 4)
    depth_range: tuple = (1, 3)  # hidden DAG layers
    width_range: tuple = (3, 8)  # nodes per layer, total capped at 16
    noise_range: tuple = (0.05, 0.4)
    train_fraction: float = 0.7
    seed: int = 0
    retry_bound: int = 20
    # mixture weights for the non-default task families
    parity_fraction: float = 0.15  # label = XOR of two hidden bits
    interaction_fraction: float = 0.25  # DAG with product/abs nodes

    def __post_init__(self):
        for name in ("feature_range", "sample_range", "class_range",
                     "depth_range", "width_range", "noise_range"):
            lo, hi = getattr(self, name)
            if lo > hi:
                raise ValueError(f"{name} is empty: {lo}..{hi}")
        if self.feature_range[0] < 1 or self.sample_range[0] < 1:
            raise ValueError("feature and sample minima must be >= 1")
        if self.class_range[0] < 2:
            raise ValueError("class count must be >= 2")


@dataclass
class SyntheticTask:
    x: np.ndarray  # [n, f] standardized features
    y: np.ndarray  # [n] class indices
    n_train: int
    n_classes: int


_ACTIVATIONS = ("identity", "tanh", "step", "abs")


def _apply_activation(name, v):
    if name == "identity":
        return v
    if name == "tanh":
        return np.tanh(v)
    if name == "abs":
        return np.abs(v)
    return np.where(v > 0, 1.0, -1.0)  # step


def _standardize(col):
    sd = col.std()
    return (col - col.mean()) / (sd if sd > 0 else 1.0)


def _draw_parity(rng, cfg):
    """2-class task whose label is the XOR of two hidden bits, each exposed
    through a noisy feature column; the rest of the columns are noise."""
    n = int(rng.integers(cfg.sample_range[0], cfg.sample_range[1] + 1))
    n_feat = max(2, int(rng.integers(cfg.feature_range[0], cfg.feature_range[1] + 1)))
    noise = rng.uniform(*cfg.noise_range)
    a = rng.integers(0, 2, size=n)
    b = rng.integers(0, 2, size=n)
    y = np.bitwise_xor(a, b)
    x = rng.normal(size=(n, n_feat))
    pos = rng.choice(n_feat, size=2, replace=False)
    x[:, pos[0]] = a + rng.normal(size=n) * noise
    x[:, pos[1]] = b + rng.normal(size=n) * noise
    return x, y, 2


def _draw_table(rng, cfg):
    family = rng.random()
    if family < cfg.parity_fraction:
        return _draw_parity(rng, cfg)
    use_interactions = family < cfg.parity_fraction + cfg.interaction_fraction
    n = int(rng.integers(cfg.sample_range[0], cfg.sample_range[1] + 1))
    n_feat = int(rng.integers(cfg.feature_range[0], cfg.feature_range[1] + 1))
    n_classes = int(rng.integers(cfg.class_range[0], cfg.class_range[1] + 1))
    depth = int(rng.integers(cfg.depth_range[0], cfg.depth_range[1] + 1))
    noise = rng.uniform(*cfg.noise_range)

    # layered DAG of scalar nodes; layer 0 is exogenous
    layers = [max(2, int(rng.integers(cfg.width_range[0], cfg.width_range[1] + 1)))]
    total = layers[0]
    for _ in range(depth):
        w = int(rng.integers(cfg.width_range[0], cfg.width_range[1] + 1))
        w = min(w, 16 - total)
        if w < 1:
            break
        layers.append(w)
        total += w
    values = [rng.normal(size=(n, layers[0]))]
    for li in range(1, len(layers)):
        prev = np.concatenate(values, axis=1)
        w = rng.normal(size=(prev.shape[1], layers[li])) * rng.uniform(0.5, 1.5)
        b = rng.normal(size=layers[li])
        acts = rng.choice(_ACTIVATIONS if use_interactions else _ACTIVATIONS[:3],
                          size=layers[li])
        raw = prev @ w + b
        out = np.stack(
            [_apply_activation(acts[j], raw[:, j]) for j in range(layers[li])],
            axis=1,
        )
        if use_interactions:
            # interaction nodes: some nodes are pairwise products of earlier
            # nodes, so non-monotone labels (parity-like functions) occur in
            # the prior; parents are standardized and the product squashed to
            # keep the node distribution bounded
            inter = rng.random(layers[li]) < 0.25
            for j in np.flatnonzero(inter):
                i1, i2 = rng.integers(0, prev.shape[1], size=2)
                out[:, j] = np.tanh(_standardize(prev[:, i1]) * _standardize(prev[:, i2]))
            # products need their layer rescaled to stay comparable
            out = np.apply_along_axis(_standardize, 0, out)
        out = out + rng.normal(size=out.shape) * noise
        values.append(out)
    all_nodes = np.concatenate(values, axis=1)
    total = all_nodes.shape[1]

    label_node = int(rng.integers(max(0, total - layers[-1]), total))
    candidates = [i for i in range(total) if i != label_node]
    feat_idx = rng.choice(candidates, size=min(n_feat, len(candidates)), replace=False)
    x = all_nodes[:, feat_idx]

    raw_label = all_nodes[:, label_node] + rng.normal(size=n) * noise
    qs = np.quantile(raw_label, np.linspace(0, 1, n_classes + 1)[1:-1])
    y = np.searchsorted(qs, raw_label, side="right")
    return x, y, n_classes


def sample_prior_dataset(cfg, seed):
    """Draw one synthetic classification table; deterministic in seed.

    Resamples internally when the draw is degenerate (label constant or a
    class missing from the train split) up to cfg.retry_bound, then rejects.
    """
    for attempt in range(cfg.retry_bound):
        rng = _philox(cfg.seed, f"prior_task.{seed}.{attempt}")
        x, y, n_classes = _draw_table(rng, cfg)
        n = x.shape[0]
        n_train = max(n_classes, int(round(n * cfg.train_fraction)))
        n_train = min(n_train, n - 1)
        if np.unique(y).size < 2:
            continue
        # remap to the classes that actually occur
        uniq = np.unique(y)
        remap = {c: i for i, c in enumerate(uniq)}
        y = np.array([remap[c] for c in y])
        n_classes = uniq.size
        # reorder rows so every class appears in the train split
        order = rng.permutation(n)
        y_perm = y[order]
        ok = True
        for c in range(n_classes):
            pos = np.flatnonzero(y_perm == c)
            if pos.size == 0 or pos[0] >= n_train:
                if pos.size == 0:
                    ok = False
                    break
                # swap one occurrence into the train split
                swap_with = int(rng.integers(0, n_train))
                order[[swap_with, pos[0]]] = order[[pos[0], swap_with]]
                y_perm = y[order]
        if not ok:
            continue
        x = x[order]
        y = y[order]
        mu = x.mean(axis=0)
        sd = x.std(axis=0)
        sd = np.where(sd == 0, 1.0, sd)
        x = (x - mu) / sd
        return SyntheticTask(x=x, y=y, n_train=n_train, n_classes=n_classes)
    raise RuntimeError(
        f"degenerate prior draw: no valid table after {cfg.retry_bound} retries (seed {seed})"
    )


def linear_task(seed, n_train=40, n_test=20, n_features=3, margin=0.5):
    """Held-out linearly separable 2-class task (pretraining sanity target)."""
    rng = _philox(seed, "linear_task")
    n = n_train + n_test
    for _ in range(50):
        w = rng.normal(size=n_features)
        w /= np.linalg.norm(w)
        x = rng.normal(size=(n, n_features))
        score = x @ w
        y = (score > 0).astype(np.intp)
        keep = np.abs(score) > margin * 0.2
        if y[:n_train].min() == 0 and y[:n_train].max() == 1 and keep.mean() > 0.8:
            mu, sd = x.mean(axis=0), x.std(axis=0)
            x = (x - mu) / np.where(sd == 0, 1, sd)
            return SyntheticTask(x=x, y=y, n_train=n_train, n_classes=2)
        seed += 1
    raise RuntimeError("failed to draw a balanced linear task")


def pretrain_backbone(backbone, encoder, cfg, n_tasks, lr=3e-4,
                      weight_decay=0.01, schedule="constant", callback=None):
    """Meta-train the backbone on synthetic prior tasks.

    Each task is encoded with the frozen tabular encoder, forwarded with the
    in-context mask, scored by cross-entropy on the query rows, and used for
    one AdamW step. `schedule` is "constant" or "cosine" (decay to a 5%
    floor over the run; long constant-lr runs were observed to regress late).
    Returns the per-task loss trace.
    """
    if n_tasks < 1:
        raise ValueError("n_tasks must be >= 1")
    if schedule not in ("constant", "cosine"):
        raise ValueError(f"unknown lr schedule {schedule!r}")
    params = backbone.params()
    opt = AdamW(params, lr=lr, weight_decay=weight_decay)
    if schedule == "cosine":
        opt.lr_schedule = lambda step: lr * (
            0.05 + 0.95 * 0.5 * (1.0 + np.cos(np.pi * step / n_tasks))
        )
    trace = []
    for task_index in range(n_tasks):
        task = sample_prior_dataset(cfg, task_index)
        tokens = encoder.encode_numeric_matrix(task.x, task.n_train)
        logits = backbone.predict_logits(tokens, task.y[: task.n_train], task.n_train)
        loss = cross_entropy(logits, task.y[task.n_train :])
        if not np.isfinite(loss.data):
            raise FloatingPointError(
                f"non-finite pretraining loss at task {task_index} (cfg seed {cfg.seed})"
            )
        opt.zero_grad()
        ad.backward(loss)
        opt.step()
        trace.append(loss.data.item())
        if callback is not None:
            callback(task_index, trace[-1])
    return trace


def incontext_accuracy(backbone, encoder, tasks):
    """Mean in-context accuracy over SyntheticTasks without any updates."""
    from .training import evaluate_accuracy

    accs = []
    for task in tasks:
        tokens = encoder.encode_numeric_matrix(task.x, task.n_train)
        logits = backbone.predict_logits(tokens, task.y[: task.n_train], task.n_train)
        probs = ad.softmax(logits, axis=-1)
        accs.append(evaluate_accuracy(probs, task.y[task.n_train :]))
    return float(np.mean(accs))
