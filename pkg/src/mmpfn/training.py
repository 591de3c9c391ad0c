"""Fine-tuning protocol, optimizer, losses, metrics, and the instance-level
cosine-similarity analysis.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .layers import _philox


@dataclass
class FineTuneConfig:
    learning_rate: float = 1e-5
    batch_size: int = 1  # tables per optimizer step
    steps: int = 100
    seeds: tuple = (0, 1, 2, 3, 4)
    weight_decay: float = 0.01
    context_fraction: float = 0.8  # per-step context/query resplit of the train rows


# ---------------------------------------------------------------------------
# loss and metrics


def cross_entropy(logits, labels):
    """Mean over rows of -log softmax(logits)[label]. Differentiable."""
    n, c = logits.shape
    labels = np.asarray(labels, dtype=np.intp)
    if labels.shape != (n,):
        raise ValueError(f"labels shape {labels.shape} != ({n},)")
    if labels.size and (labels.min() < 0 or labels.max() >= c):
        raise ValueError(f"label out of range [0, {c})")
    m = logits.data.max(axis=1, keepdims=True)  # detached shift; gradient-exact
    shifted = logits - Tensor(m)
    lse = ad.log(ad.tsum(ad.exp(shifted), axis=1))  # [n]
    picked = shifted[np.arange(n), labels]  # [n]
    return ad.tmean(lse - picked)


def evaluate_accuracy(probabilities, labels):
    """Argmax match rate; ties break toward the lowest class index."""
    probs = probabilities.data if isinstance(probabilities, Tensor) else np.asarray(probabilities)
    pred = probs.argmax(axis=1)
    labels = np.asarray(labels)
    return float((pred == labels).mean())


def rank_aggregate(accuracies):
    """Per-method mean rank across datasets.

    `accuracies`: {method: {dataset: accuracy or None}}. Rank 1 = best per
    dataset; ties share the mean of tied ranks; a method missing a dataset is
    excluded there and averaged over its remaining datasets.
    """
    datasets = sorted({d for per in accuracies.values() for d in per})
    ranks = {m: [] for m in accuracies}
    for ds in datasets:
        entries = [(m, per[ds]) for m, per in accuracies.items()
                   if ds in per and per[ds] is not None]
        entries.sort(key=lambda kv: -kv[1])
        i = 0
        while i < len(entries):
            j = i
            while j + 1 < len(entries) and entries[j + 1][1] == entries[i][1]:
                j += 1
            shared = (i + 1 + j + 1) / 2.0
            for k in range(i, j + 1):
                ranks[entries[k][0]].append(shared)
            i = j + 1
    return {m: float(np.mean(r)) for m, r in ranks.items() if r}


def cosine_similarity_matrix(feature_embeddings):
    """Instance-averaged pairwise cosine similarity across feature tokens.

    `feature_embeddings`: array [n_instances, f, d]. Zero-norm embeddings get
    pair similarity 0 (flagged via the returned mask). Diagonal forced to 1.
    Returns (matrix [f, f], zero_flagged bool).
    """
    x = feature_embeddings.data if isinstance(feature_embeddings, Tensor) else np.asarray(feature_embeddings)
    n, f, d = x.shape
    norms = np.linalg.norm(x, axis=-1)
    zero = norms == 0
    safe = np.where(zero, 1.0, norms)
    unit = x / safe[..., None]
    sims = unit @ np.swapaxes(unit, 1, 2)  # [n, f, f]
    pair_zero = zero[:, :, None] | zero[:, None, :]
    sims = np.where(pair_zero, 0.0, sims)
    mat = sims.mean(axis=0)
    np.fill_diagonal(mat, 1.0)
    return mat, bool(zero.any())


def subsample_split(labels, fraction, seed):
    """Stratified uniform subsample (without replacement) of train-row
    indices, keeping at least one sample per class."""
    if not 0 < fraction <= 1:
        raise ValueError("fraction must be in (0, 1]")
    labels = np.asarray(labels)
    n = labels.size
    classes = np.unique(labels)
    target = int(round(n * fraction))
    if target < classes.size:
        min_frac = classes.size / n
        raise ValueError(
            f"fraction {fraction} too small to keep every class; minimum feasible is {min_frac:.4f}"
        )
    if fraction == 1.0:
        return np.arange(n)
    rng = _philox(seed, "subsample_split")
    chosen = []
    # one guaranteed row per class, then fill uniformly
    for c in classes:
        idx = np.flatnonzero(labels == c)
        chosen.append(rng.choice(idx, size=1))
    chosen = np.concatenate(chosen)
    rest = np.setdiff1d(np.arange(n), chosen)
    extra = target - chosen.size
    if extra > 0:
        chosen = np.concatenate([chosen, rng.choice(rest, size=extra, replace=False)])
    return np.sort(chosen)


# ---------------------------------------------------------------------------
# AdamW


class AdamW:
    """Decoupled-weight-decay Adam. Decay is applied to the parameter before
    the adaptive step; moments are bias-corrected."""

    def __init__(self, params, lr, beta1=0.9, beta2=0.999, eps=1e-8,
                 weight_decay=0.01):
        self.params = dict(params)
        self.lr = lr
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.weight_decay = weight_decay
        self.step_count = 0
        self.m = {k: np.zeros_like(t.data) for k, t in self.params.items()}
        self.v = {k: np.zeros_like(t.data) for k, t in self.params.items()}
        self.lr_schedule = None  # optional hook: fn(step) -> lr

    def step(self):
        self.step_count += 1
        lr = self.lr if self.lr_schedule is None else self.lr_schedule(self.step_count)
        bc1 = 1.0 - self.beta1 ** self.step_count
        bc2 = 1.0 - self.beta2 ** self.step_count
        for name, t in self.params.items():
            g = t.grad
            if g is None:
                g = np.zeros_like(t.data)
            elif not np.isfinite(g).all():
                raise FloatingPointError(f"non-finite gradient in parameter {name!r}")
            if self.weight_decay:
                t.data -= lr * self.weight_decay * t.data
            m = self.m[name]
            v = self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            t.data -= lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)

    def zero_grad(self):
        for t in self.params.values():
            t.grad = None


# ---------------------------------------------------------------------------
# fine-tuning protocol


@dataclass
class RunResult:
    per_seed_accuracy: dict
    loss_traces: dict = field(default_factory=dict)

    @property
    def mean_accuracy(self):
        return float(np.mean(list(self.per_seed_accuracy.values())))


def fine_tune_one_seed(model, dataset, cfg, seed):
    """Fine-tune one model instance on one seed.

    Each step resplits the train rows into context/query, forwards the full
    pipeline, takes cross-entropy on the query rows, and updates only the
    trainable set (projector + backbone + decoder). Returns (accuracy, trace).
    """
    trainable = model.trainable_params()
    frozen_digest = model.frozen_digest()
    opt = AdamW(trainable, lr=cfg.learning_rate, weight_decay=cfg.weight_decay)
    rng = _philox(seed, "fine_tune.splits")
    n_train = dataset.n_train
    trace = []
    for step in range(cfg.steps):
        for _ in range(cfg.batch_size):
            perm = rng.permutation(n_train)
            n_ctx = max(1, int(round(n_train * cfg.context_fraction)))
            n_ctx = min(n_ctx, n_train - 1)
            ctx, qry = perm[:n_ctx], perm[n_ctx:]
            logits = model.forward(dataset, ctx, qry)
            loss = cross_entropy(logits, dataset.labels[qry])
            if not np.isfinite(loss.data):
                raise FloatingPointError(f"non-finite loss at step {step}, seed {seed}")
            opt.zero_grad()
            ad.backward(loss)
            model.assert_frozen_clean()
            opt.step()
            trace.append(loss.data.item())
    if model.frozen_digest() != frozen_digest:
        raise RuntimeError("frozen encoder parameters changed during fine-tuning")
    acc = evaluate(model, dataset)
    return acc, trace


def evaluate(model, dataset):
    """Full train split as context, held-out test rows as queries."""
    ctx = np.arange(dataset.n_train)
    qry = np.arange(dataset.n_train, dataset.n_samples)
    logits = model.forward(dataset, ctx, qry)
    probs = ad.softmax(logits, axis=-1)
    return evaluate_accuracy(probs, dataset.labels[qry])


def fine_tune(model_factory, dataset, cfg):
    """Run the fine-tuning protocol over cfg.seeds with fresh models.

    `model_factory(seed)` must return a freshly initialized model (frozen
    encoders included) so each seed is an independent deterministic run.
    """
    per_seed = {}
    traces = {}
    for seed in cfg.seeds:
        model = model_factory(seed)
        if cfg.steps > 0:
            acc, trace = fine_tune_one_seed(model, dataset, cfg, seed)
        else:
            acc, trace = evaluate(model, dataset), []
        per_seed[seed] = acc
        traces[seed] = trace
    return RunResult(per_seed_accuracy=per_seed, loss_traces=traces)
