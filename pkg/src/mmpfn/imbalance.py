"""Attention-imbalance model: closed-form expected attention mass for a
two-set key population, a Monte Carlo measurement of the true mass, and the
token-ratio sweep that fine-tunes models across projector grids.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .layers import _philox


@dataclass
class ImbalanceSpec:
    n_nontabular: int
    n_tabular: int
    c_nontabular: float = 1.0  # expected unnormalized weight per non-tabular token
    c_tabular: float = 1.0
    dim: int = 16
    distribution: str = "normal"  # "normal" | "constant"
    variance: float = 1.0
    samples: int = 10_000
    seed: int = 0

    def __post_init__(self):
        if self.n_nontabular < 0 or self.n_tabular < 0:
            raise ValueError("token counts must be nonnegative")
        if self.n_nontabular + self.n_tabular < 1:
            raise ValueError("need at least one token")
        if self.c_nontabular <= 0 or self.c_tabular <= 0:
            raise ValueError("per-token expected weights must be positive")


@dataclass
class AttentionMassReport:
    predicted_mass: float
    empirical_mass: float
    standard_error: float
    partition: dict = field(default_factory=dict)

    @property
    def gap(self):
        return abs(self.predicted_mass - self.empirical_mass)


def expected_attention_mass(spec):
    """First-order prediction: N_I c_I / (N_I c_I + N_T c_T)."""
    num = spec.n_nontabular * spec.c_nontabular
    den = num + spec.n_tabular * spec.c_tabular
    if den == 0:
        raise ValueError("no tokens: expected mass undefined")
    return num / den


def monte_carlo_attention_mass(spec):
    """Draw (q, keys) pairs, compute the non-tabular share of the softmax
    mass per draw, and report it next to the closed-form prediction.

    A c_nontabular/c_tabular ratio other than 1 is realized by an additive
    shift of ln(c_I/c_T) on the non-tabular scores, which scales their
    expected unnormalized weight by exactly that ratio.
    """
    if spec.samples < 1:
        raise ValueError("sample count must be >= 1")
    n_i, n_t, d = spec.n_nontabular, spec.n_tabular, spec.dim
    rng = _philox(spec.seed, "monte_carlo_attention_mass")
    shift = np.log(spec.c_nontabular / spec.c_tabular)
    masses = np.empty(spec.samples)
    for s in range(spec.samples):
        if spec.distribution == "constant":
            scores_i = np.zeros(n_i) + shift
            scores_t = np.zeros(n_t)
        else:
            sd = np.sqrt(spec.variance)
            q = rng.normal(size=d) * sd
            k_i = rng.normal(size=(n_i, d)) * sd
            k_t = rng.normal(size=(n_t, d)) * sd
            scores_i = k_i @ q / np.sqrt(d) + shift
            scores_t = k_t @ q / np.sqrt(d)
        all_scores = np.concatenate([scores_i, scores_t])
        m = all_scores.max()
        w = np.exp(all_scores - m)
        masses[s] = w[:n_i].sum() / w.sum()
    mean = float(masses.mean())
    se = float(masses.std(ddof=1) / np.sqrt(spec.samples)) if spec.samples > 1 else 0.0
    return AttentionMassReport(
        predicted_mass=expected_attention_mass(spec),
        empirical_mass=mean,
        standard_error=se,
        partition={"nontabular": mean, "tabular": 1.0 - mean},
    )


def imbalance_sweep(task_factory, model_factory, cfg, grid, seeds,
                    block_index=0):
    """Fine-tune across a (variant, N, K) grid and record accuracy plus the
    measured per-modality attention mass.

    `task_factory(seed)` -> (dataset, encoder);
    `model_factory(dataset, encoder, variant_tag, n_heads, cap_queries, seed)`
    -> model. Returns a list of row dicts matching the CSV schema
    (variant, n_heads, cap_queries, seed, accuracy, tabular_mass,
    nontabular_mass).
    """
    from .training import evaluate, fine_tune_one_seed

    if not grid:
        raise ValueError("sweep grid is empty")
    rows = []
    for variant_tag, n_heads, cap_queries in grid:
        for seed in seeds:
            dataset, encoder = task_factory(seed)
            model = model_factory(dataset, encoder, variant_tag, n_heads,
                                  cap_queries, seed)
            acc, _ = fine_tune_one_seed(model, dataset, cfg, seed)
            ctx = np.arange(dataset.n_train)
            qry = np.arange(dataset.n_train, dataset.n_samples)
            mass = model.attention_mass(dataset, ctx, qry, block_index=block_index)
            nontab = sum(v for k, v in mass.items()
                         if k not in ("tabular", "label"))
            rows.append({
                "variant": variant_tag,
                "n_heads": n_heads,
                "cap_queries": cap_queries if cap_queries else "",
                "seed": seed,
                "accuracy": acc,
                "tabular_mass": mass["tabular"],
                "nontabular_mass": nontab,
            })
    return rows
