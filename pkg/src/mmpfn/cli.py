"""Command-line experiment runner.

Usage: mmpfn <subcommand> --config <path> [--out <dir>] [--jobs N]

All experiment settings live in the JSON config (single source of truth);
flags only select the subcommand, config path, output directory, and seed
parallelism. Outputs are deterministic given config + seeds: reruns produce
byte-identical bundles, and --jobs parallelism matches the serial output.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import platform
import sys
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from . import __version__
from . import autodiff as ad
from .backbone import PFNBackbone
from .checkpoint import assign_params, load_params, save_params
from .config import ConfigError, parse_config, validate_config
from .encoders import ColumnSpec, TabularEncoder, load_embedding_file
from .imbalance import ImbalanceSpec, imbalance_sweep, monte_carlo_attention_mass
from .model import MMPFN, MultimodalDataset
from .prior import PriorConfig, pretrain_backbone
from .projector import ProjectorVariant
from .training import (FineTuneConfig, cosine_similarity_matrix, evaluate,
                       fine_tune_one_seed)

EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4


def _fingerprint(cfg):
    return {
        "mmpfn_version": __version__,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "seeds": list(cfg["training"]["seeds"]),
    }


def _write_bundle(out_dir, name, payload):
    os.makedirs(out_dir, exist_ok=True)
    path = os.path.join(out_dir, name)
    with open(path, "w", encoding="utf-8") as f:
        json.dump(payload, f, sort_keys=True, indent=2)
        f.write("\n")
    return path


def _write_csv(out_dir, name, header, rows):
    os.makedirs(out_dir, exist_ok=True)
    path = os.path.join(out_dir, name)
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f)
        w.writerow(header)
        w.writerows(rows)
    return path


# ---------------------------------------------------------------------------
# task and model assembly


def build_dataset(cfg):
    task = cfg["task"]
    if task["type"] == "synthetic":
        from . import tasks as task_mod

        params = dict(task["params"])
        params.setdefault("dim", cfg["model"]["dim"])
        params.setdefault("encoder_seed", cfg["model"]["encoder_seed"])
        seed = params.pop("seed", 0)
        builder = {
            "xor": task_mod.xor_task,
            "three_signal": task_mod.three_signal_task,
            "imbalance": task_mod.imbalance_task,
        }[task["name"]]
        return builder(seed, **params)
    return _load_csv_dataset(cfg)


def _load_csv_dataset(cfg):
    task = cfg["task"]
    if not task["path"]:
        raise ConfigError("task.path: required for csv tasks")
    specs = [
        ColumnSpec(name=c["name"], kind=c["kind"], categories=c.get("categories", []))
        for c in task["columns"]
    ]
    with open(task["path"], newline="", encoding="utf-8") as f:
        rows = list(csv.DictReader(f))
    if not rows:
        raise ValueError(f"no data rows in {task['path']}")
    label_col = task["label_column"]
    if label_col not in rows[0]:
        raise ValueError(f"label column {label_col!r} not in CSV header")
    label_values = sorted({r[label_col] for r in rows})
    labels = np.array([label_values.index(r[label_col]) for r in rows])
    n_train = task["n_train"] or int(round(len(rows) * 0.8))
    dim = cfg["model"]["dim"]
    encoder = TabularEncoder(dim, seed=cfg["model"]["encoder_seed"])
    tab_tokens = encoder.encode_table(rows, specs, n_train)
    embeddings = {}
    for name, path in sorted(task["embeddings"].items()):
        eset = load_embedding_file(path)
        if eset.count != len(rows):
            raise ValueError(
                f"embedding file {path} has {eset.count} rows, CSV has {len(rows)}"
            )
        embeddings[name] = eset.vectors.data
    ds = MultimodalDataset(
        tabular_tokens=tab_tokens,
        embeddings=embeddings,
        labels=labels,
        n_train=n_train,
        n_classes=len(label_values),
        modality_order=sorted(embeddings),
    )
    return ds, encoder


def build_model(cfg, dataset, encoder, seed):
    m = cfg["model"]
    variants = {}
    embed_dims = {}
    for name in dataset.modality_order:
        if name not in cfg["projector"]:
            raise ConfigError(f"projector.{name}: missing section for modality")
        p = cfg["projector"][name]
        variants[name] = ProjectorVariant(
            tag=p["variant"], n_heads=p["n_heads"],
            cap_enabled=p["cap_enabled"], cap_queries=p["cap_queries"],
        )
        embed_dims[name] = dataset.embeddings[name].shape[1]
    model = MMPFN(
        dim=m["dim"], n_classes=m["n_classes"], projector_variants=variants,
        embedding_dims=embed_dims,
        backbone_kwargs={
            "head_count": m["heads"], "block_count": m["blocks"],
            "hidden_mult": m["hidden_mult"],
        },
        encoder=encoder, seed=m["seed"] + seed,
    )
    if cfg["checkpoint"]:
        loaded = load_params(cfg["checkpoint"])
        assign_params(model.backbone.params(), loaded)
    return model


def _finetune_config(cfg):
    t = cfg["training"]
    return FineTuneConfig(
        learning_rate=t["learning_rate"], batch_size=t["batch_size"],
        steps=t["steps"], seeds=tuple(t["seeds"]),
        weight_decay=t["weight_decay"], context_fraction=t["context_fraction"],
    )


# ---------------------------------------------------------------------------
# subcommands


def cmd_pretrain(cfg, out_dir, jobs):
    p = cfg["pretrain"]
    m = cfg["model"]
    backbone = PFNBackbone(
        dim=m["dim"], head_count=m["heads"], block_count=m["blocks"],
        hidden_mult=m["hidden_mult"], n_classes=m["n_classes"], seed=m["seed"],
    )
    encoder = TabularEncoder(m["dim"], seed=m["encoder_seed"])
    prior_cfg = PriorConfig(
        feature_range=tuple(p["feature_range"]),
        sample_range=tuple(p["sample_range"]),
        class_range=tuple(p["class_range"]),
        noise_range=tuple(p["noise_range"]),
        seed=p["seed"],
    )
    trace = pretrain_backbone(
        backbone, encoder, prior_cfg, p["n_tasks"],
        lr=p["learning_rate"], weight_decay=p["weight_decay"],
        schedule=p["schedule"],
    )
    os.makedirs(out_dir, exist_ok=True)
    ckpt = os.path.join(out_dir, "pretrained.mmpn")
    save_params(ckpt, backbone.params())
    _write_csv(out_dir, "pretrain_loss.csv", ["task_index", "loss"],
               [(i, f"{v:.10g}") for i, v in enumerate(trace)])
    bundle = {
        "config": cfg,
        "fingerprint": _fingerprint(cfg),
        "checkpoint": "pretrained.mmpn",
        "final_loss_mean_trailing_50": float(np.mean(trace[-50:])),
        "n_tasks": p["n_tasks"],
    }
    _write_bundle(out_dir, "pretrain_bundle.json", bundle)
    return 0


def _finetune_seed_job(args):
    cfg, seed = args
    dataset, encoder = build_dataset(cfg)
    model = build_model(cfg, dataset, encoder, seed)
    ft = _finetune_config(cfg)
    if ft.steps > 0:
        acc, trace = fine_tune_one_seed(model, dataset, ft, seed)
    else:
        acc, trace = evaluate(model, dataset), []
    return seed, acc, trace


def cmd_finetune(cfg, out_dir, jobs):
    seeds = cfg["training"]["seeds"]
    jobs_args = [(cfg, s) for s in seeds]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            results = list(ex.map(_finetune_seed_job, jobs_args))
    else:
        results = [_finetune_seed_job(a) for a in jobs_args]
    results.sort(key=lambda r: r[0])
    per_seed = {str(s): a for s, a, _ in results}
    trace_paths = {}
    for seed, _, trace in results:
        name = f"loss_trace_seed{seed}.csv"
        _write_csv(out_dir, name, ["step", "loss"],
                   [(i, f"{v:.10g}") for i, v in enumerate(trace)])
        trace_paths[str(seed)] = name
    bundle = {
        "config": cfg,
        "fingerprint": _fingerprint(cfg),
        "per_seed_accuracy": per_seed,
        "mean_accuracy": float(np.mean([a for _, a, _ in results])),
        "loss_traces": trace_paths,
    }
    _write_bundle(out_dir, "finetune_bundle.json", bundle)
    return 0


def cmd_eval(cfg, out_dir, jobs):
    dataset, encoder = build_dataset(cfg)
    accs = {}
    for seed in cfg["training"]["seeds"]:
        model = build_model(cfg, dataset, encoder, seed)
        accs[str(seed)] = evaluate(model, dataset)
    bundle = {
        "config": cfg,
        "fingerprint": _fingerprint(cfg),
        "per_seed_accuracy": accs,
        "mean_accuracy": float(np.mean(list(accs.values()))),
    }
    _write_bundle(out_dir, "eval_bundle.json", bundle)
    return 0


def _sweep_cell_job(args):
    cfg, variant_tag, n_heads, cap_queries, seed = args
    rows = imbalance_sweep(
        task_factory=lambda s: build_dataset(cfg),
        model_factory=lambda ds, enc, tag, n, k, s: _sweep_model(cfg, ds, enc, tag, n, k, s),
        cfg=_finetune_config(cfg),
        grid=[(variant_tag, n_heads, cap_queries)],
        seeds=[seed],
        block_index=cfg["imbalance"]["block_index"],
    )
    return rows


def _sweep_model(cfg, dataset, encoder, tag, n_heads, cap_queries, seed):
    cfg2 = json.loads(json.dumps(cfg))
    for name in dataset.modality_order:
        cfg2["projector"][name] = {
            "variant": tag, "n_heads": n_heads,
            "cap_enabled": cap_queries is not None,
            "cap_queries": cap_queries if cap_queries is not None else 1,
            "embedding_dim": dataset.embeddings[name].shape[1],
        }
    return build_model(cfg2, dataset, encoder, seed)


def cmd_imbalance_sweep(cfg, out_dir, jobs):
    grid = cfg["imbalance"]["grid"]
    if not grid:
        raise ConfigError("imbalance.grid: empty sweep grid")
    seeds = cfg["training"]["seeds"]
    cells = [(cfg, g[0], g[1], g[2], s) for g in grid for s in seeds]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            groups = list(ex.map(_sweep_cell_job, cells))
    else:
        groups = [_sweep_cell_job(c) for c in cells]
    rows = [r for g in groups for r in g]
    csv_rows = [
        (r["variant"], r["n_heads"], r["cap_queries"], r["seed"],
         f"{r['accuracy']:.10g}", f"{r['tabular_mass']:.10g}",
         f"{r['nontabular_mass']:.10g}")
        for r in rows
    ]
    _write_csv(out_dir, "imbalance_sweep.csv",
               ["variant", "n_heads", "cap_queries", "seed", "accuracy",
                "tabular_mass", "nontabular_mass"], csv_rows)
    bundle = {
        "config": cfg,
        "fingerprint": _fingerprint(cfg),
        "rows": len(rows),
        "csv": "imbalance_sweep.csv",
    }
    _write_bundle(out_dir, "imbalance_bundle.json", bundle)
    return 0


def cmd_mc_attention(cfg, out_dir, jobs):
    mc = cfg["mc_attention"]
    rows = []
    for cell in mc["cells"]:
        spec = ImbalanceSpec(
            n_nontabular=cell["n_nontabular"], n_tabular=cell["n_tabular"],
            c_nontabular=cell.get("c_nontabular", 1.0),
            c_tabular=cell.get("c_tabular", 1.0),
            dim=mc["dim"], samples=mc["samples"], seed=mc["seed"],
            distribution=mc["distribution"], variance=mc["variance"],
        )
        report = monte_carlo_attention_mass(spec)
        rows.append((
            spec.n_nontabular, spec.n_tabular, spec.c_nontabular, spec.c_tabular,
            f"{report.predicted_mass:.10g}", f"{report.empirical_mass:.10g}",
            f"{report.standard_error:.10g}",
        ))
    _write_csv(out_dir, "mc_attention.csv",
               ["n_nontabular", "n_tabular", "c_nontabular", "c_tabular",
                "predicted_mass", "empirical_mass", "standard_error"], rows)
    bundle = {
        "config": cfg,
        "fingerprint": _fingerprint(cfg),
        "csv": "mc_attention.csv",
        "cells": len(rows),
    }
    _write_bundle(out_dir, "mc_attention_bundle.json", bundle)
    return 0


def cmd_similarity(cfg, out_dir, jobs):
    dataset, encoder = build_dataset(cfg)
    seed = cfg["training"]["seeds"][0]
    model = build_model(cfg, dataset, encoder, seed)
    ctx = np.arange(dataset.n_train)
    qry = np.arange(dataset.n_train, dataset.n_samples)
    outs, partition = model.block_outputs(dataset, ctx, qry)
    grid = outs[cfg["similarity"]["block_index"]]
    feats = grid[:, :-1, :]  # similarity across feature tokens; label excluded
    mat, flagged = cosine_similarity_matrix(feats)
    _write_csv(out_dir, "similarity_matrix.csv",
               [f"f{j}" for j in range(mat.shape[1])],
               [[f"{v:.10g}" for v in row] for row in mat])
    bundle = {
        "config": cfg,
        "fingerprint": _fingerprint(cfg),
        "csv": "similarity_matrix.csv",
        "partition": {k: list(map(int, v)) for k, v in partition.items()},
        "zero_norm_flagged": flagged,
    }
    _write_bundle(out_dir, "similarity_bundle.json", bundle)
    return 0


_SUBCOMMANDS = {
    "pretrain": cmd_pretrain,
    "finetune": cmd_finetune,
    "eval": cmd_eval,
    "imbalance-sweep": cmd_imbalance_sweep,
    "mc-attention": cmd_mc_attention,
    "similarity": cmd_similarity,
}


def main(argv=None):
    parser = argparse.ArgumentParser(prog="mmpfn", description=__doc__)
    parser.add_argument("subcommand", choices=sorted(_SUBCOMMANDS))
    parser.add_argument("--config", required=True)
    parser.add_argument("--out", default=None,
                        help="output directory (default: config output_dir)")
    parser.add_argument("--jobs", type=int, default=1)
    args = parser.parse_args(argv)
    try:
        cfg = parse_config(args.config)
    except (ConfigError, OSError) as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    out_dir = args.out or cfg["output_dir"]
    try:
        return _SUBCOMMANDS[args.subcommand](cfg, out_dir, args.jobs)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (FileNotFoundError, ValueError) as e:
        print(f"data error: {e}", file=sys.stderr)
        return EXIT_DATA
    except (FloatingPointError, RuntimeError) as e:
        print(f"numeric error: {e}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
