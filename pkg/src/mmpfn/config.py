"""Experiment configuration: strict JSON parsing with defaults, unknown-key
rejection, and round-trip-stable serialization."""

from __future__ import annotations

import json
from copy import deepcopy

# schema: key -> (default or REQUIRED, validator) ; nested dicts recurse.
_REQUIRED = object()


def _num(lo=None, hi=None):
    def check(v, path):
        if not isinstance(v, (int, float)) or isinstance(v, bool):
            raise ConfigError(f"{path}: expected a number, got {type(v).__name__}")
        if lo is not None and v < lo:
            raise ConfigError(f"{path}: {v} below minimum {lo}")
        if hi is not None and v > hi:
            raise ConfigError(f"{path}: {v} above maximum {hi}")
        return v
    return check


def _integer(lo=None):
    def check(v, path):
        if not isinstance(v, int) or isinstance(v, bool):
            raise ConfigError(f"{path}: expected an integer, got {type(v).__name__}")
        if lo is not None and v < lo:
            raise ConfigError(f"{path}: {v} below minimum {lo}")
        return v
    return check


def _string(choices=None):
    def check(v, path):
        if not isinstance(v, str):
            raise ConfigError(f"{path}: expected a string, got {type(v).__name__}")
        if choices and v not in choices:
            raise ConfigError(f"{path}: {v!r} not one of {sorted(choices)}")
        return v
    return check


def _boolean(v, path):
    if not isinstance(v, bool):
        raise ConfigError(f"{path}: expected a boolean, got {type(v).__name__}")
    return v


def _list_of(item_check):
    def check(v, path):
        if not isinstance(v, list):
            raise ConfigError(f"{path}: expected a list, got {type(v).__name__}")
        return [item_check(x, f"{path}[{i}]") for i, x in enumerate(v)]
    return check


def _any(v, path):
    return v


class ConfigError(ValueError):
    pass


_PROJECTOR_SCHEMA = {
    "variant": (_REQUIRED, _string({"linear", "mlp", "multihead_mlp", "mgm"})),
    "n_heads": (1, _integer(1)),
    "cap_enabled": (False, _boolean),
    "cap_queries": (1, _integer(1)),
    "embedding_dim": (16, _integer(1)),
}

_SCHEMA = {
    "task": {
        "type": ("synthetic", _string({"synthetic", "csv"})),
        "name": ("xor", _string({"xor", "three_signal", "imbalance"})),
        "params": ({}, _any),
        "path": ("", _string()),
        "label_column": ("", _string()),
        "columns": ([], _any),
        "embeddings": ({}, _any),
        "n_train": (0, _integer(0)),
    },
    "model": {
        "dim": (64, _integer(1)),
        "blocks": (3, _integer(1)),
        "heads": (4, _integer(1)),
        "hidden_mult": (2, _num(lo=0)),
        "n_classes": (10, _integer(2)),
        "seed": (0, _integer()),
        "encoder_seed": (0, _integer()),
    },
    "projector": (dict(), "projector_map"),
    "training": {
        "learning_rate": (1e-5, _num(lo=0)),
        "batch_size": (1, _integer(1)),
        "steps": (100, _integer(0)),
        "seeds": ([0, 1, 2, 3, 4], _list_of(_integer())),
        "weight_decay": (0.01, _num(lo=0)),
        "context_fraction": (0.8, _num(lo=0, hi=1)),
    },
    "pretrain": {
        "n_tasks": (20000, _integer(1)),
        "learning_rate": (3e-4, _num(lo=0)),
        "weight_decay": (0.01, _num(lo=0)),
        "feature_range": ([2, 6], _list_of(_integer(1))),
        "sample_range": ([32, 64], _list_of(_integer(1))),
        "class_range": ([2, 4], _list_of(_integer(2))),
        "noise_range": ([0.05, 0.4], _list_of(_num(lo=0))),
        "schedule": ("constant", _string({"constant", "cosine"})),
        "seed": (0, _integer()),
    },
    "imbalance": {
        "grid": ([], _any),  # list of [variant, n_heads, cap_queries-or-null]
        "block_index": (0, _integer(0)),
    },
    "mc_attention": {
        "cells": ([], _any),
        "dim": (16, _integer(1)),
        "samples": (10000, _integer(1)),
        "seed": (0, _integer()),
        "distribution": ("normal", _string({"normal", "constant"})),
        "variance": (1.0, _num(lo=0)),
    },
    "similarity": {
        "block_index": (-1, _integer()),
    },
    "checkpoint": ("", _string()),
    "output_dir": ("out", _string()),
}


def _apply(schema, data, path):
    if not isinstance(data, dict):
        raise ConfigError(f"{path or '<root>'}: expected an object")
    out = {}
    unknown = set(data) - set(schema)
    if unknown:
        key = sorted(unknown)[0]
        raise ConfigError(f"{path + '.' if path else ''}{key}: unknown key")
    for key, rule in schema.items():
        sub_path = f"{path}.{key}" if path else key
        if isinstance(rule, dict):
            out[key] = _apply(rule, data.get(key, {}), sub_path)
            continue
        default, check = rule
        if check == "projector_map":
            out[key] = {
                name: _apply(_PROJECTOR_SCHEMA, val, f"{sub_path}.{name}")
                for name, val in data.get(key, {}).items()
            }
            continue
        if key not in data:
            if default is _REQUIRED:
                raise ConfigError(f"{sub_path}: missing required key")
            out[key] = deepcopy(default)
        else:
            out[key] = check(data[key], sub_path)
    return out


def parse_config(path):
    with open(path, "r", encoding="utf-8") as f:
        try:
            data = json.load(f)
        except json.JSONDecodeError as e:
            raise ConfigError(f"invalid JSON in {path}: {e}") from e
    return validate_config(data)


def validate_config(data):
    return _apply(_SCHEMA, data, "")


def emit_config(cfg):
    """Canonical serialization; parse(emit(parse(x))) == parse(x)."""
    return json.dumps(cfg, sort_keys=True, indent=2)
