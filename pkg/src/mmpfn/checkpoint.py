"""Binary checkpoint format shared by every parameterized module.

Layout: magic "MMPN", version u32 LE, header-length u32 LE, UTF-8 JSON header
mapping parameter name -> {shape, offset}, then raw float64 little-endian
data. Offsets are byte positions relative to the start of the data section.
The header JSON is emitted with sorted keys and fixed separators so a
write/read/write cycle is byte-identical.
"""

from __future__ import annotations

import json
import struct

import numpy as np

from .autodiff import Tensor

MAGIC = b"MMPN"
VERSION = 1


def save_params(path, params):
    """Write a {name: Tensor} dict to `path` in the MMPN format."""
    names = sorted(params)
    header = {}
    offset = 0
    blobs = []
    for name in names:
        t = params[name]
        arr = np.ascontiguousarray(t.data, dtype="<f8")
        header[name] = {"shape": list(arr.shape), "offset": offset}
        blobs.append(arr.tobytes())
        offset += arr.nbytes
    header_bytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<I", VERSION))
        f.write(struct.pack("<I", len(header_bytes)))
        f.write(header_bytes)
        for blob in blobs:
            f.write(blob)


def load_params(path):
    """Read an MMPN file into a {name: Tensor} dict (requires_grad=True)."""
    with open(path, "rb") as f:
        raw = f.read()
    if raw[:4] != MAGIC:
        raise ValueError(f"bad checkpoint magic {raw[:4]!r} at byte 0 in {path}")
    (version,) = struct.unpack_from("<I", raw, 4)
    if version != VERSION:
        raise ValueError(f"unsupported checkpoint version {version} at byte 4")
    (hlen,) = struct.unpack_from("<I", raw, 8)
    header = json.loads(raw[12 : 12 + hlen].decode("utf-8"))
    data_start = 12 + hlen
    out = {}
    for name, meta in header.items():
        shape = tuple(meta["shape"])
        count = int(np.prod(shape)) if shape else 1
        start = data_start + meta["offset"]
        end = start + count * 8
        if end > len(raw):
            raise ValueError(f"truncated checkpoint: {name} needs bytes up to {end}")
        arr = np.frombuffer(raw[start:end], dtype="<f8").reshape(shape)
        out[name] = Tensor(arr.copy(), requires_grad=True)
    return out


def assign_params(params, loaded):
    """Copy loaded values into an existing {name: Tensor} dict in place."""
    missing = set(params) - set(loaded)
    extra = set(loaded) - set(params)
    if missing or extra:
        raise ValueError(f"checkpoint mismatch: missing={sorted(missing)} extra={sorted(extra)}")
    for name, t in params.items():
        src = loaded[name]
        if src.data.shape != t.data.shape:
            raise ValueError(
                f"checkpoint shape mismatch for {name}: {src.data.shape} vs {t.data.shape}"
            )
        t.data[...] = src.data


def params_digest(params):
    """SHA-256 over the serialized byte stream; used by freeze-contract tests."""
    import hashlib

    h = hashlib.sha256()
    for name in sorted(params):
        h.update(name.encode("utf-8"))
        h.update(np.ascontiguousarray(params[name].data, dtype="<f8").tobytes())
    return h.hexdigest()
