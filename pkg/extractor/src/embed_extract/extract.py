"""Extraction jobs: manifest in, MMPE file plus checksum sidecar out.

Row i of the output always corresponds to manifest data row i; any failure
aborts the whole job with the offending row index rather than skipping.
"""

from __future__ import annotations

import csv
import hashlib
import json
import os
from dataclasses import dataclass, field

import numpy as np
from PIL import Image, UnidentifiedImageError

from .encoders import fingerprint, get_encoder
from .mmpe import write_embeddings


@dataclass
class ExtractJob:
    modality: str  # "image" | "text"
    manifest: str  # CSV path
    encoder_id: str
    out_path: str
    column: str = ""  # default: "path" for images, "text" for text

    def __post_init__(self):
        if self.modality not in ("image", "text"):
            raise ValueError(f"unknown modality {self.modality!r}")
        if not self.column:
            self.column = "path" if self.modality == "image" else "text"


@dataclass
class ExtractReport:
    rows: int
    manifest_sha256: str
    fingerprint: str
    flagged_rows: list = field(default_factory=list)  # e.g. empty texts


def _read_manifest(job):
    with open(job.manifest, "rb") as f:
        raw = f.read()
    sha = hashlib.sha256(raw).hexdigest()
    rows = list(csv.DictReader(raw.decode("utf-8").splitlines()))
    if not rows:
        raise ValueError(f"manifest {job.manifest} has no data rows")
    if job.column not in rows[0]:
        raise ValueError(
            f"manifest {job.manifest} has no column {job.column!r}")
    return rows, sha


def extract_image_embeddings(job):
    rows, sha = _read_manifest(job)
    enc = get_encoder("image", job.encoder_id)
    base = os.path.dirname(os.path.abspath(job.manifest))
    vectors = np.zeros((len(rows), enc.dim))
    for i, row in enumerate(rows):
        path = row[job.column]
        if not os.path.isabs(path):
            path = os.path.join(base, path)
        try:
            with Image.open(path) as img:
                vectors[i] = enc.encode(img)
        except (OSError, UnidentifiedImageError) as e:
            raise RuntimeError(
                f"manifest row {i}: unreadable image {row[job.column]!r}: {e}"
            ) from e
    return _finish(job, vectors, sha, flagged=[])


def extract_text_embeddings(job):
    rows, sha = _read_manifest(job)
    enc = get_encoder("text", job.encoder_id)
    vectors = np.zeros((len(rows), enc.dim))
    flagged = []
    for i, row in enumerate(rows):
        text = row[job.column] or ""
        if not enc.tokenize(text):
            flagged.append(i)  # empty after preprocessing: valid but reported
        vectors[i] = enc.encode(text)
    return _finish(job, vectors, sha, flagged=flagged)


def _finish(job, vectors, manifest_sha, flagged):
    fp = fingerprint(job.encoder_id)
    write_embeddings(job.out_path, vectors, job.modality, fp)
    report = ExtractReport(rows=vectors.shape[0], manifest_sha256=manifest_sha,
                           fingerprint=fp, flagged_rows=flagged)
    sidecar = {
        "rows": report.rows,
        "manifest_sha256": report.manifest_sha256,
        "fingerprint": report.fingerprint,
        "flagged_rows": report.flagged_rows,
    }
    with open(job.out_path + ".sidecar.json", "w", encoding="utf-8") as f:
        json.dump(sidecar, f, sort_keys=True, indent=2)
        f.write("\n")
    return report


def run_job(job):
    if job.modality == "image":
        return extract_image_embeddings(job)
    return extract_text_embeddings(job)
