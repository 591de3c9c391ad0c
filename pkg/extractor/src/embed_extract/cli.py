"""Command-line entry point: mmpfn-extract."""

from __future__ import annotations

import argparse
import sys

from .extract import ExtractJob, run_job


def main(argv=None):
    parser = argparse.ArgumentParser(
        prog="mmpfn-extract",
        description="Extract frozen [CLS] embeddings into an MMPE file.")
    parser.add_argument("--modality", required=True, choices=["image", "text"])
    parser.add_argument("--manifest", required=True,
                        help="CSV manifest, row-aligned with the tabular data")
    parser.add_argument("--encoder", required=True, help="encoder identifier")
    parser.add_argument("--out", required=True, help="output .mmpe path")
    parser.add_argument("--column", default="",
                        help="manifest column to read "
                             "(default: 'path' for images, 'text' for text)")
    args = parser.parse_args(argv)
    job = ExtractJob(modality=args.modality, manifest=args.manifest,
                     encoder_id=args.encoder, out_path=args.out,
                     column=args.column)
    try:
        report = run_job(job)
    except (KeyError, ValueError, RuntimeError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    print(f"wrote {report.rows} x {job.modality} embeddings to {job.out_path} "
          f"(fingerprint {report.fingerprint}; "
          f"{len(report.flagged_rows)} flagged rows)")
    return 0


if __name__ == "__main__":
    sys.exit(main())
