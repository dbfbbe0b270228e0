"""Command line for the embedding exporter: `extract images` / `extract texts`."""

from __future__ import annotations

import argparse
import logging
import os
import sys

from .emb1 import Emb1Error
from .encoders import EncoderError, known_models
from .jobs import ExtractJob, JobError, extract_images, extract_texts


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="extract", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    im = sub.add_parser("images", help="encode an image directory or dataset split")
    im.add_argument("--model", required=True, help=f"one of {known_models()}")
    im.add_argument("--data", required=True, help="image directory or dataset name")
    im.add_argument("--split", default="train", choices=["train", "test"])
    im.add_argument("--out", required=True)
    im.add_argument("--batch-size", type=int, default=64)
    im.add_argument("--device", default="cpu")
    im.add_argument("--data-root", default="datasets")

    tx = sub.add_parser("texts", help="encode a JSON list of text candidates")
    tx.add_argument("--model", required=True)
    tx.add_argument("--in", dest="infile", required=True)
    tx.add_argument("--out", required=True)
    tx.add_argument("--batch-size", type=int, default=256)
    tx.add_argument("--device", default="cpu")
    return p


def main(argv=None) -> int:
    logging.basicConfig(
        level=os.environ.get("EMBEXPORT_LOG", "INFO").upper(),
        format="%(levelname)s %(name)s: %(message)s",
    )
    args = build_parser().parse_args(argv)
    try:
        if args.command == "images":
            job = ExtractJob(
                model=args.model,
                source=args.data,
                out_path=args.out,
                split=args.split,
                batch_size=args.batch_size,
                device=args.device,
                data_root=args.data_root,
            )
            manifest = extract_images(job)
            print(f"wrote {len(manifest['ids'])} embeddings to {args.out}")
        else:
            job = ExtractJob(
                model=args.model,
                source=args.infile,
                out_path=args.out,
                batch_size=args.batch_size,
                device=args.device,
            )
            manifest = extract_texts(job)
            print(f"wrote {len(manifest['text_candidates'])} text embeddings to {args.out}")
        return 0
    except (JobError, EncoderError, Emb1Error, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
