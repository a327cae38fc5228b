"""CLI: ``embed-export export --model <id> --texts <sidecar> --out <file>``."""

from __future__ import annotations

import argparse
import sys

from .exporter import DEFAULT_MODEL, ExportError, ExportJob, export_embeddings


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="embed-export")
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("export", help="export per-channel token embeddings")
    p.add_argument("--model", default=DEFAULT_MODEL,
                   help="causal LM to run; any Hugging Face model id or local path "
                        f"(default: {DEFAULT_MODEL}; pass a large model id such as "
                        "meta-llama/Llama-3.1-8B for full-scale exports)")
    p.add_argument("--texts", required=True, help="JSON-lines text sidecar")
    p.add_argument("--out", required=True, help="output embedding file")
    p.add_argument("--max-tokens", type=int, default=64,
                   help="truncate each text to this many tokens")
    p.add_argument("--device", default="cpu")
    p.add_argument("--revision", default=None, help="model revision to pin")
    return parser


def run(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    job = ExportJob(model_id=args.model, texts_path=args.texts, out_path=args.out,
                    max_tokens=args.max_tokens, device=args.device,
                    revision=args.revision)
    try:
        summary = export_embeddings(job)
    except ExportError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    total = sum(c.n_tokens for c in summary.channels)
    print(f"wrote {args.out}: {len(summary.channels)} channels, "
          f"{total} tokens, d_tx={summary.d_tx}", file=sys.stderr)
    return 0


def main() -> None:
    sys.exit(run())
