"""Launcher: build the model (tiny random by default, real by id) and serve."""

from __future__ import annotations

import argparse
import sys

import torch

from .model import BYTE_VOCAB_SIZE, LayerDropHost
from .server import serve_stdio, serve_tcp


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="py-oracle",
        description="Serve layer-drop losses and embeddings for a torch transformer over NDJSON.",
    )
    parser.add_argument("--model-id", default=None,
                        help="load a real checkpoint by id (default: tiny random model)")
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--layers", type=int, default=4)
    parser.add_argument("--d-model", type=int, default=32)
    parser.add_argument("--heads", type=int, default=4)
    parser.add_argument("--vocab", type=int, default=BYTE_VOCAB_SIZE)
    parser.add_argument("--max-positions", type=int, default=512)
    parser.add_argument("--tcp", default=None, help="host:port; default serves stdio")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    torch.set_num_threads(1)  # single-threaded loop; keeps results reproducible
    try:
        if args.model_id:
            host = LayerDropHost.from_pretrained(args.model_id)
        else:
            host = LayerDropHost.tiny(
                seed=args.seed, layers=args.layers, d_model=args.d_model,
                heads=args.heads, vocab_size=args.vocab, max_positions=args.max_positions,
            )
    except Exception as e:
        print(f"model load failed: {e}", file=sys.stderr)
        return 1
    print(
        f"serving {args.model_id or 'tiny random model'} "
        f"({host.layer_count} layers, vocab {host.vocab_size})",
        file=sys.stderr, flush=True,
    )
    if args.tcp:
        bind_host, _, port = args.tcp.rpartition(":")
        if not bind_host or not port.isdigit():
            print(f"--tcp expects host:port, got {args.tcp!r}", file=sys.stderr)
            return 2
        serve_tcp(host, bind_host, int(port))
    else:
        serve_stdio(host)
    return 0


if __name__ == "__main__":
    sys.exit(main())
