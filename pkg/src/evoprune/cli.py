"""Experiment runner: dataset building, searches, sparsity sweeps, servers.

Exit codes: 0 success, 2 usage or configuration error, 3 oracle failure,
4 enumeration budget exceeded. EVOPRUNE_WORKERS, EVOPRUNE_HANDSHAKE_TIMEOUT
and EVOPRUNE_EVAL_TIMEOUT override the corresponding defaults.
"""

from __future__ import annotations

import argparse
import hashlib
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

from . import baselines, report as report_io
from .calibration import (
    DatasetConfig,
    HashedNgramEmbedder,
    RemoteEmbedder,
    build_dataset,
    load_dataset,
    save_dataset,
)
from .core import BudgetExceeded, DegenerateSparsity, EvaluationError, SearchReport, SparsityConfig
from .evolution import GAConfig, evolution_search
from .oracle import (
    DEFAULT_EVAL_TIMEOUT,
    DEFAULT_HANDSHAKE_TIMEOUT,
    OracleError,
    ProcessTransport,
    TcpTransport,
    resolve_oracle,
)
from .toylm import ToyLMConfig, init_model, save_model

METHODS = ("evo", "greedy", "ideal", "random")


class UsageError(ValueError):
    pass


def _env_float(name: str, default: float) -> float:
    raw = os.environ.get(name)
    if raw is None:
        return default
    try:
        return float(raw)
    except ValueError:
        raise UsageError(f"{name} must be a number, got {raw!r}") from None


def _env_int(name: str, default: int) -> int:
    raw = os.environ.get(name)
    if raw is None:
        return default
    try:
        return int(raw)
    except ValueError:
        raise UsageError(f"{name} must be an integer, got {raw!r}") from None


def _workers(args) -> int:
    if args.workers is not None:
        return max(1, args.workers)
    return max(1, _env_int("EVOPRUNE_WORKERS", 1))


def _timeouts() -> tuple[float, float]:
    return (
        _env_float("EVOPRUNE_HANDSHAKE_TIMEOUT", DEFAULT_HANDSHAKE_TIMEOUT),
        _env_float("EVOPRUNE_EVAL_TIMEOUT", DEFAULT_EVAL_TIMEOUT),
    )


def _read_corpus(path: str) -> tuple[str, dict]:
    p = Path(path)
    if p.is_dir():
        files = sorted(p.glob("*.txt"))
        if not files:
            raise UsageError(f"no .txt files in directory {path}")
        text = "\n\n".join(f.read_text(encoding="utf-8") for f in files)
        names = [f.name for f in files]
    elif p.is_file():
        text = p.read_text(encoding="utf-8")
        names = [p.name]
    else:
        raise UsageError(f"corpus path {path} does not exist")
    digest = hashlib.sha256(text.encode("utf-8")).hexdigest()
    return text, {"files": names, "sha256": digest}


def _resolve(spec: str, workers: int):
    handshake_timeout, eval_timeout = _timeouts()
    return resolve_oracle(
        spec, workers=workers,
        handshake_timeout=handshake_timeout, eval_timeout=eval_timeout,
    )


def cmd_sample(args) -> int:
    text, corpus_id = _read_corpus(args.corpus)
    config = DatasetConfig(
        k_clusters=args.clusters,
        per_cluster=args.per_cluster,
        sample_len=args.sample_len,
        sentences_per_chunk=args.sentences_per_chunk,
        embed_dim=args.embed_dim,
        kmeans_iters=args.kmeans_iters,
        seed=args.seed,
    )
    oracle = None
    if args.embedder == "builtin":
        embedder = HashedNgramEmbedder(config.embed_dim)
    else:
        oracle = _resolve(args.embedder, workers=1)
        embedder = RemoteEmbedder(oracle, name=args.embedder)
    try:
        dataset = build_dataset(text, config, embedder=embedder, corpus_id=corpus_id)
    finally:
        if oracle is not None:
            oracle.close()
    save_dataset(dataset, args.out)
    prov = dataset.provenance
    print(f"corpus: {', '.join(corpus_id['files'])} (sha256 {corpus_id['sha256'][:12]})")
    print(f"chunks: {prov['chunk_count']}  cluster sizes: {prov['cluster_sizes']}")
    print(
        f"dataset: {dataset.k_clusters} clusters x {dataset.per_cluster} samples "
        f"x {dataset.sample_len} tokens -> {args.out}"
    )
    return 0


def _run_search(method: str, oracle, dataset, theta: float, args) -> SearchReport:
    sparsity = SparsityConfig.from_theta(theta, oracle.layer_count)
    if method == "evo":
        ga = GAConfig(
            generations=args.generations,
            population=args.population,
            mutation_rate=args.mutation_rate,
            selection_fraction=args.selection_fraction,
            elitism=args.elitism,
            patience=args.patience,
            seed=args.seed,
        )
        return evolution_search(ga, sparsity, oracle, dataset)
    if method == "greedy":
        return baselines.greedy_search(oracle, dataset, sparsity.m, sparsity.k)
    if method == "ideal":
        return baselines.exhaustive_search(
            oracle, dataset, sparsity.m, sparsity.k, max_evals=args.max_evals
        )
    if method == "random":
        return baselines.random_search(
            oracle, dataset, sparsity.m, sparsity.k, trials=args.trials, seed=args.seed
        )
    raise UsageError(f"unknown method {method!r}")


def cmd_search(args) -> int:
    dataset = load_dataset(args.dataset)
    oracle = _resolve(args.oracle, workers=_workers(args))
    try:
        search_report = _run_search(args.method, oracle, dataset, args.theta, args)
    finally:
        oracle.close()
    extra = {
        "oracle": args.oracle,
        "dataset": {"path": str(args.dataset), "sha256": report_io.sha256_path(args.dataset)},
        "theta": args.theta,
    }
    report_io.write_search_report(search_report, args.out, extra_config=extra)
    if args.plot:
        report_io.render_trace_figure(search_report, args.plot)
    best = search_report.best
    print(
        f"method={search_report.method} best_mask={best.pattern.to_string()} "
        f"loss={best.loss:.6f} perplexity={best.perplexity:.4f} "
        f"evals={search_report.oracle_evals} wall_ms={search_report.wall_ms:.1f}"
    )
    print(f"report -> {args.out}")
    return 0


def _parse_list(raw: str, parse, what: str) -> list:
    items = [part.strip() for part in raw.split(",") if part.strip()]
    if not items:
        raise UsageError(f"empty {what} list")
    try:
        return [parse(part) for part in items]
    except ValueError as e:
        raise UsageError(f"bad {what} list {raw!r}: {e}") from None


def _sweep_row(method: str, theta: float, k: int, seed: int, args, dataset, workers: int) -> dict:
    args.seed = seed
    oracle = _resolve(args.oracle, workers=workers)
    try:
        run = _run_search(method, oracle, dataset, theta, args)
    finally:
        oracle.close()
    return {
        "method": method, "theta": theta, "k": k, "seed": seed,
        "loss": run.best.loss, "perplexity": run.best.perplexity,
        "evals": run.oracle_evals, "wall_ms": round(run.wall_ms, 3), "error": "",
    }


def cmd_sweep(args) -> int:
    methods = _parse_list(args.methods, str, "method")
    for method in methods:
        if method not in METHODS:
            raise UsageError(f"unknown method {method!r}; choose from {', '.join(METHODS)}")
    thetas = _parse_list(args.thetas, float, "sparsity")
    seeds = _parse_list(args.seeds, int, "seed")
    dataset = load_dataset(args.dataset)
    workers = _workers(args)

    probe = _resolve(args.oracle, workers=1)
    try:
        m = probe.layer_count
        ks = {theta: SparsityConfig.from_theta(theta, m).k for theta in thetas}
    finally:
        probe.close()

    grid = [
        (method, theta, seed)
        for method in methods for theta in thetas for seed in seeds
    ]

    def run_row(cell) -> dict:
        method, theta, seed = cell
        row_args = argparse.Namespace(**vars(args))
        try:
            return _sweep_row(method, theta, ks[theta], seed, row_args, dataset, workers)
        except Exception as e:
            return {
                "method": method, "theta": theta, "k": ks[theta], "seed": seed,
                "loss": "", "perplexity": "", "evals": "", "wall_ms": "",
                "error": f"{type(e).__name__}: {e}",
            }

    if args.parallel_rows > 1:
        with ThreadPoolExecutor(max_workers=args.parallel_rows) as pool:
            rows = list(pool.map(run_row, grid))
    else:
        rows = [run_row(cell) for cell in grid]

    prefix = Path(args.out_prefix)
    csv_path = prefix.with_suffix(".csv")
    json_path = prefix.with_suffix(".json")
    config = {
        "oracle": args.oracle,
        "dataset": {"path": str(args.dataset), "sha256": report_io.sha256_path(args.dataset)},
        "methods": methods, "thetas": thetas, "seeds": seeds,
        "layer_count": m, "k_by_theta": {str(t): ks[t] for t in thetas},
    }
    report_io.write_sweep_csv(rows, csv_path)
    report_io.write_sweep_json(rows, config, json_path)
    outputs = [str(csv_path), str(json_path)]
    if not args.no_figure:
        png_path = prefix.with_suffix(".png")
        report_io.render_sweep_figure(rows, png_path)
        outputs.append(str(png_path))
    failures = sum(1 for row in rows if row["error"])
    print(f"sweep: {len(rows)} rows ({failures} failed) -> {', '.join(outputs)}")
    for row in rows:
        status = row["error"] or f"loss={row['loss']:.6f} evals={row['evals']}"
        print(f"  {row['method']:>6} theta={row['theta']:<5} k={row['k']} seed={row['seed']} {status}")
    return 0


def cmd_serve_toy(args) -> int:
    from . import server

    if args.checkpoint:
        from .toylm import load_model

        model = load_model(args.checkpoint)
    else:
        model = init_model(ToyLMConfig(
            d_model=args.d_model, n_heads=args.heads, n_layers=args.layers,
            d_ff=args.d_ff, max_seq_len=args.max_len, weight_seed=args.seed,
        ))
    embedder = HashedNgramEmbedder(args.embed_dim)
    if args.tcp:
        host, _, port = args.tcp.rpartition(":")
        if not host or not port.isdigit():
            raise UsageError(f"--tcp expects host:port, got {args.tcp!r}")
        server.serve_tcp(model, host, int(port), embedder)
    else:
        server.serve_stdio(model, embedder)
    return 0


def cmd_make_model(args) -> int:
    model = init_model(ToyLMConfig(
        d_model=args.d_model, n_heads=args.heads, n_layers=args.layers,
        d_ff=args.d_ff, max_seq_len=args.max_len, weight_seed=args.seed,
    ))
    save_model(model, args.out)
    print(f"checkpoint -> {args.out} (sha256 {report_io.sha256_path(args.out)[:12]})")
    return 0


def cmd_conform(args) -> int:
    from .conformance import run_conformance

    kind, _, rest = args.oracle.partition(":")
    handshake_timeout, _ = _timeouts()
    if kind == "exec":
        import shlex

        transport = ProcessTransport(shlex.split(rest))
    elif kind == "tcp":
        host, _, port = rest.rpartition(":")
        if not host or not port.isdigit():
            raise UsageError(f"tcp oracle spec must be tcp:host:port, got {args.oracle!r}")
        transport = TcpTransport(host, int(port), connect_timeout=handshake_timeout)
    else:
        raise UsageError("conform needs an exec: or tcp: oracle spec")
    try:
        results = run_conformance(transport, timeout=handshake_timeout)
    finally:
        transport.close()
    failed = 0
    for res in results:
        status = "PASS" if res.ok else f"FAIL ({res.detail})"
        print(f"  {res.name:<18} {status}")
        failed += 0 if res.ok else 1
    print(f"conformance: {len(results) - failed}/{len(results)} cases passed")
    return 0 if failed == 0 else 3


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="evoprune",
        description="Layer-pruning search: calibration sampling, evolutionary and baseline searches, sweeps.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("sample", help="build a cluster-stratified calibration dataset")
    p.add_argument("--corpus", required=True, help="UTF-8 text file or directory of .txt files")
    p.add_argument("--out", default="calibration_dataset.json")
    p.add_argument("--clusters", type=int, default=5)
    p.add_argument("--per-cluster", type=int, default=1)
    p.add_argument("--sample-len", type=int, default=2048)
    p.add_argument("--sentences-per-chunk", type=int, default=5)
    p.add_argument("--embed-dim", type=int, default=256)
    p.add_argument("--kmeans-iters", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--embedder", default="builtin",
                   help="'builtin' or an oracle spec with the embed capability")
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("search", help="run one search and write its report")
    p.add_argument("--method", required=True, choices=METHODS)
    p.add_argument("--dataset", required=True)
    p.add_argument("--oracle", required=True,
                   help="toy:<ckpt|k=v,...>, exec:<command>, or tcp:<host:port>")
    p.add_argument("--theta", type=float, required=True, help="fraction of layers to prune")
    p.add_argument("--out", default="search_report.json")
    p.add_argument("--plot", default=None, help="optional PNG of the loss trace")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--workers", type=int, default=None)
    p.add_argument("--generations", type=int, default=100)
    p.add_argument("--population", type=int, default=64)
    p.add_argument("--mutation-rate", type=float, default=None)
    p.add_argument("--selection-fraction", type=float, default=0.30)
    p.add_argument("--elitism", type=int, default=1)
    p.add_argument("--patience", type=int, default=0)
    p.add_argument("--trials", type=int, default=64, help="random search budget")
    p.add_argument("--max-evals", type=int, default=baselines.DEFAULT_MAX_EVALS)
    p.set_defaults(func=cmd_search)

    p = sub.add_parser("sweep", help="grid of (method x sparsity x seed) runs")
    p.add_argument("--dataset", required=True)
    p.add_argument("--oracle", required=True)
    p.add_argument("--thetas", required=True, help="comma-separated sparsity fractions")
    p.add_argument("--methods", default="greedy,ideal,evo")
    p.add_argument("--seeds", default="0")
    p.add_argument("--out-prefix", default="sweep")
    p.add_argument("--no-figure", action="store_true")
    p.add_argument("--parallel-rows", type=int, default=1)
    p.add_argument("--workers", type=int, default=None)
    p.add_argument("--generations", type=int, default=100)
    p.add_argument("--population", type=int, default=64)
    p.add_argument("--mutation-rate", type=float, default=None)
    p.add_argument("--selection-fraction", type=float, default=0.30)
    p.add_argument("--elitism", type=int, default=1)
    p.add_argument("--patience", type=int, default=0)
    p.add_argument("--trials", type=int, default=64)
    p.add_argument("--max-evals", type=int, default=baselines.DEFAULT_MAX_EVALS)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("serve-toy", help="serve the toy model over the oracle protocol")
    p.add_argument("--checkpoint", default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--layers", type=int, default=12)
    p.add_argument("--d-model", type=int, default=32)
    p.add_argument("--heads", type=int, default=4)
    p.add_argument("--d-ff", type=int, default=128)
    p.add_argument("--max-len", type=int, default=4096)
    p.add_argument("--embed-dim", type=int, default=256)
    p.add_argument("--tcp", default=None, help="host:port; default serves stdio")
    p.set_defaults(func=cmd_serve_toy)

    p = sub.add_parser("make-model", help="write a toy model checkpoint")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--layers", type=int, default=12)
    p.add_argument("--d-model", type=int, default=32)
    p.add_argument("--heads", type=int, default=4)
    p.add_argument("--d-ff", type=int, default=128)
    p.add_argument("--max-len", type=int, default=4096)
    p.set_defaults(func=cmd_make_model)

    p = sub.add_parser("conform", help="run the protocol conformance corpus against a server")
    p.add_argument("--oracle", required=True, help="exec:<command> or tcp:<host:port>")
    p.set_defaults(func=cmd_conform)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code) if e.code else 0
    try:
        return args.func(args)
    except BudgetExceeded as e:
        print(f"error: {e}", file=sys.stderr)
        return 4
    except (OracleError, EvaluationError) as e:
        print(f"oracle error: {e}", file=sys.stderr)
        return 3
    except (UsageError, DegenerateSparsity, ValueError) as e:
        print(f"usage error: {e}", file=sys.stderr)
        return 2
    except KeyboardInterrupt:
        return 130


if __name__ == "__main__":
    sys.exit(main())
