"""Artifact output: canonical report JSON, sweep CSV, and rendered figures."""

from __future__ import annotations

import csv
import hashlib
from pathlib import Path

from .core import SearchReport, canonical_dumps

SWEEP_COLUMNS = ["method", "theta", "k", "seed", "loss", "perplexity", "evals", "wall_ms", "error"]


def write_search_report(report: SearchReport, path: str | Path,
                        extra_config: dict | None = None) -> None:
    """Serialize the report; identical configs and seeds give identical bytes."""
    payload = report.to_json_dict(extra_config)
    Path(path).write_bytes(canonical_dumps(payload).encode("utf-8") + b"\n")


def sha256_path(path: str | Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def write_sweep_csv(rows: list[dict], path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.DictWriter(f, fieldnames=SWEEP_COLUMNS)
        writer.writeheader()
        for row in rows:
            writer.writerow({col: row.get(col, "") for col in SWEEP_COLUMNS})


def write_sweep_json(rows: list[dict], config: dict, path: str | Path) -> None:
    payload = {"schema_version": 1, "kind": "sweep", "config": config, "rows": rows}
    Path(path).write_bytes(canonical_dumps(payload).encode("utf-8") + b"\n")


def _new_figure(width: float = 7.0, height: float = 4.4):
    from matplotlib.backends.backend_agg import FigureCanvasAgg
    from matplotlib.figure import Figure

    fig = Figure(figsize=(width, height))
    FigureCanvasAgg(fig)
    return fig


def render_sweep_figure(rows: list[dict], path: str | Path) -> None:
    """Loss-vs-sparsity comparison: one line per method, mean over seeds."""
    fig = _new_figure()
    ax = fig.subplots()
    methods = sorted({row["method"] for row in rows})
    for method in methods:
        by_theta: dict[float, list[float]] = {}
        for row in rows:
            if row["method"] != method or row.get("error"):
                continue
            by_theta.setdefault(float(row["theta"]), []).append(float(row["loss"]))
        if not by_theta:
            continue
        thetas = sorted(by_theta)
        means = [sum(by_theta[t]) / len(by_theta[t]) for t in thetas]
        ax.plot(thetas, means, marker="o", label=method)
        for theta, losses in by_theta.items():
            if len(losses) > 1:
                ax.scatter([theta] * len(losses), losses, s=12, alpha=0.35)
    ax.set_xlabel("sparsity (fraction of layers pruned)")
    ax.set_ylabel("calibration loss (mean NLL)")
    ax.set_title("Search comparison across sparsity levels")
    ax.grid(alpha=0.3)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=130)


def render_trace_figure(report: SearchReport, path: str | Path) -> None:
    """Best-loss trajectory of a single run."""
    fig = _new_figure()
    ax = fig.subplots()
    xs, ys = [], []
    for i, row in enumerate(report.trace):
        loss = row.get("best_loss", row.get("loss"))
        if loss is None:
            continue
        xs.append(row.get("step", row.get("evals", row.get("trial", i))))
        ys.append(loss)
    ax.plot(xs, ys, marker=".", label=f"{report.method} best loss")
    if report.method == "evo":
        means = [row["mean_loss"] for row in report.trace if "mean_loss" in row]
        if len(means) == len(xs):
            ax.plot(xs, means, linestyle="--", alpha=0.6, label="population mean")
    ax.set_xlabel("search step")
    ax.set_ylabel("calibration loss (mean NLL)")
    ax.set_title(f"{report.method}: m={report.layer_count}, k={report.pruned_count}")
    ax.grid(alpha=0.3)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=130)
