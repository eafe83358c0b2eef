from __future__ import annotations

import csv
import json
import sys
from pathlib import Path

import pytest

from evoprune.cli import main

from util import CORPUS_PATH

TOY6 = "toy:seed=3,layers=6,d_model=16,heads=2,d_ff=32,max_len=64"


@pytest.fixture(scope="module")
def dataset_file(tmp_path_factory) -> Path:
    out = tmp_path_factory.mktemp("data") / "dataset.json"
    code = main([
        "sample", "--corpus", str(CORPUS_PATH), "--out", str(out),
        "--clusters", "2", "--sample-len", "48", "--embed-dim", "32", "--seed", "1",
    ])
    assert code == 0
    return out


def read_report(path: Path) -> dict:
    return json.loads(path.read_text())


class TestSample:
    def test_cluster_arithmetic(self, tmp_path):
        out = tmp_path / "ds.json"
        code = main([
            "sample", "--corpus", str(CORPUS_PATH), "--out", str(out),
            "--clusters", "3", "--per-cluster", "2", "--sample-len", "32",
            "--embed-dim", "32",
        ])
        assert code == 0
        payload = json.loads(out.read_text())
        samples = [s for group in payload["groups"] for s in group]
        assert len(samples) == 6
        assert all(len(s) == 32 for s in samples)

    def test_rerun_byte_identical(self, tmp_path):
        args = [
            "sample", "--corpus", str(CORPUS_PATH),
            "--clusters", "2", "--sample-len", "40", "--embed-dim", "32", "--seed", "9",
        ]
        a, b = tmp_path / "a.json", tmp_path / "b.json"
        assert main(args + ["--out", str(a)]) == 0
        assert main(args + ["--out", str(b)]) == 0
        assert a.read_bytes() == b.read_bytes()

    def test_missing_corpus_is_usage_error(self, tmp_path):
        code = main(["sample", "--corpus", str(tmp_path / "nope.txt"), "--out", str(tmp_path / "o.json")])
        assert code == 2


class TestSearch:
    def test_ideal_report_contents(self, dataset_file, tmp_path):
        out = tmp_path / "report.json"
        code = main([
            "search", "--method", "ideal", "--dataset", str(dataset_file),
            "--oracle", TOY6, "--theta", "0.5", "--out", str(out),
        ])
        assert code == 0
        report = read_report(out)
        assert report["method"] == "ideal"
        assert report["oracle_evals"] == 20  # C(6,3)
        assert report["pruned_count"] == 3
        assert sum(report["best"]["mask"]) == 3
        assert report["config"]["dataset"]["path"] == str(dataset_file)

    def test_greedy_k1_matches_ideal_k1(self, dataset_file, tmp_path):
        outs = {}
        for method in ("greedy", "ideal"):
            out = tmp_path / f"{method}.json"
            code = main([
                "search", "--method", method, "--dataset", str(dataset_file),
                "--oracle", TOY6, "--theta", "0.17", "--out", str(out),
            ])
            assert code == 0
            outs[method] = read_report(out)
        assert outs["greedy"]["best"]["mask"] == outs["ideal"]["best"]["mask"]

    def test_evo_trace_records_generations(self, dataset_file, tmp_path):
        out = tmp_path / "evo.json"
        code = main([
            "search", "--method", "evo", "--dataset", str(dataset_file),
            "--oracle", TOY6, "--theta", "0.5", "--out", str(out),
            "--generations", "12", "--population", "8",
        ])
        assert code == 0
        report = read_report(out)
        assert report["trace"][-1]["step"] == 12
        assert report["config"]["generations"] == 12

    def test_plot_file_written(self, dataset_file, tmp_path):
        out = tmp_path / "r.json"
        png = tmp_path / "trace.png"
        code = main([
            "search", "--method", "evo", "--dataset", str(dataset_file),
            "--oracle", TOY6, "--theta", "0.5", "--out", str(out),
            "--generations", "4", "--population", "6", "--plot", str(png),
        ])
        assert code == 0
        assert png.stat().st_size > 1000

    def test_checkpoint_oracle_spec(self, dataset_file, tmp_path):
        ckpt = tmp_path / "model.bin"
        assert main([
            "make-model", "--out", str(ckpt), "--seed", "3", "--layers", "6",
            "--d-model", "16", "--heads", "2", "--d-ff", "32", "--max-len", "64",
        ]) == 0
        out_a, out_b = tmp_path / "a.json", tmp_path / "b.json"
        base = ["search", "--method", "random", "--dataset", str(dataset_file),
                "--theta", "0.5", "--trials", "16"]
        assert main(base + ["--oracle", f"toy:{ckpt}", "--out", str(out_a)]) == 0
        assert main(base + ["--oracle", TOY6, "--out", str(out_b)]) == 0
        assert read_report(out_a)["best"]["loss"] == read_report(out_b)["best"]["loss"]

    def test_budget_exit_code(self, dataset_file, tmp_path):
        code = main([
            "search", "--method", "ideal", "--dataset", str(dataset_file),
            "--oracle", TOY6, "--theta", "0.5", "--max-evals", "3",
            "--out", str(tmp_path / "x.json"),
        ])
        assert code == 4

    def test_oracle_failure_exit_code(self, dataset_file, tmp_path):
        code = main([
            "search", "--method", "greedy", "--dataset", str(dataset_file),
            "--oracle", f"exec:{sys.executable} -c pass", "--theta", "0.5",
            "--out", str(tmp_path / "x.json"),
        ])
        assert code == 3

    def test_degenerate_theta_exit_code(self, dataset_file, tmp_path):
        code = main([
            "search", "--method", "greedy", "--dataset", str(dataset_file),
            "--oracle", TOY6, "--theta", "0.01", "--out", str(tmp_path / "x.json"),
        ])
        assert code == 2

    def test_unknown_method_usage_error(self, dataset_file):
        code = main([
            "search", "--method", "hillclimb", "--dataset", str(dataset_file),
            "--oracle", TOY6, "--theta", "0.5",
        ])
        assert code == 2


class TestSweep:
    def test_grid_outputs(self, dataset_file, tmp_path):
        prefix = tmp_path / "sweep"
        code = main([
            "sweep", "--dataset", str(dataset_file), "--oracle", TOY6,
            "--thetas", "0.17,0.5", "--methods", "greedy,random", "--seeds", "0,1",
            "--out-prefix", str(prefix), "--trials", "8",
        ])
        assert code == 0
        with open(prefix.with_suffix(".csv")) as f:
            rows = list(csv.DictReader(f))
        assert len(rows) == 2 * 2 * 2
        assert all(row["error"] == "" for row in rows)
        ks = {(row["theta"], row["k"]) for row in rows}
        assert ks == {("0.17", "1"), ("0.5", "3")}
        assert prefix.with_suffix(".json").exists()
        assert prefix.with_suffix(".png").stat().st_size > 1000

    def test_failed_rows_recorded_not_fatal(self, dataset_file, tmp_path):
        prefix = tmp_path / "sweep"
        code = main([
            "sweep", "--dataset", str(dataset_file), "--oracle", TOY6,
            "--thetas", "0.5", "--methods", "ideal,random", "--seeds", "0",
            "--out-prefix", str(prefix), "--max-evals", "2", "--trials", "4",
            "--no-figure",
        ])
        assert code == 0
        with open(prefix.with_suffix(".csv")) as f:
            rows = list(csv.DictReader(f))
        by_method = {row["method"]: row for row in rows}
        assert "BudgetExceeded" in by_method["ideal"]["error"]
        assert by_method["ideal"]["loss"] == ""
        assert by_method["random"]["error"] == ""

    def test_empty_theta_list_usage_error(self, dataset_file, tmp_path):
        code = main([
            "sweep", "--dataset", str(dataset_file), "--oracle", TOY6,
            "--thetas", ",", "--out-prefix", str(tmp_path / "s"),
        ])
        assert code == 2

    def test_ideal_seed_invariant(self, dataset_file, tmp_path):
        prefix = tmp_path / "sweep"
        code = main([
            "sweep", "--dataset", str(dataset_file), "--oracle", TOY6,
            "--thetas", "0.5", "--methods", "ideal", "--seeds", "0,7",
            "--out-prefix", str(prefix), "--no-figure",
        ])
        assert code == 0
        with open(prefix.with_suffix(".csv")) as f:
            rows = list(csv.DictReader(f))
        assert len(rows) == 2
        assert rows[0]["loss"] == rows[1]["loss"]

    def test_parallel_rows_same_rows(self, dataset_file, tmp_path):
        args = [
            "sweep", "--dataset", str(dataset_file), "--oracle", TOY6,
            "--thetas", "0.5", "--methods", "greedy,random", "--seeds", "0",
            "--trials", "8", "--no-figure",
        ]
        seq_prefix = tmp_path / "seq"
        par_prefix = tmp_path / "par"
        assert main(args + ["--out-prefix", str(seq_prefix)]) == 0
        assert main(args + ["--out-prefix", str(par_prefix), "--parallel-rows", "2"]) == 0
        seq = json.loads(seq_prefix.with_suffix(".json").read_text())
        par = json.loads(par_prefix.with_suffix(".json").read_text())
        strip = lambda rows: [{k: v for k, v in r.items() if k != "wall_ms"} for r in rows]
        assert strip(seq["rows"]) == strip(par["rows"])


class TestConformCommand:
    def test_conform_toy_server(self):
        spec = "exec:" + " ".join([
            sys.executable, "-m", "evoprune", "serve-toy",
            "--seed", "2", "--layers", "4", "--d-model", "16", "--heads", "2",
            "--d-ff", "32", "--max-len", "64",
        ])
        assert main(["conform", "--oracle", spec]) == 0

    def test_conform_rejects_toy_spec(self):
        assert main(["conform", "--oracle", "toy:seed=0"]) == 2


class TestUsage:
    def test_no_command(self):
        assert main([]) == 2

    def test_help_exits_zero(self):
        assert main(["--help"]) == 0


class TestDefaults:
    def test_search_defaults_pinned(self):
        from evoprune.cli import build_parser

        args = build_parser().parse_args([
            "search", "--method", "evo", "--dataset", "d", "--oracle", "o", "--theta", "0.5",
        ])
        assert args.generations == 100
        assert args.population == 64
        assert args.selection_fraction == 0.30
        assert args.elitism == 1
        assert args.mutation_rate is None  # resolves to 1/m

    def test_sample_defaults(self):
        from evoprune.cli import build_parser

        args = build_parser().parse_args(["sample", "--corpus", "c"])
        assert args.clusters == 5
        assert args.per_cluster == 1
        assert args.sample_len == 2048


class TestEnvOverrides:
    def test_workers_env_equals_flag(self, dataset_file, tmp_path, monkeypatch):
        base = [
            "search", "--method", "evo", "--dataset", str(dataset_file),
            "--oracle", TOY6, "--theta", "0.5",
            "--generations", "4", "--population", "6", "--seed", "2",
        ]
        flag_out = tmp_path / "flag.json"
        assert main(base + ["--workers", "3", "--out", str(flag_out)]) == 0
        monkeypatch.setenv("EVOPRUNE_WORKERS", "3")
        env_out = tmp_path / "env.json"
        assert main(base + ["--out", str(env_out)]) == 0
        assert flag_out.read_bytes() == env_out.read_bytes()

    def test_bad_env_value_is_usage_error(self, dataset_file, tmp_path, monkeypatch):
        monkeypatch.setenv("EVOPRUNE_WORKERS", "many")
        code = main([
            "search", "--method", "greedy", "--dataset", str(dataset_file),
            "--oracle", TOY6, "--theta", "0.5", "--out", str(tmp_path / "x.json"),
        ])
        assert code == 2


class TestRemoteEmbedder:
    def test_sample_with_oracle_embedder(self, tmp_path):
        spec = "exec:" + " ".join([
            sys.executable, "-m", "evoprune", "serve-toy",
            "--seed", "1", "--layers", "4", "--d-model", "16", "--heads", "2",
            "--d-ff", "32", "--max-len", "64", "--embed-dim", "32",
        ])
        out = tmp_path / "remote.json"
        code = main([
            "sample", "--corpus", str(CORPUS_PATH), "--out", str(out),
            "--clusters", "2", "--sample-len", "32", "--embed-dim", "32",
            "--embedder", spec,
        ])
        assert code == 0
        payload = json.loads(out.read_text())
        assert payload["provenance"]["embedder"] == spec
        assert len(payload["groups"]) == 2
