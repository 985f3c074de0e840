import csv
import io
import json
import subprocess
import sys

import pytest

from amcflow.cli import main

from conftest import ABC_TABLE, DEMO_CORPUS, MC_DATASET, TOY_CORPUS


def run_cli(capsys, *argv):
    code = main(list(argv))
    captured = capsys.readouterr()
    return code, captured.out, captured.err


@pytest.fixture()
def small_dataset(tmp_path):
    lines = open(MC_DATASET, encoding="utf-8").read().splitlines()[:6]
    path = tmp_path / "small.jsonl"
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return str(path)


NGRAM_FLAGS = ["--provider", "ngram", "--corpus", str(TOY_CORPUS)]
TABLE_FLAGS = ["--provider", "table", "--table", str(ABC_TABLE)]


class TestInspectCommand:
    def test_json_payload(self, capsys):
        code, out, _ = run_cli(capsys, "inspect", *TABLE_FLAGS, "a b c")
        assert code == 0
        payload = json.loads(out)
        assert payload["tokens"] == ["a", "b", "c"]
        assert payload["scores"][1] == pytest.approx(0.6931, abs=1e-4)
        assert payload["losses"][1] == pytest.approx(0.2772, abs=1e-4)

    def test_csv_matches_json(self, capsys):
        code, json_out, _ = run_cli(capsys, "inspect", *TABLE_FLAGS, "a b c")
        assert code == 0
        code, csv_out, _ = run_cli(
            capsys, "inspect", *TABLE_FLAGS, "--format", "csv", "a b c"
        )
        assert code == 0
        payload = json.loads(json_out)
        rows = list(csv.reader(io.StringIO(csv_out)))
        scores = [float(r[4]) for r in rows[1:] if r[0] == "score"]
        assert scores == payload["scores"]

    def test_output_file(self, capsys, tmp_path):
        out_file = tmp_path / "inspect.json"
        code, out, _ = run_cli(
            capsys, "inspect", *TABLE_FLAGS, "--output", str(out_file), "a b c"
        )
        assert code == 0
        assert out == ""
        assert json.loads(out_file.read_text())["tokens"] == ["a", "b", "c"]


class TestGenerateCommand:
    def test_baseline_equals_amc_lambda_zero(self, capsys):
        prompt = "i would like to know : the capital of belfenland is"
        code, base, _ = run_cli(
            capsys, "generate", *NGRAM_FLAGS, "--mode", "baseline",
            "--max-tokens", "4", prompt,
        )
        assert code == 0
        code, amc, _ = run_cli(
            capsys, "generate", *NGRAM_FLAGS, "--mode", "amc", "--lambda", "0",
            "--max-tokens", "4", prompt,
        )
        assert code == 0
        assert base == amc

    def test_trace_step_count_matches_output(self, capsys, tmp_path):
        trace_file = tmp_path / "trace.json"
        code, out, _ = run_cli(
            capsys, "generate", *NGRAM_FLAGS, "--max-tokens", "5",
            "--trace", str(trace_file), "the capital of belfenland",
        )
        assert code == 0
        trace = json.loads(trace_file.read_text())
        emitted = out.strip().split()
        assert len(trace["steps"]) == len(emitted)
        assert [s["chosen"] for s in trace["steps"]] == emitted

    def test_demo_rank_never_worse_than_baseline(self, capsys, tmp_path):
        # rank of the fact completion among adjusted probabilities must be
        # at least as good as its baseline rank, for every grid lambda
        from amcflow import LAMBDA_GRID

        demo_flags = ["--provider", "ngram", "--corpus", str(DEMO_CORPUS),
                      "--order", "2"]
        prompt = "the capital of australia is"

        def rank_from_trace(path):
            step = json.loads(open(path).read())["steps"][0]
            ranked = [t for t, _ in step["adjusted"]["top"]]
            return ranked.index("canberra") + 1 if "canberra" in ranked else 99

        trace_file = tmp_path / "base.json"
        code, _, _ = run_cli(
            capsys, "generate", *demo_flags, "--mode", "baseline",
            "--max-tokens", "1", "--trace", str(trace_file), prompt,
        )
        assert code == 0
        base_rank = rank_from_trace(trace_file)
        for lam in LAMBDA_GRID:
            trace_file = tmp_path / f"amc-{lam}.json"
            code, _, _ = run_cli(
                capsys, "generate", *demo_flags, "--mode", "amc",
                "--lambda", str(lam), "--max-tokens", "1",
                "--trace", str(trace_file), prompt,
            )
            assert code == 0
            assert rank_from_trace(trace_file) <= base_rank


class TestEvalCommand:
    def test_report_on_small_dataset(self, capsys, small_dataset, tmp_path):
        report_file = tmp_path / "report.json"
        code, _, _ = run_cli(
            capsys, "eval-mc", *NGRAM_FLAGS, "--dataset", small_dataset,
            "--lambda", "0", "--output", str(report_file),
        )
        assert code == 0
        report = json.loads(report_file.read_text())
        assert report["accuracy"] == 1.0
        assert report["evaluated"] == 6
        assert report["config"]["lambda"] == 0.0

    def test_jobs_flag(self, capsys, small_dataset):
        code, out, _ = run_cli(
            capsys, "eval-mc", *NGRAM_FLAGS, "--dataset", small_dataset,
            "--lambda", "0", "--jobs", "3",
        )
        assert code == 0
        assert json.loads(out)["accuracy"] == 1.0


class TestMaskCommand:
    def test_csv_table_both_policies(self, capsys, small_dataset):
        code, out, _ = run_cli(
            capsys, "mask-experiment", *NGRAM_FLAGS, "--dataset", small_dataset,
            "--lambda", "0", "--k-values", "0,2", "--mask-seeds", "0,1",
        )
        assert code == 0
        rows = list(csv.reader(io.StringIO(out)))
        assert rows[0] == ["policy", "k", "seed", "accuracy"]
        policies = {r[0] for r in rows[1:]}
        assert policies == {"info-score", "random"}
        info_rows = [r for r in rows[1:] if r[0] == "info-score"]
        assert all(r[2] == "" for r in info_rows)


class TestTrainCommand:
    def test_summary_and_model_file(self, capsys, tmp_path):
        model_file = tmp_path / "model.json"
        code, out, _ = run_cli(
            capsys, "train-ngram", *NGRAM_FLAGS, "--order", "2",
            "--output", str(model_file),
        )
        assert code == 0
        summary = json.loads(out)
        assert summary["order"] == 2
        assert summary["vocabulary_size"] > 100
        model = json.loads(model_file.read_text())
        assert model["order"] == 2
        assert model["alpha"] == 0.01
        assert any(row["context"] == [] for row in model["contexts"])


class TestExitCodes:
    def test_missing_corpus_is_configuration_error(self, capsys):
        code, _, err = run_cli(capsys, "inspect", "--provider", "ngram", "a b")
        assert code == 2
        assert "configuration error" in err

    def test_unreachable_endpoint_is_provider_error(self, capsys):
        code, _, err = run_cli(
            capsys, "inspect", "--provider", "http",
            "--endpoint", "http://127.0.0.1:9", "--timeout-ms", "300",
            "--retries", "0", "a b",
        )
        assert code == 3
        assert "provider error" in err

    def test_bad_dataset_is_dataset_error(self, capsys, tmp_path):
        bad = tmp_path / "bad.jsonl"
        bad.write_text("not json\n", encoding="utf-8")
        code, _, err = run_cli(
            capsys, "eval-mc", *NGRAM_FLAGS, "--dataset", str(bad)
        )
        assert code == 4
        assert "dataset error" in err

    def test_unknown_flag_exits_two(self):
        with pytest.raises(SystemExit) as excinfo:
            main(["inspect", "--frobnicate", "a"])
        assert excinfo.value.code == 2


def test_module_entry_point_runs():
    result = subprocess.run(
        [sys.executable, "-m", "amcflow.cli", "--help"],
        capture_output=True, text=True, timeout=60,
    )
    assert result.returncode == 0
    assert "eval-mc" in result.stdout
