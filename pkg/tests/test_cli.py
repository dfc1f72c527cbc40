import csv
import io
import json
import subprocess
import sys

import numpy as np
import pytest

from concmeasure import search_l2 as s2
from concmeasure.cli import main
from concmeasure.data import Dataset, gen_uniform_cube, write_csv


def run(capsys, *argv):
    code = main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


UNIFORM_L2 = ["measure", "--synthetic", "uniform", "--n", "1", "--m", "4000", "--metric", "l2",
              "--alpha", "0.1", "--epsilon", "0.05", "--balls", "1"]
SMALL_LINF = ["measure", "--synthetic", "gaussian", "--n", "2", "--m", "400", "--metric", "linf",
              "--alpha", "0.05", "--epsilon", "0.1", "--rects", "2", "--k-density", "5", "--restarts", "2"]


class TestCalculators:
    def test_convert(self, capsys):
        code, out, _ = run(capsys, "convert", "--n", "784", "--eps-inf", "0.2")
        assert code == 0
        assert out.startswith("eps_2 = 3.1595")
        doc = json.loads(out.split("\n", 1)[1])
        assert round(doc["eps_2"], 2) == 3.16

    def test_bound(self, capsys):
        code, out, _ = run(capsys, "bound", "--n", "1", "--T", "1", "--m", "1000000", "--delta", "0.05")
        assert code == 0
        doc = json.loads(out[out.index("{"):])
        assert 1 - doc["confidence"] == pytest.approx(1.06e-7, rel=1e-2)

    def test_bound_bad_delta(self, capsys):
        code, _, err = run(capsys, "bound", "--n", "1", "--T", "1", "--m", "100", "--delta", "2")
        assert code == 1 and "error" in err


class TestMeasure:
    def test_uniform_l2_report(self, capsys):
        code, out, _ = run(capsys, *UNIFORM_L2)
        assert code == 0
        doc = json.loads(out)
        est = doc["estimate"]
        assert est["feasible"] and est["metric"] == "l2" and est["T"] == 1
        assert est["test"]["advrisk"] == pytest.approx(0.15, abs=0.03)
        for part in ("train", "test"):
            assert 0 <= est[part]["risk"] <= est[part]["advrisk"] <= 1
        assert doc["intrinsic_robustness"]["train"] == pytest.approx(1 - est["train"]["advrisk"])
        assert doc["region"]["family"] == "ball_union"
        assert 0 <= doc["certificate"]["confidence"] <= 1
        assert set(doc) >= {"schema_version", "tool_version", "config", "data", "assumptions", "restart_stats"}
        assert doc["data"]["train"]["m"] == 4000 and doc["data"]["test"]["m"] == 4000

    def test_linf_report(self, capsys):
        code, out, _ = run(capsys, *SMALL_LINF)
        assert code == 0
        doc = json.loads(out)
        assert doc["region"]["family"] == "rect_complement"
        assert "best_q" in doc["estimate"]["details"]
        assert doc["restart_stats"]["restarts"] == 2

    def test_rerun_from_report_is_identical(self, capsys, tmp_path):
        first = tmp_path / "a.json"
        assert run(capsys, *SMALL_LINF, "--output", str(first))[0] == 0
        second = tmp_path / "b.json"
        assert run(capsys, "measure", "--config", str(first), "--output", str(second))[0] == 0
        assert first.read_bytes() == second.read_bytes()

    def test_config_values_can_be_overridden(self, capsys, tmp_path):
        first = tmp_path / "a.json"
        run(capsys, *SMALL_LINF, "--output", str(first))
        code, out, _ = run(capsys, "measure", "--config", str(first), "--alpha", "0.2")
        assert code == 0 and json.loads(out)["config"]["alpha"] == 0.2

    def test_explicit_train_test_files(self, capsys, tmp_path):
        tr, te = tmp_path / "tr.csv", tmp_path / "te.csv"
        write_csv(gen_uniform_cube(2, 120, 0), tr)
        write_csv(gen_uniform_cube(2, 80, 1), te)
        code, out, _ = run(capsys, "measure", "--train", str(tr), "--test", str(te), "--metric", "l2",
                           "--alpha", "0.1", "--epsilon", "0.05", "--balls", "2")
        assert code == 0
        doc = json.loads(out)
        assert (doc["data"]["train"]["m"], doc["data"]["test"]["m"]) == (120, 80)

    def test_split_of_single_file(self, capsys, tmp_path):
        path = tmp_path / "all.csv"
        write_csv(gen_uniform_cube(2, 100, 0), path)
        code, out, _ = run(capsys, "measure", "--data", str(path), "--train-fraction", "0.7", "--metric", "l2",
                           "--alpha", "0.1", "--epsilon", "0.05", "--T", "1")
        assert code == 0
        assert json.loads(out)["data"]["train"]["m"] == 70

    def test_trace(self, capsys, tmp_path):
        trace = tmp_path / "trace.csv"
        code, _, _ = run(capsys, *UNIFORM_L2[:-1], "3", "--trace", str(trace))
        assert code == 0
        assert len(list(csv.DictReader(open(trace)))) == 3


class TestExitCodes:
    def test_usage_missing_alpha(self, capsys):
        assert run(capsys, "measure", "--synthetic", "uniform", "--n", "1", "--m", "50", "--epsilon", "0.1")[0] == 1

    def test_usage_family_mismatch(self, capsys):
        argv = ["measure", "--synthetic", "uniform", "--n", "1", "--m", "50", "--metric", "l2",
                "--alpha", "0.1", "--epsilon", "0.1", "--rects", "2"]
        assert run(capsys, *argv)[0] == 1

    def test_usage_bad_alpha(self, capsys):
        argv = UNIFORM_L2.copy()
        argv[argv.index("0.1")] = "1.5"
        assert run(capsys, *argv)[0] == 1

    def test_data_error_missing_file(self, capsys, tmp_path):
        code, _, err = run(capsys, "measure", "--data", str(tmp_path / "nope.csv"), "--alpha", "0.1",
                           "--epsilon", "0.1", "--T", "1")
        assert code == 2 and "data error" in err

    def test_data_error_bad_csv(self, capsys, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("1,2\n3\n")
        assert run(capsys, "measure", "--data", str(path), "--alpha", "0.1", "--epsilon", "0.1", "--T", "1")[0] == 2

    def test_infeasible_l2(self, capsys, tmp_path):
        path = tmp_path / "two.csv"
        write_csv(Dataset([0.0, 1.0, 2.0, 3.0]), path)
        # the first ball reaches the target, leaving no uncovered point for later steps
        code, _, err = run(capsys, "measure", "--train", str(path), "--test", str(path), "--metric", "l2",
                           "--alpha", "0.9", "--epsilon", "0.1", "--balls", "5")
        assert code == 3 and "infeasible" in err

    def test_infeasible_oracle(self, capsys, tmp_path):
        path = tmp_path / "one.csv"
        write_csv(Dataset([0.0, 1.0]), path)
        code, out, _ = run(capsys, "oracle", "--data", str(path), "--family", "balls", "--alpha", "0.99",
                           "--epsilon", "0.1", "--T", "2")
        assert code in (0, 3)
        assert json.loads(out)["feasible"] == (code == 0)


class TestOtherCommands:
    def test_sweep_q(self, capsys):
        code, out, _ = run(capsys, "sweep-q", "--synthetic", "uniform", "--n", "1", "--m", "200",
                           "--alpha", "0.1", "--epsilon", "0.05", "--rects", "1", "--k-density", "5")
        assert code == 0
        rows = list(csv.reader(io.StringIO(out)))
        assert rows[0] == ["q", "feasible", "risk", "advrisk"] and len(rows) == 202

    def test_sweep_q_rejects_l2(self, capsys):
        code, _, _ = run(capsys, "sweep-q", "--synthetic", "uniform", "--n", "1", "--m", "50", "--metric", "l2",
                         "--alpha", "0.1", "--epsilon", "0.05", "--T", "1")
        assert code == 1

    def test_sweep_T(self, capsys):
        code, out, _ = run(capsys, "sweep-T", "--synthetic", "uniform", "--n", "2", "--m", "300", "--metric", "l2",
                           "--alpha", "0.1", "--epsilon", "0.05", "--T-list", "1,2,4")
        assert code == 0
        rows = list(csv.DictReader(io.StringIO(out)))
        assert [int(r["T"]) for r in rows] == [1, 2, 4]
        assert all(float(r["advrisk_train"]) >= float(r["risk_train"]) for r in rows)

    def test_oracle_balls_matches_greedy(self, capsys, tmp_path):
        ds = gen_uniform_cube(2, 50, 3)
        path = tmp_path / "pts.csv"
        write_csv(ds, path)
        code, out, _ = run(capsys, "oracle", "--data", str(path), "--family", "balls", "--alpha", "0.1",
                           "--epsilon", "0.05", "--T", "1")
        assert code == 0
        greedy = s2.greedy(ds, s2.L2Config(0.1, 0.05, 1))
        assert json.loads(out)["optimal_advrisk"] == greedy.n_exp / ds.m

    def test_knn_cache_env(self, capsys, tmp_path, monkeypatch):
        path = tmp_path / "pts.csv"
        write_csv(gen_uniform_cube(3, 60, 0), path)
        monkeypatch.setenv("CONC_CACHE_DIR", str(tmp_path / "cache"))
        code, out, _ = run(capsys, "knn-cache", "--data", str(path), "--k", "5")
        assert code == 0
        assert out.strip().endswith("-l1-k5.knn")
        assert (tmp_path / "cache").is_dir() and any((tmp_path / "cache").iterdir())

    def test_knn_cache_needs_directory(self, capsys, tmp_path, monkeypatch):
        path = tmp_path / "pts.csv"
        write_csv(gen_uniform_cube(1, 10, 0), path)
        monkeypatch.delenv("CONC_CACHE_DIR", raising=False)
        assert run(capsys, "knn-cache", "--data", str(path))[0] == 1


def test_module_entry_point():
    proc = subprocess.run([sys.executable, "-m", "concmeasure", "convert", "--n", "3072", "--eps-inf", "0.0313725"],
                          capture_output=True, text=True)
    assert proc.returncode == 0
    assert proc.stdout.startswith("eps_2 = 0.98")


def test_threads_flag_does_not_change_report(capsys):
    _, one, _ = run(capsys, *SMALL_LINF, "--threads", "1")
    _, four, _ = run(capsys, *SMALL_LINF, "--threads", "4")
    assert one == four
    assert np.isfinite(json.loads(one)["estimate"]["test"]["advrisk"])
