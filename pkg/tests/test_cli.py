import json

import numpy as np
import pytest

from odecausal import storage
from odecausal.cli import main


def run(*argv):
    return main([str(a) for a in argv])


@pytest.fixture(scope="module")
def lv_bundle(tmp_path_factory):
    out = tmp_path_factory.mktemp("data") / "lv"
    assert run("generate", "lv", "--t-end", 4.0, "--points", 40, "--seed", 1, "--out", out) == 0
    return out


@pytest.fixture(scope="module")
def linear1_bundle(tmp_path_factory):
    """Tiny first-order linear dataset driven by an explicit spec file."""
    root = tmp_path_factory.mktemp("data")
    spec = root / "spec.json"
    spec.write_text(
        json.dumps(
            {
                "A": [[-0.5, 0.0], [0.8, -1.0]],
                "x0": [1.0, 0.2],
                "t_end": 4.0,
                "points": 60,
            }
        )
    )
    out = root / "lin1"
    assert run("generate", "linear", "--spec", spec, "--out", out) == 0
    return out


@pytest.fixture(scope="module")
def linear1_checkpoint(linear1_bundle, tmp_path_factory):
    out = tmp_path_factory.mktemp("run") / "fit"
    rc = run(
        "train", "--data", linear1_bundle, "--epochs", 400, "--order", 1,
        "--activation", "linear", "--lambda", 1e-4, "--seed", 0, "--out", out,
    )
    assert rc == 0
    return out / "checkpoint.json"


class TestGenerate:
    def test_bundle_files_exist(self, lv_bundle):
        for name in ("trajectory.csv", "truth_graph.csv", "system.json", "corruption.json", "manifest.json"):
            assert (lv_bundle / name).exists()

    def test_lv_default_truth_graph_is_full(self, lv_bundle):
        adj = storage.read_graph_csv(lv_bundle / "truth_graph.csv")
        assert adj.shape == (2, 2) and np.all(adj == 1.0)

    def test_byte_identical_for_same_seed(self, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        for out in (a, b):
            assert run("generate", "linear", "--n", 3, "--t-end", 3.0, "--points", 30,
                       "--seed", 7, "--out", out) == 0
        for name in ("trajectory.csv", "truth_graph.csv", "system.json", "corruption.json"):
            assert (a / name).read_bytes() == (b / name).read_bytes()

    def test_row_budget_respected(self, tmp_path):
        out = tmp_path / "d"
        assert run("generate", "linear", "--n", 3, "--points", 120, "--t-end", 3.0,
                   "--seed", 0, "--out", out) == 0
        traj = storage.read_trajectory_csv(out / "trajectory.csv")
        assert len(traj) <= 200

    def test_manifest_echoes_config(self, lv_bundle):
        manifest = storage.read_json(lv_bundle / "manifest.json")
        assert manifest["status"] == "ok"
        assert manifest["config"]["system_config"]["alpha"] == 1.5
        assert manifest["version"]


class TestTrain:
    def test_outputs_and_manifest(self, linear1_checkpoint):
        run_dir = linear1_checkpoint.parent
        assert (run_dir / "training_log.csv").exists()
        manifest = storage.read_json(run_dir / "manifest.json")
        assert manifest["status"] == "ok"
        assert manifest["final_data_loss"] < 1e-3

    def test_lambda_zero_vs_positive_penalty(self, linear1_bundle, tmp_path):
        finals = {}
        for lam in (0.0, 1e-3):
            out = tmp_path / f"lam{lam}"
            assert run("train", "--data", linear1_bundle, "--epochs", 300, "--order", 1,
                       "--activation", "linear", "--lambda", lam, "--seed", 0, "--out", out) == 0
            log = (out / "training_log.csv").read_text().splitlines()
            finals[lam] = float(log[-1].split(",")[2])
        assert finals[1e-3] < finals[0.0]

    def test_numeric_failure_exit_code(self, linear1_bundle, tmp_path):
        rc = run("train", "--data", linear1_bundle, "--epochs", 50, "--order", 1,
                 "--activation", "linear", "--lambda", 0, "--lr", 1e4,
                 "--seed", 0, "--out", tmp_path / "boom")
        assert rc == 3
        manifest = storage.read_json(tmp_path / "boom" / "manifest.json")
        assert manifest["status"] == "error"


class TestInfer:
    def test_huge_epsilon_empties_adjacency(self, linear1_checkpoint, linear1_bundle, tmp_path):
        out = tmp_path / "inf"
        assert run("infer", "--checkpoint", linear1_checkpoint, "--data", linear1_bundle,
                   "--epsilon", 1e9, "--out", out) == 0
        adj = storage.read_graph_csv(out / "adjacency.csv")
        assert not adj.any()

    def test_linear_and_jacobian_modes_agree_on_linear_model(
        self, linear1_checkpoint, linear1_bundle, tmp_path
    ):
        adjs = {}
        for mode in ("linear", "jacobian"):
            out = tmp_path / mode
            assert run("infer", "--checkpoint", linear1_checkpoint, "--data", linear1_bundle,
                       "--mode", mode, "--out", out) == 0
            adjs[mode] = storage.read_graph_csv(out / "adjacency.csv")
        assert np.array_equal(adjs["linear"], adjs["jacobian"])

    def test_metrics_written_when_truth_present(self, linear1_checkpoint, linear1_bundle, tmp_path):
        out = tmp_path / "m"
        assert run("infer", "--checkpoint", linear1_checkpoint, "--data", linear1_bundle,
                   "--out", out) == 0
        metrics = storage.read_json(out / "metrics.json")
        assert set(metrics) == {"shd", "shd_bar", "tpr", "tnr", "missing", "extra", "reversed"}

    def test_plot_flag_renders_svgs(self, linear1_checkpoint, linear1_bundle, tmp_path):
        out = tmp_path / "p"
        assert run("infer", "--checkpoint", linear1_checkpoint, "--data", linear1_bundle,
                   "--mode", "jacobian", "--plot", "--out", out) == 0
        assert (out / "scores.svg").exists()
        assert (out / "jacobians.svg").exists()


class TestIntervene:
    def test_truth_only_simulation(self, linear1_bundle, tmp_path):
        spec = tmp_path / "iv.json"
        spec.write_text(json.dumps({
            "clamps": [{"index": 0, "value": 0.4}],
            "horizon": {"t_end": 2.0, "points": 20},
        }))
        out = tmp_path / "iv"
        assert run("intervene", "--interventions", spec,
                   "--system", linear1_bundle / "system.json", "--out", out) == 0
        traj = storage.read_trajectory_csv(out / "truth_trajectory.csv")
        assert np.all(traj.states[:, 0] == 0.4)

    def test_compare_learned_and_truth(self, linear1_bundle, linear1_checkpoint, tmp_path):
        spec = tmp_path / "iv.json"
        spec.write_text(json.dumps({
            "edits": [{"row": 0, "col": 0, "multiplier": 8.0}],
            "horizon": {"t_end": 2.0, "points": 20},
        }))
        out = tmp_path / "cmp"
        assert run("intervene", "--interventions", spec,
                   "--system", linear1_bundle / "system.json",
                   "--checkpoint", linear1_checkpoint, "--out", out) == 0
        report = storage.read_json(out / "report.json")
        assert "per_variable_sup_gap" in report
        assert (out / "truth_trajectory.csv").exists()
        assert (out / "learned_trajectory.csv").exists()

    def test_requires_some_target(self, tmp_path):
        spec = tmp_path / "iv.json"
        spec.write_text(json.dumps({"clamps": []}))
        assert run("intervene", "--interventions", spec, "--out", tmp_path / "x") == 2


class TestSweep:
    def test_empty_seeds_usage_error(self, tmp_path):
        assert run("sweep", "--seeds", "", "--out", tmp_path / "s") == 2

    def test_tiny_sweep_writes_table(self, tmp_path):
        out = tmp_path / "s"
        rc = run("sweep", "--dims", "3", "--sigmas", "0", "--irrs", "0",
                 "--seeds", "0", "--epochs", 30, "--t-end", 3.0, "--points", 30,
                 "--workers", 1, "--out", out)
        assert rc == 0
        lines = (out / "sweep.csv").read_text().splitlines()
        assert lines[0] == "dim,sigma,irr,seeds,shd_bar,tpr,tnr"
        assert len(lines) == 2
        runs = storage.read_json(out / "runs.json")
        assert runs[0]["dim"] == 3


class TestDemo:
    def test_demo_writes_report(self, tmp_path, capsys):
        out = tmp_path / "demo"
        assert run("demo-unidentifiability", "--out", out) == 0
        report = storage.read_json(out / "unidentifiability.json")
        assert report["sup_deviation_exact"] < 1e-10
        assert "Two distinct linear systems" in capsys.readouterr().out


class TestEntryPoint:
    def test_console_script_help(self):
        import subprocess, sys

        proc = subprocess.run(
            [sys.executable, "-m", "odecausal", "--version"], capture_output=True, text=True
        )
        assert proc.returncode == 0
        assert "odecausal" in proc.stdout
