import json

import numpy as np
import pytest

from classalign import data
from classalign.cli import main


def run(argv):
    return main([str(a) for a in argv])


def gen(tmp_path, name="pair", **overrides):
    out = tmp_path / name
    argv = ["gen-data", "--seed", 3, "--classes", 3, "--dim", 2,
            "--shift", "1.0,0.5,0.3", "--max-count", 30, "--out", out]
    for key, value in overrides.items():
        argv += [f"--{key.replace('_', '-')}", value]
    assert run(argv) == 0
    return out


FAST_TRAIN = ["--steps", 40, "--eval-period", 20, "--hidden-dims", "12",
              "--feature-dim", 8, "--head-hidden-dim", 8, "--lr", 0.01]


class TestGenData:
    def test_outputs_and_manifest(self, tmp_path):
        out = gen(tmp_path)
        for name in ("source.csv", "target.csv", "target_labels.csv", "manifest.json"):
            assert (out / name).exists()
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["status"] == "complete"
        assert manifest["num_classes"] == 3
        target = data.load_dataset(out / "target.csv", 3)
        assert (target.labels == -1).all()

    def test_same_flags_byte_identical(self, tmp_path):
        a = gen(tmp_path, "a")
        b = gen(tmp_path, "b")
        for name in ("source.csv", "target.csv", "target_labels.csv"):
            assert (a / name).read_bytes() == (b / name).read_bytes()

    def test_rs_ut_profiles_cross(self, tmp_path):
        out = gen(tmp_path, "rsut", source_profile="rs_ut_source",
                  target_profile="rs_ut_target")
        source = data.load_dataset(out / "source.csv", 3)
        labels = data.load_labels(out / "target_labels.csv")
        src_counts = np.bincount(source.labels, minlength=3)
        tgt_counts = np.bincount(labels, minlength=3)
        assert np.array_equal(src_counts, tgt_counts[::-1])

    def test_single_class_rejected(self, tmp_path, capsys):
        code = run(["gen-data", "--classes", 1, "--out", tmp_path / "x"])
        assert code == 1
        assert "classes" in capsys.readouterr().err

    def test_regenerate_from_manifest(self, tmp_path):
        out = gen(tmp_path, "orig")
        redo = tmp_path / "redo"
        assert run(["gen-data", "--from-manifest", out / "manifest.json",
                    "--out", redo]) == 0
        for name in ("source.csv", "target.csv", "target_labels.csv"):
            assert (out / name).read_bytes() == (redo / name).read_bytes()


class TestTrain:
    def test_headline_configuration_runs(self, tmp_path):
        pair_dir = gen(tmp_path)
        out = tmp_path / "run"
        assert run(["train", "--data", pair_dir, "--out", out, "--objective", "mdd",
                    "--sampler", "aligned", "--mask", "on", *FAST_TRAIN]) == 0
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["status"] == "complete"
        assert manifest["config"]["objective.kind"] == "mdd_masked"
        lines = (out / "metrics.jsonl").read_text().strip().split("\n")
        assert len(lines) == 2
        assert (out / "summary.csv").exists() and (out / "checkpoint.npz").exists()

    def test_dann_aligned_configuration(self, tmp_path):
        pair_dir = gen(tmp_path)
        out = tmp_path / "run"
        assert run(["train", "--data", pair_dir, "--out", out, "--objective", "dann",
                    "--sampler", "aligned", *FAST_TRAIN]) == 0
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["config"]["objective.kind"] == "dann"

    def test_eta_zero_supervised_only(self, tmp_path):
        pair_dir = gen(tmp_path)
        out = tmp_path / "run"
        assert run(["train", "--data", pair_dir, "--out", out, "--eta", 0,
                    "--sampler", "random", *FAST_TRAIN]) == 0
        record = json.loads(
            (out / "metrics.jsonl").read_text().strip().split("\n")[-1])
        assert record["mean_transfer_loss"] is None

    def test_validation_errors_enumerated(self, tmp_path, capsys):
        pair_dir = gen(tmp_path)
        code = run(["train", "--data", pair_dir, "--out", tmp_path / "r",
                    "--steps", -4, "--per-class", 0])
        assert code == 1
        err = capsys.readouterr().err
        assert "steps" in err and "per_class" in err

    def test_rerun_from_manifest_byte_identical_metrics(self, tmp_path):
        pair_dir = gen(tmp_path)
        first = tmp_path / "first"
        assert run(["train", "--data", pair_dir, "--out", first, "--sampler",
                    "aligned", "--objective", "mdd", "--mask", "on",
                    *FAST_TRAIN]) == 0
        second = tmp_path / "second"
        assert run(["train", "--from-manifest", first / "manifest.json",
                    "--out", second]) == 0
        assert ((first / "metrics.jsonl").read_bytes()
                == (second / "metrics.jsonl").read_bytes())

    def test_config_file_with_flag_override(self, tmp_path):
        pair_dir = gen(tmp_path)
        config_path = tmp_path / "config.json"
        config_path.write_text(json.dumps({
            "steps": 40, "eval_period": 20, "sampler": "random",
            "objective.kind": "dann", "objective.eta": 0.0,
            "model.hidden_dims": [12], "model.feature_dim": 8,
            "model.head_hidden_dim": 8}))
        out = tmp_path / "run"
        assert run(["train", "--data", pair_dir, "--config", config_path,
                    "--out", out, "--steps", 20]) == 0
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["config"]["steps"] == 20  # flag beats file
        assert manifest["config"]["sampler"] == "random"


class TestEval:
    def test_eval_reproduces_last_logged_target_metrics(self, tmp_path):
        pair_dir = gen(tmp_path)
        out = tmp_path / "run"
        assert run(["train", "--data", pair_dir, "--out", out, "--sampler",
                    "aligned_oracle", "--objective", "mdd", *FAST_TRAIN]) == 0
        last = json.loads((out / "metrics.jsonl").read_text().strip().split("\n")[-1])
        report_path = tmp_path / "eval.json"
        assert run(["eval", "--checkpoint", out / "checkpoint.npz",
                    "--data", pair_dir / "target.csv",
                    "--labels", pair_dir / "target_labels.csv",
                    "--out", report_path]) == 0
        report = json.loads(report_path.read_text())
        assert report["accuracy"] == last["target_accuracy"]
        assert (report["per_class_average_accuracy"]
                == last["target_per_class_accuracy"])
        assert report["macro_f1"] == last["target_macro_f1"]

    def test_missing_checkpoint_fails(self, tmp_path, capsys):
        assert run(["eval", "--checkpoint", tmp_path / "nope.npz",
                    "--data", tmp_path / "nope.csv"]) == 1


class TestDivergence:
    def test_oracle_aligned_reports_zero_misaligned(self, tmp_path):
        pair_dir = gen(tmp_path)
        report_path = tmp_path / "divergence.json"
        assert run(["divergence", "--source", pair_dir / "source.csv",
                    "--target", pair_dir / "target.csv",
                    "--labels", pair_dir / "target_labels.csv",
                    "--sampler", "aligned_oracle", "--pairs", 8,
                    "--out", report_path]) == 0
        report = json.loads(report_path.read_text())
        assert report["pairs"] == 8
        assert all(r["misaligned_term"] == 0 for r in report["reports"])

    def test_random_sampler_and_stumps(self, tmp_path):
        pair_dir = gen(tmp_path)
        assert run(["divergence", "--source", pair_dir / "source.csv",
                    "--target", pair_dir / "target.csv",
                    "--labels", pair_dir / "target_labels.csv",
                    "--sampler", "random", "--hypotheses", "stumps",
                    "--pairs", 4]) == 0


class TestAblate:
    def test_two_by_two_grid_emits_four_rows(self, tmp_path):
        pair_dir = gen(tmp_path)
        grid_path = tmp_path / "grid.json"
        grid_path.write_text(json.dumps({
            "axes": {"sampler": ["random", "aligned"],
                     "objective.kind": ["mdd", "mdd_masked"]},
            "seeds": [0],
            "base": {"steps": 30, "eval_period": 15, "model.hidden_dims": [12],
                     "model.feature_dim": 8, "model.head_hidden_dim": 8,
                     "optimizer.learning_rate": 0.01},
        }))
        out = tmp_path / "ablation"
        assert run(["ablate", "--data", pair_dir, "--grid", grid_path,
                    "--out", out]) == 0
        lines = (out / "ablation.csv").read_text().strip().split("\n")
        assert len(lines) == 5  # header + 4 cells
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["status"] == "complete"


class TestManifestStatus:
    def test_failed_run_leaves_manifest_incomplete(self, tmp_path, capsys):
        pair_dir = gen(tmp_path)
        out = tmp_path / "run"
        code = run(["train", "--data", pair_dir, "--out", out, "--lr", 1e9,
                    *FAST_TRAIN[:4]])
        assert code == 1
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["status"] == "incomplete"
        assert "error" in capsys.readouterr().err
