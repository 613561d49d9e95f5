"""End-to-end command-line behavior: exit codes, manifests, reproducibility."""

import json
import os

import numpy as np
import pytest

from clclsa import cli


def run(argv):
    return cli.dispatch(argv)


SYNTH_ARGS = ["--n", "60", "--views", "3", "--classes", "2", "--dims", "6,6,6",
              "--shared-dim", "6", "--sep", "1.5", "--seed", "7"]

TRAIN_ARGS = ["--seed", "3", "--epochs", "8", "--initial-lr", "1e-3",
              "--lr-schedule", "constant", "--lambda-al", "0.01",
              "--lambda-co", "0.1", "--lambda-cl", "0.01",
              "--set", "model.embed_dims=[4,4,4]", "--set", "model.ae_hidden=[4,3]",
              "--set", "model.dropout_p=0.1"]


@pytest.fixture()
def synth_dir(tmp_path):
    out = tmp_path / "data"
    assert run(["synth", *SYNTH_ARGS, "--out", str(out)]) == 0
    return out


class TestSynthTrainEval:
    def test_smoke_pipeline_produces_metrics(self, tmp_path, synth_dir, capsys):
        run_dir = tmp_path / "run"
        assert run(["train", "--data", str(synth_dir), "--out", str(run_dir),
                    *TRAIN_ARGS]) == 0
        checkpoint = run_dir / "checkpoint.json"
        assert checkpoint.exists()
        assert (run_dir / "epochs.csv").exists()
        assert (run_dir / "run_manifest.json").exists()
        metrics = tmp_path / "metrics.json"
        assert run(["eval", "--checkpoint", str(checkpoint), "--data", str(synth_dir),
                    "--out", str(metrics)]) == 0
        doc = json.loads(metrics.read_text())
        assert 0.0 <= doc["acc"] <= 1.0
        assert doc["n_subjects"] == 60

    def test_epoch_log_columns(self, tmp_path, synth_dir):
        run_dir = tmp_path / "run"
        run(["train", "--data", str(synth_dir), "--out", str(run_dir), *TRAIN_ARGS])
        header = (run_dir / "epochs.csv").read_text().splitlines()[0]
        assert header.split(",") == ["epoch", "l_clf", "l_al", "l_co", "l_cl",
                                     "total", "lr", "latent_variance", "train_acc"]


class TestSeedContract:
    def test_train_without_seed_is_usage_error(self, synth_dir, tmp_path, capsys):
        code = run(["train", "--data", str(synth_dir), "--out", str(tmp_path / "x")])
        assert code == 1
        assert "--seed" in capsys.readouterr().err

    def test_every_stochastic_subcommand_requires_seed(self, capsys):
        for command in sorted(cli.STOCHASTIC):
            code = run([command, "--out", "/tmp/nowhere", "--data", "/tmp/nowhere",
                        "--etas", "0.1", "--fix", "lambda_al=0.1",
                        "--vary", "lambda_co=0.1", "--vary", "lambda_cl=0.1",
                        "--eta", "0.1"][0:None if command != "synth" else 3])
            assert code == 1, command
        capsys.readouterr()

    def test_unknown_subcommand_is_usage_error(self, capsys):
        assert run(["frobnicate"]) == 1
        capsys.readouterr()

    def test_unknown_flag_is_usage_error(self, synth_dir, tmp_path, capsys):
        assert run(["synth", "--seed", "1", "--out", str(tmp_path / "y"),
                    "--no-such-flag"]) == 1
        capsys.readouterr()


class TestDeterminism:
    def test_rerun_reproduces_all_numbers(self, tmp_path, synth_dir):
        outs = []
        for tag in ("a", "b"):
            run_dir = tmp_path / tag
            assert run(["train", "--data", str(synth_dir), "--out", str(run_dir),
                        *TRAIN_ARGS]) == 0
            outs.append(run_dir)
        ck_a = (outs[0] / "checkpoint.json").read_bytes()
        ck_b = (outs[1] / "checkpoint.json").read_bytes()
        assert ck_a == ck_b
        assert (outs[0] / "epochs.csv").read_bytes() == (outs[1] / "epochs.csv").read_bytes()

    def test_manifests_agree_except_timing(self, tmp_path, synth_dir):
        manifests = []
        for tag in ("a", "b"):
            run_dir = tmp_path / tag
            run(["train", "--data", str(synth_dir), "--out", str(run_dir), *TRAIN_ARGS])
            manifests.append(json.loads((run_dir / "run_manifest.json").read_text()))
        for doc in manifests:
            doc.pop("duration_seconds")
            doc["artifacts"] = [os.path.basename(p) for p in doc["artifacts"]]
        assert manifests[0] == manifests[1]

    def test_synth_rerun_is_bitwise(self, tmp_path):
        dirs = []
        for tag in ("a", "b"):
            out = tmp_path / tag
            assert run(["synth", *SYNTH_ARGS, "--out", str(out)]) == 0
            dirs.append(out)
        for name in ("view0.csv", "view1.csv", "view2.csv", "labels.csv"):
            assert (dirs[0] / name).read_bytes() == (dirs[1] / name).read_bytes()


class TestConfigPrecedence:
    def test_flags_override_config_file(self, tmp_path, synth_dir):
        config = tmp_path / "config.json"
        config.write_text(json.dumps({"train": {"epochs": 3, "initial_lr": 1e-3,
                                                "lr_schedule": "constant"},
                                      "model": {"embed_dims": [4, 4, 4],
                                                "ae_hidden": [4, 3],
                                                "dropout_p": 0.1}}))
        run_dir = tmp_path / "run"
        assert run(["train", "--data", str(synth_dir), "--out", str(run_dir),
                    "--config", str(config), "--seed", "1", "--epochs", "5"]) == 0
        resolved = json.loads((run_dir / "config.json").read_text())
        assert resolved["train"]["epochs"] == 5
        assert resolved["train"]["initial_lr"] == 1e-3
        manifest = json.loads((run_dir / "run_manifest.json").read_text())
        assert manifest["resolved_config"]["train"]["epochs"] == 5

    def test_set_overrides_leaf(self, tmp_path, synth_dir):
        run_dir = tmp_path / "run"
        assert run(["train", "--data", str(synth_dir), "--out", str(run_dir),
                    "--seed", "1", "--epochs", "2", "--lr-schedule", "constant",
                    "--set", "model.embed_dims=[4,4,4]", "--set", "model.ae_hidden=[4,3]",
                    "--set", "train.reduction=sum"]) == 0
        resolved = json.loads((run_dir / "config.json").read_text())
        assert resolved["train"]["reduction"] == "sum"


class TestMaskCommand:
    def test_mask_writes_mask_file(self, tmp_path, synth_dir):
        out = tmp_path / "masked"
        assert run(["mask", "--data", str(synth_dir), "--eta", "0.4", "--seed", "2",
                    "--out", str(out)]) == 0
        assert (out / "mask.csv").exists()
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["missingness"]["eta"] == 0.4

    def test_masked_dataset_trains(self, tmp_path, synth_dir):
        masked = tmp_path / "masked"
        run(["mask", "--data", str(synth_dir), "--eta", "0.3", "--seed", "2",
             "--out", str(masked)])
        run_dir = tmp_path / "run"
        assert run(["train", "--data", str(masked), "--out", str(run_dir),
                    *TRAIN_ARGS]) == 0


class TestSweepCommand:
    def test_sweep_emits_report(self, tmp_path, synth_dir):
        out = tmp_path / "sweep"
        assert run(["sweep", "--data", str(synth_dir), "--out", str(out),
                    "--etas", "0.0,0.4", "--seeds", "1,2", *TRAIN_ARGS[2:],
                    "--seed", "1", "--epochs", "4"]) == 0
        report = (out / "sweep.csv").read_text().splitlines()
        assert report[0].split(",")[0] == "dataset"
        assert len([l for l in report[1:] if ",ok" in l]) == 4


class TestGridCommand:
    def test_grid_ranks_and_reports(self, tmp_path, synth_dir):
        out = tmp_path / "grid"
        config = tmp_path / "config.json"
        config.write_text(json.dumps({
            "grid": {"lambda_al_values": [0.0], "lambda_co_values": [0.0, 0.1],
                     "lambda_cl_values": [0.0]},
            "model": {"embed_dims": [4, 4, 4], "ae_hidden": [4, 3], "dropout_p": 0.1},
            "train": {"epochs": 3, "initial_lr": 1e-3, "lr_schedule": "constant"}}))
        assert run(["grid", "--data", str(synth_dir), "--out", str(out),
                    "--config", str(config), "--seed", "4"]) == 0
        lines = (out / "grid.csv").read_text().splitlines()
        assert len(lines) == 2  # complete data: lambda_co collapses to {0}


class TestAblateAndSurface:
    def test_ablate_runs_variants(self, tmp_path, synth_dir):
        out = tmp_path / "abl"
        assert run(["ablate", "--data", str(synth_dir), "--out", str(out),
                    "--etas", "0.3", "--seeds", "1", *TRAIN_ARGS[2:],
                    "--seed", "1", "--epochs", "3"]) == 0
        text = (out / "ablation.csv").read_text()
        for variant in ("plain", "ctst", "aux", "ctst+aux"):
            assert variant in text

    def test_surface_requires_two_vary_grids(self, tmp_path, synth_dir, capsys):
        code = run(["surface", "--data", str(synth_dir), "--out", str(tmp_path / "s"),
                    "--seed", "1", "--fix", "lambda_al=0.1",
                    "--vary", "lambda_co=0.01,0.1", "--eta", "0.2"])
        assert code == 1
        capsys.readouterr()

    def test_surface_runs_cells(self, tmp_path, synth_dir):
        out = tmp_path / "surf"
        assert run(["surface", "--data", str(synth_dir), "--out", str(out),
                    "--seed", "1", "--fix", "lambda_al=0.0",
                    "--vary", "lambda_co=0.0", "--vary", "lambda_cl=0.0,0.01",
                    "--eta", "0.3", *TRAIN_ARGS[2:], "--epochs", "3"]) == 0
        rows = [l for l in (out / "surface.csv").read_text().splitlines()[1:] if l]
        assert len([l for l in rows if ",ok" in l]) == 2


class TestErrorExitCodes:
    def test_missing_dataset_is_runtime_error(self, tmp_path, capsys):
        code = run(["train", "--data", str(tmp_path / "nope"), "--out",
                    str(tmp_path / "run"), "--seed", "1"])
        assert code == 2
        capsys.readouterr()

    def test_numeric_abort_exits_two(self, tmp_path, synth_dir, capsys):
        masked = tmp_path / "masked"
        run(["mask", "--data", str(synth_dir), "--eta", "0.4", "--seed", "2",
             "--out", str(masked)])
        run_dir = tmp_path / "run"
        with np.errstate(all="ignore"), np.testing.suppress_warnings() as sup:
            sup.filter(RuntimeWarning)
            code = run(["train", "--data", str(masked), "--out", str(run_dir),
                        "--seed", "3", "--epochs", "50", "--initial-lr", "1e200",
                        "--lr-schedule", "constant", "--lambda-co", "1.0",
                        "--set", "model.embed_dims=[4,4,4]",
                        "--set", "model.ae_hidden=[4,3]"])
        assert code == 2
        # the last-good checkpoint is still written
        assert (run_dir / "checkpoint.json").exists()
        capsys.readouterr()
