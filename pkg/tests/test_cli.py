"""End-to-end command-line behavior: files, formats, exit codes, overrides."""

import math

import numpy as np
import pytest

from marginlab.cli import main
from marginlab.data import Trial
from marginlab.evaluation import ScoreSet, compute_eer
from marginlab.model import init_model, load_checkpoint

GEN_ARGS = ["--num-speakers", "6", "--utts-per-speaker", "10",
            "--feature-dim", "8", "--num-target-trials", "6",
            "--num-nontarget-trials", "30"]
FAST_TRAIN = ["--epochs", "2", "--hidden-dim", "12", "--embedding-dim", "6"]


def run(argv):
    return main([str(a) for a in argv])


@pytest.fixture(scope="module")
def pipeline_dir(tmp_path_factory):
    """A clearly separable generated + trained + evaluated run shared by
    read-only tests."""
    out = tmp_path_factory.mktemp("pipeline")
    assert run(["gen-data", "--out-dir", out, "--between-std", "8"] + GEN_ARGS) == 0
    assert run(["train", "--out-dir", out, "--epochs", "25",
                "--hidden-dim", "16", "--embedding-dim", "8",
                "--loss", "am", "--m", "0.20", "--s", "30"]) == 0
    assert run(["eval", "--out-dir", out]) == 0
    return out


class TestGenData:
    def test_writes_files_and_reruns_identically(self, tmp_path, capsys):
        out = tmp_path / "d"
        assert run(["gen-data", "--out-dir", out] + GEN_ARGS) == 0
        stdout = capsys.readouterr().out
        assert "seed 7" in stdout
        files = {}
        for name in ("features.txt", "splits.txt", "trials.txt"):
            files[name] = (out / name).read_bytes()
        assert run(["gen-data", "--out-dir", out] + GEN_ARGS) == 0
        for name, blob in files.items():
            assert (out / name).read_bytes() == blob

    def test_centroid_oracle_reported(self, tmp_path, capsys):
        out = tmp_path / "d"
        assert run(["gen-data", "--out-dir", out] + GEN_ARGS) == 0
        line = [l for l in capsys.readouterr().out.splitlines()
                if "nearest-centroid" in l][0]
        assert float(line.split()[-1]) >= 0.95

    def test_single_speaker_rejected_before_any_write(self, tmp_path, capsys):
        out = tmp_path / "d"
        assert run(["gen-data", "--out-dir", out, "--num-speakers", "1"]) == 2
        assert not out.exists()

    def test_unknown_config_key_rejected(self, tmp_path):
        cfg = tmp_path / "run.cfg"
        cfg.write_text("num_speekers = 5\n")
        assert run(["gen-data", "--out-dir", tmp_path / "d", "--config", cfg]) == 2

    def test_flags_override_config_file(self, tmp_path):
        cfg = tmp_path / "run.cfg"
        cfg.write_text("num_speakers = 5\nutts_per_speaker = 10\n"
                       "feature_dim = 8\nnum_target_trials = 5\n"
                       "num_nontarget_trials = 20\n")
        out = tmp_path / "d"
        assert run(["gen-data", "--out-dir", out, "--config", cfg,
                    "--num-speakers", "6"]) == 0
        echo = (out / "effective_config_gen_data.txt").read_text()
        assert "num_speakers = 6" in echo

    def test_rerun_from_echoed_config_reproduces_outputs(self, tmp_path):
        first = tmp_path / "a"
        assert run(["gen-data", "--out-dir", first] + GEN_ARGS) == 0
        echo = first / "effective_config_gen_data.txt"
        second = tmp_path / "b"
        assert run(["gen-data", "--config", echo, "--out-dir", second]) == 0
        for name in ("features.txt", "splits.txt", "trials.txt"):
            assert (second / name).read_bytes() == (first / name).read_bytes()


class TestTrain:
    def test_zero_lr_checkpoint_equals_initialization(self, tmp_path):
        out = tmp_path / "d"
        assert run(["gen-data", "--out-dir", out] + GEN_ARGS) == 0
        assert run(["train", "--out-dir", out, "--lr", "0"] + FAST_TRAIN) == 0
        ckpt = load_checkpoint(out / "checkpoint.txt")
        params, weights = init_model(8, 12, 6, 6, seed=11)
        for (_, a), (_, b) in zip(ckpt.params.tensors(), params.tensors()):
            assert np.array_equal(a, b)
        assert np.array_equal(ckpt.class_weights, weights)

    def test_shipped_hyperparameter_rows_accepted(self, tmp_path):
        out = tmp_path / "d"
        assert run(["gen-data", "--out-dir", out] + GEN_ARGS) == 0
        assert run(["train", "--out-dir", out, "--loss", "am",
                    "--m", "0.20", "--s", "30"] + FAST_TRAIN) == 0
        assert run(["train", "--out-dir", out, "--loss", "ram",
                    "--m", "0.20", "--s", "30"] + FAST_TRAIN) == 0

    def test_loss_preset_flag(self, tmp_path):
        out = tmp_path / "d"
        assert run(["gen-data", "--out-dir", out] + GEN_ARGS) == 0
        assert run(["train", "--out-dir", out, "--loss-preset", "voxceleb-ram"]
                   + FAST_TRAIN) == 0
        echo = (out / "effective_config_train.txt").read_text()
        assert "loss = ram" in echo and "m = 0.3" in echo

    def test_history_csv_written(self, pipeline_dir):
        lines = (pipeline_dir / "history.csv").read_text().splitlines()
        assert lines[0] == "epoch,mean_loss,train_acc"
        assert len(lines) == 26

    def test_missing_dataset_is_path_error(self, tmp_path):
        assert run(["train", "--out-dir", tmp_path / "nope"] + FAST_TRAIN) == 3


class TestEval:
    def test_separable_run_reports_zero_eer(self, pipeline_dir, capsys):
        assert run(["eval", "--out-dir", pipeline_dir]) == 0
        stdout = capsys.readouterr().out
        assert "EER: 0.000%" in stdout

    def test_csv_formats(self, pipeline_dir):
        scores = (pipeline_dir / "scores.csv").read_text().splitlines()
        assert scores[0] == "enroll,test,label,score"
        assert len(scores) == 37
        det = (pipeline_dir / "det.csv").read_text().splitlines()
        assert det[0] == "threshold,far,frr"

    def test_printed_eer_matches_in_process_oracle(self, pipeline_dir, capsys):
        assert run(["eval", "--out-dir", pipeline_dir]) == 0
        stdout = capsys.readouterr().out
        printed = float(stdout.split("EER: ")[1].split("%")[0])
        trials, values = [], []
        for line in (pipeline_dir / "scores.csv").read_text().splitlines()[1:]:
            enroll, test, label, score = line.split(",")
            trials.append(Trial(enroll, test, label == "target"))
            values.append(float(score))
        oracle = compute_eer(ScoreSet(trials=trials, scores=np.array(values)))
        assert printed == pytest.approx(100.0 * oracle.eer, abs=5e-4)

    def test_missing_checkpoint_is_path_error(self, tmp_path):
        assert run(["eval", "--out-dir", tmp_path / "nope"]) == 3

    def test_figures_written_by_default(self, pipeline_dir):
        assert (pipeline_dir / "det.png").exists()
        assert (pipeline_dir / "history.png").exists()

    def test_figures_can_be_disabled(self, tmp_path):
        out = tmp_path / "d"
        assert run(["gen-data", "--out-dir", out] + GEN_ARGS) == 0
        assert run(["train", "--out-dir", out, "--figures", "false"]
                   + FAST_TRAIN) == 0
        assert not (out / "history.png").exists()


class TestGradCheck:
    def test_default_run_passes_all_variants(self, tmp_path, capsys):
        assert run(["grad-check", "--out-dir", tmp_path / "g"]) == 0
        stdout = capsys.readouterr().out
        for variant in ("softmax", "am", "am_reformulated", "am_factored", "ram"):
            assert variant in stdout
        assert "FAIL" not in stdout

    def test_corrupted_gradient_fails(self, tmp_path, capsys):
        assert run(["grad-check", "--out-dir", tmp_path / "g",
                    "--inject-gradient-error"]) == 4
        assert "FAIL" in capsys.readouterr().out


class TestLossProbe:
    def test_ram_flat_above_margin(self, tmp_path):
        out = tmp_path / "p"
        assert run(["loss-probe", "--out-dir", out, "--probe-variants", "ram",
                    "--probe-m", "0.3", "--probe-s", "30",
                    "--delta-min", "0.4", "--delta-max", "1.2",
                    "--delta-step", "0.4"]) == 0
        rows = (out / "loss_probe.csv").read_text().splitlines()
        assert rows[0] == "variant,m,s,delta,loss"
        values = {float(r.split(",")[4]) for r in rows[1:]}
        assert len(rows) == 4
        assert values == {math.log(2.0)}

    def test_am_with_zero_margin_matches_softmax_rows(self, tmp_path):
        out = tmp_path / "p"
        assert run(["loss-probe", "--out-dir", out,
                    "--probe-variants", "softmax,am", "--probe-m", "0",
                    "--probe-s", "1", "--delta-step", "0.5"]) == 0
        rows = [r.split(",") for r in
                (out / "loss_probe.csv").read_text().splitlines()[1:]]
        by_variant = {}
        for variant, m, s, delta, loss in rows:
            by_variant.setdefault(variant, []).append((delta, loss))
        assert by_variant["softmax"] == by_variant["am"]

    def test_margin_shift_approaches_m_at_negative_extreme(self, tmp_path):
        out = tmp_path / "p"
        assert run(["loss-probe", "--out-dir", out, "--probe-variants", "am",
                    "--probe-m", "0,0.5", "--probe-s", "1",
                    "--delta-min", "-2", "--delta-max", "-2",
                    "--delta-step", "1"]) == 0
        rows = [r.split(",") for r in
                (out / "loss_probe.csv").read_text().splitlines()[1:]]
        loss = {float(m): float(v) for _, m, s, d, v in rows}
        # Deep in the violated regime the margin shifts the loss by nearly m.
        assert abs((loss[0.5] - loss[0.0]) - 0.5) < 0.05

    def test_grid_outside_cosine_bound_rejected(self, tmp_path):
        assert run(["loss-probe", "--out-dir", tmp_path / "p",
                    "--delta-min", "-3"]) == 2

    def test_empty_variant_list_rejected(self, tmp_path):
        assert run(["loss-probe", "--out-dir", tmp_path / "p",
                    "--probe-variants", ","]) == 2


class TestDiag:
    def test_early_checkpoint_has_hard_samples(self, tmp_path, capsys):
        out = tmp_path / "d"
        assert run(["gen-data", "--out-dir", out] + GEN_ARGS) == 0
        assert run(["train", "--out-dir", out, "--epochs", "1",
                    "--hidden-dim", "12", "--embedding-dim", "6"]) == 0
        assert run(["diag", "--out-dir", out]) == 0
        stdout = capsys.readouterr().out
        hard = int(stdout.rsplit(" hard", 1)[0].rsplit(" ", 1)[-1])
        assert hard > 0

    def test_converged_easy_data_mostly_easy_at_attainable_threshold(
            self, pipeline_dir, capsys):
        # The unit-scale posterior of bounded cosines cannot reach the 0.99
        # default, so the demonstration lowers the cut to a reachable level.
        assert run(["diag", "--out-dir", pipeline_dir,
                    "--easy-threshold", "0.2", "--hard-threshold", "0.1"]) == 0
        stdout = capsys.readouterr().out
        total = int(stdout.split("samples: ")[1].split()[0])
        easy = int(stdout.split(" total, ")[1].split()[0])
        assert easy / total > 0.9

    def test_csv_columns(self, pipeline_dir):
        assert run(["diag", "--out-dir", pipeline_dir]) == 0
        lines = (pipeline_dir / "diag.csv").read_text().splitlines()
        assert lines[0] == "utt,posterior,set,approx_error"
        assert all(len(l.split(",")) == 4 for l in lines[1:])


class TestConfigEcho:
    def test_echo_written_before_outputs(self, tmp_path):
        out = tmp_path / "d"
        assert run(["gen-data", "--out-dir", out] + GEN_ARGS) == 0
        assert (out / "effective_config_gen_data.txt").exists()

    def test_echo_parses_as_config(self, tmp_path):
        from marginlab.config import load_config_file
        out = tmp_path / "d"
        assert run(["gen-data", "--out-dir", out] + GEN_ARGS) == 0
        values = load_config_file(out / "effective_config_gen_data.txt")
        assert values["num_speakers"] == 6
        assert values["shuffle"] is True
