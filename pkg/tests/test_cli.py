"""End-to-end command-line tests: exit codes, written artifacts, report
schema, config-file precedence and rerun determinism.

Commands run in process through main(argv); corpora are tiny and training
runs are a handful of iterations, so the whole file stays fast."""

import json

import numpy as np
import pytest

import newsnet.cli as cli
from newsnet.cli import SCHEMA, main


def run(*argv):
    return main(list(argv))


def read_json(path):
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


def strip_timing(obj):
    """Remove every 'timing' block, recursively; reruns differ only there."""
    if isinstance(obj, dict):
        return {k: strip_timing(v) for k, v in obj.items() if k != "timing"}
    if isinstance(obj, list):
        return [strip_timing(v) for v in obj]
    return obj


@pytest.fixture(scope="module")
def corpus_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("corpus")
    code = run(
        "synth", "--out", str(out), "--sources", "2", "--per-source", "12",
        "--vocab-size", "40", "--tokens-min", "8", "--tokens-max", "12",
        "--d-img", "6", "--embed-dim", "4", "--seed", "3",
    )
    assert code == 0
    return out


CORPUS = "corpus.jsonl"
EMBED = "embeddings.txt"


class TestSynth:
    def test_writes_corpus_and_embeddings(self, corpus_dir, capsys):
        assert (corpus_dir / CORPUS).exists()
        assert (corpus_dir / EMBED).exists()
        lines = (corpus_dir / CORPUS).read_text().splitlines()
        assert len(lines) == 24

    def test_rerun_is_byte_identical(self, tmp_path, corpus_dir):
        out = tmp_path / "again"
        code = run(
            "synth", "--out", str(out), "--sources", "2", "--per-source", "12",
            "--vocab-size", "40", "--tokens-min", "8", "--tokens-max", "12",
            "--d-img", "6", "--embed-dim", "4", "--seed", "3",
        )
        assert code == 0
        assert (out / CORPUS).read_bytes() == (corpus_dir / CORPUS).read_bytes()
        assert (out / EMBED).read_bytes() == (corpus_dir / EMBED).read_bytes()

    def test_embed_dim_zero_skips_table(self, tmp_path):
        out = tmp_path / "bare"
        assert run("synth", "--out", str(out), "--per-source", "4",
                   "--embed-dim", "0") == 0
        assert not (out / EMBED).exists()

    def test_embed_scale_rescales_table(self, tmp_path):
        a = tmp_path / "wide"
        b = tmp_path / "narrow"
        for out, scale in ((a, "1.0"), (b, "0.05")):
            assert run("synth", "--out", str(out), "--per-source", "4",
                       "--embed-dim", "3", "--embed-scale", scale,
                       "--seed", "1") == 0
        first = float((a / EMBED).read_text().splitlines()[1].split()[1])
        second = float((b / EMBED).read_text().splitlines()[1].split()[1])
        assert second == pytest.approx(0.05 * first)

    def test_custom_geo_centers(self, tmp_path):
        out = tmp_path / "geo"
        assert run("synth", "--out", str(out), "--sources", "2",
                   "--per-source", "3", "--geo-centers", "0.5,1.0;-0.5,-1.0") == 0

    def test_malformed_geo_centers_exit_2(self, tmp_path, capsys):
        code = run("synth", "--out", str(tmp_path), "--geo-centers", "0.5")
        assert code == 2
        assert "lat,lon" in capsys.readouterr().err


class TestTrainCnn:
    def test_single_task_writes_checkpoint_and_report(self, corpus_dir, tmp_path):
        out = tmp_path / "cnn"
        code = run(
            "train", "--out", str(out), "--corpus", str(corpus_dir / CORPUS),
            "--model", "cnn", "--task", "source", "--embed", str(corpus_dir / EMBED),
            "--iterations", "5", "--batch-size", "8", "--seed", "1",
        )
        assert code == 0
        assert (out / "model.ckpt").exists()
        report = read_json(out / "train_report.json")
        assert report["schema"] == SCHEMA
        assert report["command"] == "train"
        assert report["tasks"] == ["source"]
        assert set(report["metrics"]["source"]) == {"train", "val"}
        block = report["metrics"]["source"]["val"]
        assert set(block) == {"accuracy", "balanced_accuracy"}
        assert report["split_sizes"] == {"train": 16, "val": 4, "test": 4}

    def test_task_alias_accepted(self, corpus_dir, tmp_path):
        out = tmp_path / "alias"
        code = run(
            "train", "--out", str(out), "--corpus", str(corpus_dir / CORPUS),
            "--task", "geo", "--embed", str(corpus_dir / EMBED),
            "--iterations", "4", "--batch-size", "8",
        )
        assert code == 0
        report = read_json(out / "train_report.json")
        assert report["tasks"] == ["geolocation"]
        assert "median_gcd_km" in report["metrics"]["geolocation"]["val"]

    def test_multitask_heads_all_reported(self, corpus_dir, tmp_path):
        out = tmp_path / "multi"
        code = run(
            "train", "--out", str(out), "--corpus", str(corpus_dir / CORPUS),
            "--tasks", "source,illustration", "--embed", str(corpus_dir / EMBED),
            "--iterations", "5", "--batch-size", "8",
        )
        assert code == 0
        report = read_json(out / "train_report.json")
        assert report["tasks"] == ["source", "illustration"]
        illus = report["metrics"]["illustration"]["val"]
        assert set(illus) == {"R@1", "R@10", "MR", "pool"}

    def test_transfer_from_checkpoint(self, corpus_dir, tmp_path):
        first = tmp_path / "first"
        assert run(
            "train", "--out", str(first), "--corpus", str(corpus_dir / CORPUS),
            "--task", "source", "--embed", str(corpus_dir / EMBED),
            "--iterations", "4", "--batch-size", "8",
        ) == 0
        second = tmp_path / "second"
        code = run(
            "train", "--out", str(second), "--corpus", str(corpus_dir / CORPUS),
            "--task", "popularity", "--embed", str(corpus_dir / EMBED),
            "--transfer-from", str(first / "model.ckpt"),
            "--iterations", "4", "--batch-size", "8",
        )
        assert code == 0
        report = read_json(second / "train_report.json")
        assert report["tasks"] == ["popularity"]
        assert "mean_l1" in report["metrics"]["popularity"]["val"]

    def test_missing_embed_exits_2(self, corpus_dir, tmp_path, capsys):
        code = run("train", "--out", str(tmp_path), "--corpus",
                   str(corpus_dir / CORPUS), "--task", "source",
                   "--iterations", "2")
        assert code == 2
        assert "--embed" in capsys.readouterr().err

    def test_missing_task_exits_2(self, corpus_dir, tmp_path):
        assert run("train", "--out", str(tmp_path), "--corpus",
                   str(corpus_dir / CORPUS), "--embed", str(corpus_dir / EMBED)) == 2

    def test_unknown_task_exits_2(self, corpus_dir, tmp_path):
        assert run("train", "--out", str(tmp_path), "--corpus",
                   str(corpus_dir / CORPUS), "--task", "audio",
                   "--embed", str(corpus_dir / EMBED)) == 2

    def test_missing_corpus_exits_3(self, tmp_path):
        assert run("train", "--out", str(tmp_path), "--corpus",
                   str(tmp_path / "absent.jsonl"), "--task", "source",
                   "--embed", "x") == 3


class TestTrainBaselines:
    def test_svm_source(self, corpus_dir, tmp_path):
        out = tmp_path / "svm"
        code = run(
            "train", "--out", str(out), "--corpus", str(corpus_dir / CORPUS),
            "--model", "svm", "--epochs", "3",
        )
        assert code == 0
        report = read_json(out / "train_report.json")
        assert "accuracy" in report["metrics"]["source"]["val"]

    def test_svm_rejects_other_tasks(self, corpus_dir, tmp_path):
        assert run("train", "--out", str(tmp_path), "--corpus",
                   str(corpus_dir / CORPUS), "--model", "svm",
                   "--task", "popularity") == 2

    def test_svr_popularity_default(self, corpus_dir, tmp_path):
        out = tmp_path / "svr"
        code = run(
            "train", "--out", str(out), "--corpus", str(corpus_dir / CORPUS),
            "--model", "svr", "--epochs", "3",
        )
        assert code == 0
        report = read_json(out / "train_report.json")
        assert "median_l1" in report["metrics"]["popularity"]["val"]

    def test_svr_geolocation(self, corpus_dir, tmp_path):
        out = tmp_path / "geosvr"
        code = run(
            "train", "--out", str(out), "--corpus", str(corpus_dir / CORPUS),
            "--model", "svr", "--task", "geolocation", "--epochs", "3",
        )
        assert code == 0
        report = read_json(out / "train_report.json")
        assert "median_gcd_km" in report["metrics"]["geolocation"]["val"]


class TestTrainCaptioner:
    def test_writes_bleu_metrics(self, corpus_dir, tmp_path):
        out = tmp_path / "cap"
        code = run(
            "train", "--out", str(out), "--corpus", str(corpus_dir / CORPUS),
            "--model", "captioner", "--embed", str(corpus_dir / EMBED),
            "--iterations", "5", "--hidden-size", "8", "--caption-vocab-min", "1",
        )
        assert code == 0
        report = read_json(out / "train_report.json")
        block = report["metrics"]["caption"]["val"]
        assert set(block) == {"BLEU-1", "BLEU-2", "BLEU-3", "BLEU-4"}


@pytest.fixture(scope="module")
def cnn_run(corpus_dir, tmp_path_factory):
    out = tmp_path_factory.mktemp("cnn_eval")
    assert run(
        "train", "--out", str(out), "--corpus", str(corpus_dir / CORPUS),
        "--task", "source", "--embed", str(corpus_dir / EMBED),
        "--iterations", "5", "--batch-size", "8",
    ) == 0
    return out


class TestEval:
    def test_eval_cnn_on_test_split(self, corpus_dir, cnn_run, tmp_path):
        out = tmp_path / "ev"
        code = run(
            "eval", "--out", str(out), "--corpus", str(corpus_dir / CORPUS),
            "--ckpt", str(cnn_run / "model.ckpt"), "--embed", str(corpus_dir / EMBED),
        )
        assert code == 0
        report = read_json(out / "eval_report.json")
        assert report["schema"] == SCHEMA
        assert report["command"] == "eval"
        assert report["split"] == "test"
        assert report["n_records"] == 4
        assert "accuracy" in report["metrics"]["source"]["test"]

    def test_eval_needs_embed_for_cnn(self, corpus_dir, cnn_run, tmp_path):
        assert run("eval", "--out", str(tmp_path), "--corpus",
                   str(corpus_dir / CORPUS), "--ckpt",
                   str(cnn_run / "model.ckpt")) == 2

    def test_eval_unknown_split_exits_2(self, corpus_dir, cnn_run, tmp_path):
        assert run("eval", "--out", str(tmp_path), "--corpus",
                   str(corpus_dir / CORPUS), "--ckpt", str(cnn_run / "model.ckpt"),
                   "--embed", str(corpus_dir / EMBED), "--split", "holdout") == 2

    def test_eval_task_not_in_checkpoint_exits_2(self, corpus_dir, cnn_run, tmp_path):
        assert run("eval", "--out", str(tmp_path), "--corpus",
                   str(corpus_dir / CORPUS), "--ckpt", str(cnn_run / "model.ckpt"),
                   "--embed", str(corpus_dir / EMBED), "--task", "geolocation") == 2

    def test_eval_foreign_checkpoint_exits_3(self, corpus_dir, tmp_path):
        from newsnet.checkpoint import save_checkpoint

        ckpt = tmp_path / "foreign.ckpt"
        save_checkpoint(ckpt, {"w": np.zeros(2)}, meta={"model_kind": "Mystery"})
        assert run("eval", "--out", str(tmp_path), "--corpus",
                   str(corpus_dir / CORPUS), "--ckpt", str(ckpt)) == 3

    def test_eval_captioner_writes_captions_file(self, corpus_dir, tmp_path):
        train_out = tmp_path / "cap"
        assert run(
            "train", "--out", str(train_out), "--corpus", str(corpus_dir / CORPUS),
            "--model", "captioner", "--embed", str(corpus_dir / EMBED),
            "--iterations", "5", "--hidden-size", "8", "--caption-vocab-min", "1",
        ) == 0
        eval_out = tmp_path / "cap_eval"
        code = run(
            "eval", "--out", str(eval_out), "--corpus", str(corpus_dir / CORPUS),
            "--ckpt", str(train_out / "model.ckpt"),
            "--embed", str(corpus_dir / EMBED), "--split", "val",
        )
        assert code == 0
        lines = (eval_out / "captions.jsonl").read_text().splitlines()
        assert len(lines) == 4
        row = json.loads(lines[0])
        assert set(row) == {"id", "tokens", "log_prob"}

    def test_eval_baseline_checkpoint(self, corpus_dir, tmp_path):
        train_out = tmp_path / "svm"
        assert run(
            "train", "--out", str(train_out), "--corpus", str(corpus_dir / CORPUS),
            "--model", "svm", "--epochs", "3",
        ) == 0
        eval_out = tmp_path / "svm_eval"
        code = run(
            "eval", "--out", str(eval_out), "--corpus", str(corpus_dir / CORPUS),
            "--ckpt", str(train_out / "model.ckpt"), "--split", "val",
        )
        assert code == 0
        report = read_json(eval_out / "eval_report.json")
        assert "accuracy" in report["metrics"]["source"]["val"]


class TestGradcheckCommand:
    def test_passing_subset_exits_0(self, tmp_path, capsys):
        code = run("gradcheck", "--out", str(tmp_path), "--only", "relu,l1_loss",
                   "--seeds", "2")
        assert code == 0
        printed = capsys.readouterr().out
        assert "relu" in printed and "pass" in printed
        report = read_json(tmp_path / "gradcheck_report.json")
        assert [r["component"] for r in report["rows"]] == ["relu", "l1_loss"]
        assert all(r["passed"] for r in report["rows"])

    def test_unknown_component_exits_2(self, tmp_path):
        assert run("gradcheck", "--out", str(tmp_path), "--only", "nope") == 2

    def test_failing_suite_exits_4(self, tmp_path, monkeypatch, capsys):
        def fake_suite(only=None, seeds=None):
            return [{"component": "demo", "max_error": 1.0,
                     "threshold": 1e-4, "passed": False}]

        monkeypatch.setattr(cli, "run_suite", fake_suite)
        code = run("gradcheck", "--out", str(tmp_path))
        assert code == 4
        assert "failed" in capsys.readouterr().err


class TestConfigFile:
    def test_config_supplies_defaults(self, corpus_dir, tmp_path):
        cfg = tmp_path / "run.cfg"
        cfg.write_text(
            "task = source\n"
            f"embed = {corpus_dir / EMBED}\n"
            "iterations = 4\n"
            "batch_size = 8\n"
            "# a comment line\n"
        )
        out = tmp_path / "out"
        code = run("train", "--config", str(cfg), "--out", str(out),
                   "--corpus", str(corpus_dir / CORPUS))
        assert code == 0
        report = read_json(out / "train_report.json")
        assert report["tasks"] == ["source"]
        assert report["train"]["iterations"] == 4

    def test_explicit_flag_overrides_config(self, corpus_dir, tmp_path):
        cfg = tmp_path / "run.cfg"
        cfg.write_text(f"task = source\nembed = {corpus_dir / EMBED}\n"
                       "iterations = 4\nbatch_size = 8\n")
        out = tmp_path / "out"
        code = run("train", "--config", str(cfg), "--out", str(out),
                   "--corpus", str(corpus_dir / CORPUS), "--iterations", "6")
        assert code == 0
        assert read_json(out / "train_report.json")["train"]["iterations"] == 6

    def test_boolean_true_becomes_flag(self, corpus_dir, tmp_path):
        cfg = tmp_path / "run.cfg"
        cfg.write_text("unweighted_retrieval = true\ntask = source\n"
                       f"embed = {corpus_dir / EMBED}\niterations = 3\n"
                       "batch_size = 8\n")
        out = tmp_path / "out"
        assert run("train", "--config", str(cfg), "--out", str(out),
                   "--corpus", str(corpus_dir / CORPUS)) == 0

    def test_malformed_line_exits_2(self, corpus_dir, tmp_path, capsys):
        cfg = tmp_path / "bad.cfg"
        cfg.write_text("just-a-word\n")
        code = run("train", "--config", str(cfg), "--out", str(tmp_path),
                   "--corpus", str(corpus_dir / CORPUS))
        assert code == 2
        assert "key=value" in capsys.readouterr().err

    def test_missing_config_file_exits_2(self, corpus_dir, tmp_path):
        assert run("train", "--config", str(tmp_path / "none.cfg"),
                   "--out", str(tmp_path), "--corpus",
                   str(corpus_dir / CORPUS)) == 2


class TestOutDirResolution:
    def test_env_var_used_when_no_flag(self, tmp_path, monkeypatch):
        target = tmp_path / "from_env"
        monkeypatch.setenv(cli.OUT_ENV, str(target))
        assert run("synth", "--per-source", "3", "--embed-dim", "0") == 0
        assert (target / CORPUS).exists()

    def test_flag_beats_env(self, tmp_path, monkeypatch):
        monkeypatch.setenv(cli.OUT_ENV, str(tmp_path / "ignored"))
        chosen = tmp_path / "chosen"
        assert run("synth", "--out", str(chosen), "--per-source", "3",
                   "--embed-dim", "0") == 0
        assert (chosen / CORPUS).exists()
        assert not (tmp_path / "ignored").exists()


class TestRerunDeterminism:
    def test_identical_argv_reproduces_checkpoint_and_report(self, corpus_dir, tmp_path):
        out = tmp_path / "rerun"
        argv = (
            "train", "--out", str(out), "--corpus", str(corpus_dir / CORPUS),
            "--task", "source", "--embed", str(corpus_dir / EMBED),
            "--iterations", "6", "--batch-size", "8", "--seed", "9",
        )
        assert run(*argv) == 0
        first_ckpt = (out / "model.ckpt").read_bytes()
        first_report = read_json(out / "train_report.json")

        assert run(*argv) == 0
        second_ckpt = (out / "model.ckpt").read_bytes()
        second_report = read_json(out / "train_report.json")

        assert first_ckpt == second_ckpt
        assert strip_timing(first_report) == strip_timing(second_report)
