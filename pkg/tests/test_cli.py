import json
import os
from pathlib import Path

import numpy as np
import pytest

from gofa.cli import main
from gofa.config import ConfigError, build_id, default_config, load_config
from gofa.taskgen import read_samples


def run(argv):
    return main(argv)


SMALL_MODEL = [
    "--set", 'model.d_model=16',
    "--set", 'model.n_heads=2',
    "--set", 'model.n_layers=2',
    "--set", 'model.memory_tokens=2',
    "--set", 'model.gnn_layers=[1]',
    "--set", 'model.max_seq_len=48',
]


class TestConfig:
    def test_defaults_load(self):
        cfg = load_config(None)
        assert cfg["model"]["d_model"] == 128
        assert cfg["train"]["grad_clip"] == 0.5
        assert cfg["train"]["betas"] == [0.9, 0.95]
        assert cfg["train"]["lr"] == 1e-4

    def test_unknown_key_rejected(self, tmp_path):
        bad = tmp_path / "c.json"
        bad.write_text('{"modle": {}}')
        with pytest.raises(ConfigError, match="modle"):
            load_config(bad)

    def test_nested_unknown_key_rejected(self, tmp_path):
        bad = tmp_path / "c.json"
        bad.write_text('{"model": {"d_modle": 3}}')
        with pytest.raises(ConfigError, match="model.d_modle"):
            load_config(bad)

    def test_overrides(self):
        cfg = load_config(None, ["model.d_model=64", "seed=9"])
        assert cfg["model"]["d_model"] == 64
        assert cfg["seed"] == 9

    def test_bad_override_path(self):
        with pytest.raises(ConfigError):
            load_config(None, ["nope.x=1"])

    def test_build_id_stable(self):
        cfg = default_config()
        assert build_id(cfg) == build_id(json.loads(json.dumps(cfg)))


class TestGenCorpus:
    def test_writes_all_corpora_and_meta(self, tmp_path):
        out = tmp_path / "corpus"
        code = run(["gen-corpus", "--out", str(out), "--set", "corpus.n_graphs=6"])
        assert code == 0
        meta = json.loads((out / "run_meta.json").read_text())
        assert {"config", "seed", "version", "build_id"} <= set(meta)
        for name in ("completion", "spd", "cn", "qa", "lookup_single", "lookup_double"):
            assert (out / f"{name}_train.jsonl").exists()
            assert (out / f"{name}_test.jsonl").exists()
        samples = read_samples(out / "spd_train.jsonl")
        assert samples and samples[0].task_kind == "spd"

    def test_idempotent(self, tmp_path):
        args = ["gen-corpus", "--set", "corpus.n_graphs=4"]
        run(args + ["--out", str(tmp_path / "a")])
        run(args + ["--out", str(tmp_path / "b")])
        for name in ("completion_train.jsonl", "qa_test.jsonl"):
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


class TestTrainEval:
    def test_train_then_eval_round_trip(self, tmp_path):
        corpus_dir = tmp_path / "corpus"
        run(["gen-corpus", "--out", str(corpus_dir), "--set", "corpus.n_graphs=6"])
        train_dir = tmp_path / "train"
        code = run(
            ["train", "--out", str(train_dir), "--corpus", str(corpus_dir / "qa_train.jsonl")]
            + SMALL_MODEL
            + ["--set", "train.max_steps=3", "--set", "train.batch_size=2", "--set", "train.checkpoint_every=3"]
        )
        assert code == 0
        ckpts = sorted(train_dir.glob("checkpoint_*.gofa"))
        assert ckpts
        assert (train_dir / "loss_log.csv").exists()

        eval_dir = tmp_path / "eval"
        code = run(
            ["eval", "--out", str(eval_dir), "--checkpoint", str(ckpts[-1]),
             "--corpus", str(corpus_dir / "qa_test.jsonl"),
             "--set", "eval.delta_profile_n=2", "--set", "eval.max_new_tokens=4"]
        )
        assert code == 0
        report = json.loads((eval_dir / "eval_report.json").read_text())
        assert "perplexity" in report["metrics"]
        assert "delta_profile" in report["metrics"]
        assert (eval_dir / "eval_report_transcripts.jsonl").exists()

    def test_gate_zero_model_reports_zero_delta_profile(self, tmp_path):
        corpus_dir = tmp_path / "corpus"
        run(["gen-corpus", "--out", str(corpus_dir), "--set", "corpus.n_graphs=4"])
        train_dir = tmp_path / "train"
        run(
            ["train", "--out", str(train_dir), "--corpus", str(corpus_dir / "qa_train.jsonl")]
            + SMALL_MODEL
            + ["--set", "train.max_steps=1", "--set", "train.batch_size=2",
               "--set", 'train.freeze=["compressor.","decoder.","gnn.","memory_tokens"]',
               "--set", "train.checkpoint_every=1"]
        )
        eval_dir = tmp_path / "eval"
        run(
            ["eval", "--out", str(eval_dir), "--checkpoint", str(next(train_dir.glob("checkpoint_*.gofa"))),
             "--corpus", str(corpus_dir / "qa_test.jsonl"),
             "--set", "eval.delta_profile_n=2", "--set", "eval.max_new_tokens=2"]
        )
        report = json.loads((eval_dir / "eval_report.json").read_text())
        assert all(v == 0.0 for v in report["metrics"]["delta_profile"].values())


class TestExitCodes:
    def test_config_error_is_2(self, tmp_path):
        assert run(["gen-corpus", "--out", str(tmp_path / "x"), "--set", "bogus.key=1"]) == 2

    def test_runtime_error_is_3(self, tmp_path):
        assert run(["eval", "--out", str(tmp_path / "x"), "--checkpoint", "/nonexistent.gofa",
                    "--corpus", "/nonexistent.jsonl"]) == 3

    def test_inspect_checkpoint(self, tmp_path, capsys):
        from gofa.compressor import ModelConfig
        from gofa.model import GofaModel

        model = GofaModel(ModelConfig(d_model=16, n_heads=2, n_layers=2, memory_tokens=2, gnn_layers=(1,)), seed=0)
        path = tmp_path / "m.gofa"
        model.save(path)
        assert run(["inspect-checkpoint", str(path)]) == 0
        out = capsys.readouterr().out
        assert "compressor.embed" in out
        assert '"d_model": 16' in out


class TestAutoencodeCommand:
    def test_runs_and_saves(self, tmp_path):
        out = tmp_path / "ae"
        code = run(
            ["autoencode-pretrain", "--out", str(out)]
            + SMALL_MODEL
            + ["--set", "pretrain.steps=3", "--set", "pretrain.batch_size=4"]
        )
        assert code == 0
        assert (out / "autoencoder.gofa").exists()


class TestAblateCommand:
    def test_comparison_table(self, tmp_path):
        corpus_dir = tmp_path / "corpus"
        run(["gen-corpus", "--out", str(corpus_dir), "--set", "corpus.n_graphs=4"])
        ckpts = {}
        for mode in ("single", "double"):
            d = tmp_path / f"train_{mode}"
            run(
                ["train", "--out", str(d), "--corpus", str(corpus_dir / f"lookup_{mode}_train.jsonl")]
                + SMALL_MODEL
                + ["--set", "train.max_steps=2", "--set", "train.batch_size=2", "--set", "train.checkpoint_every=2"]
            )
            ckpts[mode] = next(d.glob("checkpoint_*.gofa"))
        out = tmp_path / "ablation"
        code = run(
            ["ablate-edges", "--out", str(out),
             "--checkpoint-single", str(ckpts["single"]), "--checkpoint-double", str(ckpts["double"]),
             "--corpus-single", str(corpus_dir / "lookup_single_test.jsonl"),
             "--corpus-double", str(corpus_dir / "lookup_double_test.jsonl"),
             "--set", "eval.max_new_tokens=4"]
        )
        assert code == 0
        table = (out / "ablation_comparison.txt").read_text()
        assert "single" in table and "double" in table
        assert (out / "ablation_single.json").exists()
        assert (out / "ablation_double.json").exists()

    def test_identical_checkpoints_identical_reports(self, tmp_path):
        corpus_dir = tmp_path / "corpus"
        run(["gen-corpus", "--out", str(corpus_dir), "--set", "corpus.n_graphs=4"])
        d = tmp_path / "train"
        run(
            ["train", "--out", str(d), "--corpus", str(corpus_dir / "lookup_single_train.jsonl")]
            + SMALL_MODEL
            + ["--set", "train.max_steps=2", "--set", "train.batch_size=2", "--set", "train.checkpoint_every=2"]
        )
        ckpt = str(next(d.glob("checkpoint_*.gofa")))
        out = tmp_path / "ablation"
        run(
            ["ablate-edges", "--out", str(out),
             "--checkpoint-single", ckpt, "--checkpoint-double", ckpt,
             "--corpus-single", str(corpus_dir / "lookup_single_test.jsonl"),
             "--corpus-double", str(corpus_dir / "lookup_single_test.jsonl"),
             "--set", "eval.max_new_tokens=4"]
        )
        a = json.loads((out / "ablation_single.json").read_text())
        b = json.loads((out / "ablation_double.json").read_text())
        assert a == b
