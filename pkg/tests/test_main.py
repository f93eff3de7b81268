"""
Unit tests for the command-line entry point.
"""
import json

import pytest

from src import main as cli
from src.checkpoint import Checkpoint, save_checkpoint
from src.config import HeadKind, Precision, Variant
from src.corpus import load_dataset, save_dataset
from src.model import DefectClassifier, EncoderConfig, HeadConfig
from src.tokenizer import build_vocab


@pytest.fixture
def saved_checkpoint(tmp_path, small_corpus, registry):
    """An untrained checkpoint over the default registry, saved to disk"""
    vocab = build_vocab(small_corpus, include_label_names=True)
    encoder = EncoderConfig(vocab_size=len(vocab), hidden=8, layers=1, heads=2, max_positions=48)
    head = HeadConfig(HeadKind.LINEAR, registry.size, 8, 4)
    params = DefectClassifier(encoder, head, seed=1).state_dict()
    path = tmp_path / "model.ckpt"
    save_checkpoint(Checkpoint(params, encoder, head, Variant.FUSE_SEP, vocab, registry,
                               Precision.FLOAT64), str(path))
    return path


@pytest.fixture
def config_path(data_workspace, tmp_path):
    """The workspace pipeline config written as JSON"""
    path = tmp_path / "pipeline.json"
    path.write_text(json.dumps(data_workspace.to_dict()))
    return path


class TestMain:
    """Tests for main"""

    def test_gen_corpus(self, tmp_path, registry):
        """Test gen-corpus writes a loadable dataset with lineage"""
        out = tmp_path / "corpus.jsonl"
        code = cli.main(["gen-corpus", "--size", "25", "--seed", "4", "--out", str(out),
                         "--skew", "4"])
        assert code == cli.EXIT_OK
        ds = load_dataset(str(out), registry)
        assert len(ds) == 25
        assert ds.lineage["command"] == "gen-corpus"
        assert ds.lineage["registry_hash"] == registry.registry_hash()

    def test_gen_corpus_deterministic(self, tmp_path):
        """Test the same seed writes the same file"""
        paths = [tmp_path / "a.jsonl", tmp_path / "b.jsonl"]
        for path in paths:
            cli.main(["gen-corpus", "--size", "10", "--seed", "2", "--out", str(path)])
        assert paths[0].read_bytes().splitlines()[1:] == paths[1].read_bytes().splitlines()[1:]

    def test_usage_error(self):
        """Test a missing required flag exits with the usage code"""
        with pytest.raises(SystemExit) as info:
            cli.main(["gen-corpus", "--size", "5"])
        assert info.value.code == cli.EXIT_USAGE

    def test_unknown_command(self):
        """Test an unknown subcommand exits with the usage code"""
        with pytest.raises(SystemExit) as info:
            cli.main(["frobnicate"])
        assert info.value.code == cli.EXIT_USAGE

    def test_eval_prints_json(self, saved_checkpoint, small_dev, tmp_path, capsys):
        """Test eval prints the metrics JSON on stdout and writes --out"""
        test_path = tmp_path / "test.jsonl"
        save_dataset(small_dev, str(test_path))
        out = tmp_path / "metrics.json"
        code = cli.main(["eval", "--ckpt", str(saved_checkpoint), "--test", str(test_path),
                         "--out", str(out)])
        assert code == cli.EXIT_OK
        printed = json.loads(capsys.readouterr().out)
        assert printed["n_samples"] == len(small_dev)
        assert 0.0 <= printed["accuracy"] <= 1.0
        assert json.loads(out.read_text()) == printed

    def test_missing_checkpoint_is_data_error(self, tmp_path):
        """Test an unreadable input maps to the data error code"""
        code = cli.main(["eval", "--ckpt", str(tmp_path / "none.ckpt"),
                         "--test", str(tmp_path / "none.jsonl")])
        assert code == cli.EXIT_DATA

    def test_malformed_dataset_is_data_error(self, tmp_path):
        """Test a malformed record maps to the data error code"""
        bad = tmp_path / "bad.jsonl"
        bad.write_text('{"id": "a"\n')
        code = cli.main(["balance", "--input", str(bad), "--out", str(tmp_path / "o.jsonl")])
        assert code == cli.EXIT_DATA

    def test_balance_report_on_stdout(self, small_corpus, tmp_path, capsys):
        """Test balance prints its report when no report path is given"""
        src = tmp_path / "in.jsonl"
        save_dataset(small_corpus, str(src))
        code = cli.main(["balance", "--input", str(src), "--out", str(tmp_path / "out.jsonl")])
        assert code == cli.EXIT_OK
        report = json.loads(capsys.readouterr().out)
        assert "provenance_after" in report

    def test_pipeline(self, config_path, data_workspace):
        """Test the pipeline command writes the final training set"""
        code = cli.main(["pipeline", "--config", str(config_path)])
        assert code == cli.EXIT_OK
        assert data_workspace.data_path("train_final.jsonl").exists()

    def test_pipeline_stage_failure_is_data_error(self, config_path, data_workspace):
        """Test a broken LF file fails the pipeline with the data error code"""
        with open(data_workspace.lf_path, "w") as f:
            f.write("{not json")
        assert cli.main(["pipeline", "--config", str(config_path)]) == cli.EXIT_DATA

    def test_internal_error(self, config_path, monkeypatch):
        """Test an unexpected exception maps to the internal error code"""
        def explode(*args, **kwargs):
            raise RuntimeError("boom")

        monkeypatch.setattr(cli, "run_pipeline", explode)
        assert cli.main(["pipeline", "--config", str(config_path)]) == cli.EXIT_INTERNAL

    def test_log_level_from_env(self, monkeypatch):
        """Test the default log level follows DEFTRI_LOG_LEVEL"""
        monkeypatch.setenv("DEFTRI_LOG_LEVEL", "DEBUG")
        args = cli.build_parser().parse_args(["eval", "--ckpt", "m", "--test", "t"])
        assert args.log_level == "DEBUG"
