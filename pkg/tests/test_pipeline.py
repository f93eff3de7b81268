"""
Unit tests for the data generation pipeline.
"""
import json
from dataclasses import replace
from pathlib import Path

import pytest

from src.config import Stage
from src.corpus import DatasetError, Provenance, Split, TeamLabelRegistry, load_dataset
from src.pipeline import (FINAL_ARTIFACT, PIPELINE_REPORT, DataPipeline, StageError, run_pipeline,
                          training_set_without_augment)


class TestDataPipeline:
    """Tests for DataPipeline"""

    def test_runs_stages_in_order(self, data_workspace):
        """Test all stages run weak, augment, balance and leave their artifacts"""
        result = run_pipeline(data_workspace, command="test")
        data_dir = Path(data_workspace.data_dir)

        summary = json.loads((data_dir / PIPELINE_REPORT).read_text())
        assert summary["stages"] == ["weak", "augment", "balance"]
        assert summary["final_artifact"] == FINAL_ARTIFACT
        for stage in ("weak", "augment", "balance"):
            assert (data_dir / f"{stage}.jsonl").exists()
            assert (data_dir / f"{stage}_report.json").exists()
            assert stage in result.artifacts
        assert result.final_path == data_dir / FINAL_ARTIFACT
        assert result.n_final == summary["counts"]["balance"]

    def test_stage_counts_grow(self, data_workspace):
        """Test augmentation and balancing only add defects"""
        counts = run_pipeline(data_workspace).reports["pipeline"]["counts"]
        assert counts["augment"] > counts["weak"]
        assert counts["balance"] >= counts["augment"]

    def test_provenance_of_final_set(self, data_workspace, registry):
        """Test the final set mixes weak, augmented and MLSMOTE records"""
        result = run_pipeline(data_workspace)
        final = load_dataset(str(result.final_path), registry)
        kinds = {d.provenance for d in final}
        assert Provenance.WEAK in kinds
        assert Provenance.AUGMENTED in kinds
        assert kinds <= {Provenance.WEAK, Provenance.AUGMENTED, Provenance.MLSMOTE}

    def test_no_stages_copies_input(self, data_workspace, registry):
        """Test with every stage off the final set equals the input"""
        cfg = replace(data_workspace, weak=False, augment=False, balance=False)
        result = run_pipeline(cfg)
        original = load_dataset(str(cfg.data_path(cfg.train_input)), registry)
        final = load_dataset(str(result.final_path), registry)
        assert final.defects == original.defects
        assert result.artifacts == {}
        assert result.reports["pipeline"]["stages"] == []

    def test_rerun_is_byte_identical(self, data_workspace):
        """Test the same config and inputs reproduce every artifact exactly"""
        first = run_pipeline(data_workspace)
        snapshot = {name: path.read_bytes() for name, path in first.artifacts.items()}
        final_bytes = first.final_path.read_bytes()

        second = run_pipeline(data_workspace)
        assert {name: path.read_bytes() for name, path in second.artifacts.items()} == snapshot
        assert second.final_path.read_bytes() == final_bytes

    def test_lineage_headers(self, data_workspace, registry):
        """Test every artifact records command, config hash and stage"""
        result = run_pipeline(data_workspace, command="pipeline")
        for stage, path in result.artifacts.items():
            lineage = load_dataset(str(path), registry).lineage
            assert lineage["stage"] == stage
            assert lineage["command"] == "pipeline"
            assert lineage["config_hash"] == data_workspace.config_hash()
            assert lineage["registry_hash"] == registry.registry_hash()
        assert load_dataset(str(result.final_path), registry).lineage["stage"] == "final"

    def test_weak_only(self, data_workspace, registry):
        """Test a weak-only run relabels without adding defects"""
        cfg = replace(data_workspace, augment=False, balance=False)
        result = run_pipeline(cfg)
        original = load_dataset(str(cfg.data_path(cfg.train_input)), registry)
        final = load_dataset(str(result.final_path), registry)
        assert len(final) <= len(original)
        assert all(d.provenance is Provenance.WEAK for d in final)

    def test_bad_lf_file_names_stage(self, data_workspace):
        """Test a broken LF file surfaces as a weak-stage failure"""
        Path(data_workspace.lf_path).write_text("{not json")
        with pytest.raises(StageError) as info:
            DataPipeline(data_workspace).run()
        assert info.value.stage is Stage.WEAK
        assert isinstance(info.value.cause, DatasetError)

    def test_failed_stage_writes_no_final(self, data_workspace):
        """Test a failing run does not leave a final artifact"""
        Path(data_workspace.lf_path).write_text("{not json")
        with pytest.raises(StageError):
            run_pipeline(data_workspace)
        assert not data_workspace.data_path(FINAL_ARTIFACT).exists()

    def test_missing_embeddings_rejected(self, data_workspace):
        """Test a missing embedding file fails before any stage runs"""
        Path(data_workspace.embedding_path).unlink()
        with pytest.raises(ValueError, match="embedding_path"):
            DataPipeline(data_workspace)

    def test_missing_embeddings_allowed_without_augment(self, data_workspace):
        """Test the embedding file is only required when augmentation is on"""
        Path(data_workspace.embedding_path).unlink()
        result = run_pipeline(replace(data_workspace, augment=False))
        assert "augment" not in result.artifacts

    def test_missing_dev_rejected_for_weak(self, data_workspace):
        """Test the weak stage needs the dev split"""
        data_workspace.data_path(data_workspace.dev_input).unlink()
        with pytest.raises(ValueError, match="dev_input"):
            DataPipeline(data_workspace)



class TestTrainingSetWithoutAugment:
    """Tests for training_set_without_augment"""

    def test_no_augmented_ancestry(self, data_workspace):
        """Test neither augmented copies nor samples synthesized from them remain"""
        ds = training_set_without_augment(data_workspace)
        assert not any(d.provenance is Provenance.AUGMENTED for d in ds)
        originals = {d.id for d in ds if d.provenance is not Provenance.MLSMOTE}
        for d in ds:
            if d.provenance is Provenance.MLSMOTE:
                assert d.id.rsplit("-smote", 1)[0] in originals

    def test_matches_written_run(self, data_workspace):
        """Test the set equals the final artifact of a run with augmentation off"""
        in_memory = training_set_without_augment(data_workspace)
        run_pipeline(replace(data_workspace, augment=False))
        registry = TeamLabelRegistry.from_file(data_workspace.registry_path)
        written = load_dataset(str(data_workspace.data_path(FINAL_ARTIFACT)), registry, Split.TRAIN)
        assert in_memory.defects == written.defects

    def test_writes_nothing(self, data_workspace):
        """Test no stage artifact or report is written"""
        training_set_without_augment(data_workspace)
        assert not data_workspace.data_path("weak.jsonl").exists()
        assert not data_workspace.data_path(FINAL_ARTIFACT).exists()
        assert not data_workspace.data_path(PIPELINE_REPORT).exists()
