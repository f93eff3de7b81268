"""
Shared fixtures.
"""
import shutil
from pathlib import Path

import pytest

from src.config import PipelineConfig, TrainingConfig
from src.corpus import (Split, SyntheticCorpusSpec, TeamLabelRegistry, generate_synthetic_corpus,
                        save_dataset)
from src.embeddings import build_embedding_table, load_synonym_groups, save_embedding_table

BUNDLED_DATA = Path(__file__).resolve().parent.parent / "data"


@pytest.fixture
def registry():
    """The bundled 15-team registry"""
    return TeamLabelRegistry.default()


@pytest.fixture
def small_corpus(registry):
    """120 synthetic training defects"""
    return generate_synthetic_corpus(SyntheticCorpusSpec.default(120, seed=3, registry=registry),
                                     registry)


@pytest.fixture
def small_dev(registry):
    """40 synthetic dev defects with their own id space"""
    spec = SyntheticCorpusSpec.default(40, seed=4, registry=registry, split=Split.DEV, id_prefix="v")
    return generate_synthetic_corpus(spec, registry)


@pytest.fixture
def tiny_hparams():
    """A very small encoder that trains in seconds"""
    return TrainingConfig.desk(hidden_size=16, num_layers=1, num_heads=2, max_seq_length=48,
                               epochs=2, batch_size=8, precision="float64")


@pytest.fixture
def data_workspace(tmp_path, registry):
    """
    A data directory with registry, LFs, embeddings and train/dev/test splits,
    and a pipeline config pointing at it.
    """
    registry.save(str(tmp_path / "registry.json"))
    shutil.copy(BUNDLED_DATA / "lfs.json", tmp_path / "lfs.json")

    weights = [0.8 ** i for i in range(registry.size)]
    splits = {}
    for split, size, seed, prefix in ((Split.TRAIN, 150, 11, "d"), (Split.DEV, 60, 12, "v"),
                                      (Split.TEST, 40, 13, "t")):
        spec = SyntheticCorpusSpec.default(size, seed=seed, registry=registry, split=split,
                                           id_prefix=prefix, label_weights=weights)
        splits[split] = generate_synthetic_corpus(spec, registry)
        lineage = {"command": "gen-corpus", "registry_hash": registry.registry_hash()}
        save_dataset(splits[split], str(tmp_path / f"{split.value}.jsonl"), lineage)

    table = build_embedding_table(splits[Split.TRAIN],
                                  load_synonym_groups(str(BUNDLED_DATA / "synonyms.json")), seed=1)
    save_embedding_table(table, str(tmp_path / "embeddings.txt"))

    return PipelineConfig(
        registry_path=str(tmp_path / "registry.json"),
        lf_path=str(tmp_path / "lfs.json"),
        embedding_path=str(tmp_path / "embeddings.txt"),
        data_dir=str(tmp_path),
        training=TrainingConfig.desk(hidden_size=16, num_layers=1, num_heads=2, max_seq_length=48,
                                     epochs=1, batch_size=16, precision="float64"),
    )
