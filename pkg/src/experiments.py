"""
The six-cell experiment matrix: three input variants times two heads.

Every cell trains on the same final training set, vocabulary, seed and
hyper-parameters and is scored on the same test set. An ablation retrains each
cell on the training set the pipeline builds with the augment stage off, to
report the accuracy contribution of augmentation.
"""
import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from .checkpoint import save_checkpoint
from .config import HeadKind, PipelineConfig, TrainingConfig, Variant, derive_seed
from .corpus import Dataset, DatasetError, Provenance, Split, TeamLabelRegistry, load_dataset
from .evaluation import evaluate
from .pipeline import FINAL_ARTIFACT, training_set_without_augment
from .tokenizer import Vocab, build_vocab
from .trainer import train

logger = logging.getLogger(__name__)

TABLE_COLUMNS = ["Model", "Macro-F1", "Accuracy"]
FAILED = "FAILED"


@dataclass(frozen=True)
class ExperimentCell:
    variant: Variant
    head: HeadKind
    name: str

    @property
    def key(self) -> str:
        return f"{self.variant.value}+{self.head.value}"


@dataclass(frozen=True)
class ExperimentMatrix:
    """Ordered experiment cells; the table keeps this order"""

    cells: Tuple[ExperimentCell, ...]

    @classmethod
    def default(cls) -> "ExperimentMatrix":
        return cls((
            ExperimentCell(Variant.BASELINE, HeadKind.LINEAR, "Encoder+Linear"),
            ExperimentCell(Variant.BASELINE, HeadKind.BILSTM, "Encoder+BiLSTM"),
            ExperimentCell(Variant.FUSE_NOSEP, HeadKind.LINEAR, "Encoder+LabelFuse w/o [SEP]+Linear"),
            ExperimentCell(Variant.FUSE_NOSEP, HeadKind.BILSTM, "Encoder+LabelFuse w/o [SEP]+BiLSTM"),
            ExperimentCell(Variant.FUSE_SEP, HeadKind.LINEAR, "Encoder+LabelFuse w [SEP]+Linear"),
            ExperimentCell(Variant.FUSE_SEP, HeadKind.BILSTM, "Encoder+LabelFuse w [SEP]+BiLSTM"),
        ))

    def __len__(self) -> int:
        return len(self.cells)


@dataclass
class CellResult:
    cell: ExperimentCell
    accuracy: Optional[float] = None
    macro_f1: Optional[float] = None
    best_epoch: Optional[int] = None
    ablation_accuracy: Optional[float] = None
    error: Optional[str] = None

    @property
    def failed(self) -> bool:
        return self.error is not None


@dataclass
class ExperimentReport:
    results: List[CellResult]
    ablation_delta: Optional[float] = None
    directional: Dict[str, float] = field(default_factory=dict)
    notes: List[str] = field(default_factory=list)

    def table(self) -> pd.DataFrame:
        """Model, Macro-F1, Accuracy rows in matrix order; failed cells marked"""
        rows = []
        for r in self.results:
            if r.failed:
                rows.append({"Model": r.cell.name, "Macro-F1": FAILED, "Accuracy": FAILED})
            else:
                rows.append({"Model": r.cell.name, "Macro-F1": f"{r.macro_f1:.4f}",
                             "Accuracy": f"{r.accuracy:.4f}"})
        return pd.DataFrame(rows, columns=TABLE_COLUMNS)

    def to_tsv(self) -> str:
        return self.table().to_csv(sep="\t", index=False, lineterminator="\n")

    def to_text(self) -> str:
        return self.table().to_string(index=False) + "\n"

    def to_dict(self) -> Dict[str, Any]:
        return {
            "cells": [{
                "model": r.cell.name,
                "variant": r.cell.variant.value,
                "head": r.cell.head.value,
                "accuracy": r.accuracy,
                "macro_f1": r.macro_f1,
                "best_epoch": r.best_epoch,
                "ablation_accuracy": r.ablation_accuracy,
                "error": r.error,
            } for r in self.results],
            "ablation_delta": self.ablation_delta,
            "directional": self.directional,
            "notes": self.notes,
        }

    def write(self, out_dir: str) -> None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "results.tsv").write_text(self.to_tsv(), encoding="utf-8")
        (out / "results.txt").write_text(self.to_text(), encoding="utf-8")
        (out / "results.json").write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n",
                                          encoding="utf-8")


def check_lineage(datasets: Sequence[Dataset], registry: TeamLabelRegistry) -> None:
    """
    Refuse inputs produced under different label registries, or pipeline
    artifacts produced under different configs.

    Raises:
        DatasetError: mixed lineage
    """
    expected = registry.registry_hash()
    pipeline_hashes = set()
    for ds in datasets:
        lineage = ds.lineage or {}
        found = lineage.get("registry_hash")
        if found is not None and found != expected:
            raise DatasetError(f"{ds.split.value} data was produced under registry {found}, "
                               f"expected {expected}")
        if lineage.get("stage") is not None and lineage.get("config_hash"):
            pipeline_hashes.add(lineage["config_hash"])
    if len(pipeline_hashes) > 1:
        raise DatasetError(f"inputs come from different pipeline configs: {sorted(pipeline_hashes)}")


def _run_cell(cell: ExperimentCell, train_ds: Dataset, dev_ds: Dataset, test_ds: Dataset,
              ablation_ds: Optional[Dataset], vocab: Vocab, hparams: TrainingConfig, seed: int,
              threshold: float, ckpt_dir: Optional[str]) -> CellResult:
    result = CellResult(cell)
    try:
        logger.info(f"Training cell {cell.name}")
        trained = train(train_ds, dev_ds, cell.variant, cell.head, hparams, seed, vocab, threshold)
        metrics = evaluate(trained.checkpoint, test_ds, threshold)
        result.accuracy, result.macro_f1 = metrics.accuracy, metrics.macro_f1
        result.best_epoch = trained.best_epoch
        if ckpt_dir:
            save_checkpoint(trained.checkpoint, str(Path(ckpt_dir) / f"{cell.key}.ckpt"))
        if ablation_ds is not None:
            logger.info(f"Training cell {cell.name} without augmented records")
            ablated = train(ablation_ds, dev_ds, cell.variant, cell.head, hparams, seed, vocab,
                            threshold)
            result.ablation_accuracy = evaluate(ablated.checkpoint, test_ds, threshold).accuracy
    except Exception as e:
        logger.exception(f"Cell {cell.name} failed")
        result.error = f"{type(e).__name__}: {e}"
    return result


def directional_deltas(results: Sequence[CellResult]) -> Dict[str, float]:
    """Accuracy of each fused variant minus the baseline, per head"""
    by_key = {(r.cell.variant, r.cell.head): r for r in results if not r.failed}
    deltas = {}
    for head in HeadKind:
        base = by_key.get((Variant.BASELINE, head))
        if base is None:
            continue
        for variant in (Variant.FUSE_NOSEP, Variant.FUSE_SEP):
            fused = by_key.get((variant, head))
            if fused is not None:
                deltas[f"{variant.value}-baseline/{head.value}"] = fused.accuracy - base.accuracy
    return deltas


def run_experiments(cfg: PipelineConfig, matrix: Optional[ExperimentMatrix] = None,
                    train_ds: Optional[Dataset] = None, dev_ds: Optional[Dataset] = None,
                    test_ds: Optional[Dataset] = None, ablation: bool = True, workers: int = 1,
                    ckpt_dir: Optional[str] = None) -> ExperimentReport:
    """
    Train and score every cell of the matrix.

    Datasets not passed in are read from the config's data directory (the
    final pipeline artifact for training). A failing cell is recorded and
    marked in the table; the other cells still run.
    """
    matrix = matrix or ExperimentMatrix.default()
    cfg.validate(check_files=False)
    if train_ds is None or dev_ds is None or test_ds is None:
        registry = TeamLabelRegistry.from_file(cfg.registry_path)
        if train_ds is None:
            train_ds = load_dataset(str(cfg.data_path(FINAL_ARTIFACT)), registry, Split.TRAIN)
        if dev_ds is None:
            dev_ds = load_dataset(str(cfg.data_path(cfg.dev_input)), registry, Split.DEV)
        if test_ds is None:
            test_ds = load_dataset(str(cfg.data_path(cfg.test_input)), registry, Split.TEST)
    registry = train_ds.registry
    if dev_ds.registry != registry or test_ds.registry != registry:
        raise DatasetError("train, dev and test use different label registries")
    check_lineage([train_ds, dev_ds, test_ds], registry)

    vocab = build_vocab(train_ds, include_label_names=True)
    seed = derive_seed(cfg.seed, "train")
    notes: List[str] = []
    ablation_ds = None
    if ablation:
        if not any(d.provenance is Provenance.AUGMENTED for d in train_ds):
            notes.append("no augmented records in the training set; ablation skipped")
        else:
            logger.info("Rebuilding the training set with the augment stage off")
            ablation_ds = training_set_without_augment(cfg)
    logger.info(f"Running {len(matrix)} cells on {len(train_ds)} training defects "
                f"(vocab {len(vocab)}, ablation={'on' if ablation_ds is not None else 'off'})")

    args = [(cell, train_ds, dev_ds, test_ds, ablation_ds, vocab, cfg.training, seed,
             cfg.threshold, ckpt_dir) for cell in matrix.cells]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futures = [pool.submit(_run_cell, *a) for a in args]
            results = [f.result() for f in futures]
    else:
        results = [_run_cell(*a) for a in args]

    report = ExperimentReport(results, notes=notes)
    paired = [r for r in results if not r.failed and r.ablation_accuracy is not None]
    if paired:
        report.ablation_delta = float(np.mean([r.accuracy - r.ablation_accuracy for r in paired]))
    report.directional = directional_deltas(results)
    for key, delta in report.directional.items():
        logger.info(f"Accuracy delta {key}: {delta:+.4f}")
    if report.ablation_delta is not None:
        logger.info(f"Augmentation ablation: mean accuracy delta {report.ablation_delta:+.4f}")
    failed = [r.cell.name for r in results if r.failed]
    if failed:
        logger.warning(f"{len(failed)} cells failed: {failed}")
    return report
