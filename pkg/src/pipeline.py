"""
Training data generation pipeline: weak labeling, then augmentation, then
balancing. Each enabled stage writes its dataset and a JSON report.
"""
import json
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Dict, List, Optional

from .augmentation import Augmenter
from .balancing import MLSmoteBalancer
from .config import PipelineConfig, Stage
from .corpus import Dataset, Split, TeamLabelRegistry, load_dataset, save_dataset
from .embeddings import load_embedding_table
from .weak_supervision import WeakLabeler, load_lfs

logger = logging.getLogger(__name__)

FINAL_ARTIFACT = "train_final.jsonl"
PIPELINE_REPORT = "pipeline_report.json"


class StageError(RuntimeError):
    """A pipeline stage failed; wraps the original error"""

    def __init__(self, stage: Stage, cause: BaseException):
        super().__init__(f"stage '{stage.value}' failed: {cause}")
        self.stage = stage
        self.cause = cause


@dataclass
class PipelineResult:
    final_path: Path
    artifacts: Dict[str, Path] = field(default_factory=dict)
    reports: Dict[str, Dict[str, Any]] = field(default_factory=dict)
    n_final: int = 0
    dataset: Optional[Dataset] = None


def write_report(report: Dict[str, Any], path: Path) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(report, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def lineage_header(cfg: PipelineConfig, registry: TeamLabelRegistry, command: str,
                   stage: str) -> Dict[str, Any]:
    return {
        "command": command,
        "config_hash": cfg.config_hash(),
        "registry_hash": registry.registry_hash(),
        "stage": stage,
    }


class DataPipeline:
    """Runs the enabled stages in weak -> augment -> balance order"""

    def __init__(self, cfg: PipelineConfig, command: str = "pipeline"):
        cfg.validate(check_files=True)
        self.cfg = cfg
        self.command = command
        self.registry = TeamLabelRegistry.from_file(cfg.registry_path)

    def _weak(self, ds: Dataset) -> Any:
        dev = load_dataset(str(self.cfg.data_path(self.cfg.dev_input)), self.registry, Split.DEV)
        labeler = WeakLabeler(load_lfs(self.cfg.lf_path, self.registry), self.cfg.vote_threshold)
        labeler.fit(dev)
        return labeler.label(ds)

    def _augment(self, ds: Dataset) -> Any:
        table = load_embedding_table(self.cfg.embedding_path)
        settings = replace(self.cfg.augmentation, seed=self.cfg.stage_seed(Stage.AUGMENT))
        return Augmenter(settings, table).augment(ds)

    def _balance(self, ds: Dataset) -> Any:
        return MLSmoteBalancer(self.cfg.mlsmote_k, self.cfg.stage_seed(Stage.BALANCE)).balance(ds)

    def run(self, write: bool = True) -> PipelineResult:
        """
        Run the enabled stages on the training input.

        With write=False nothing is saved; the result still carries the final
        dataset and every stage report.
        """
        cfg = self.cfg
        ds = load_dataset(str(cfg.data_path(cfg.train_input)), self.registry, Split.TRAIN)
        runners = {Stage.WEAK: self._weak, Stage.AUGMENT: self._augment, Stage.BALANCE: self._balance}
        result = PipelineResult(final_path=cfg.data_path(FINAL_ARTIFACT))
        order: List[str] = []
        counts = {"input": len(ds)}

        for stage in cfg.enabled_stages:
            logger.info(f"Running stage '{stage.value}' on {len(ds)} defects")
            try:
                ds, report = runners[stage](ds)
            except Exception as e:
                logger.error(f"Stage '{stage.value}' failed: {e}")
                raise StageError(stage, e) from e
            if write:
                artifact = cfg.data_path(f"{stage.value}.jsonl")
                save_dataset(ds, str(artifact),
                             lineage_header(cfg, self.registry, self.command, stage.value))
                write_report(report, cfg.data_path(f"{stage.value}_report.json"))
                result.artifacts[stage.value] = artifact
            result.reports[stage.value] = report
            order.append(stage.value)
            counts[stage.value] = len(ds)

        result.dataset = ds
        result.n_final = len(ds)
        summary = {
            "stages": order,
            "counts": counts,
            "config_hash": cfg.config_hash(),
            "registry_hash": self.registry.registry_hash(),
            "final_artifact": FINAL_ARTIFACT,
        }
        result.reports["pipeline"] = summary
        if write:
            save_dataset(ds, str(result.final_path),
                         lineage_header(cfg, self.registry, self.command, "final"))
            write_report(summary, cfg.data_path(PIPELINE_REPORT))
        logger.info(f"Pipeline finished: stages={order or ['none']} final={len(ds)} defects")
        return result


def run_pipeline(cfg: PipelineConfig, command: str = "pipeline") -> PipelineResult:
    """Generate the final training set from the configured input"""
    return DataPipeline(cfg, command).run()


def training_set_without_augment(cfg: PipelineConfig) -> Dataset:
    """
    The final training set the pipeline builds from the same input, seeds
    and settings with the augment stage off. Nothing is written.
    """
    result = DataPipeline(replace(cfg, augment=False), "experiment").run(write=False)
    return result.dataset
