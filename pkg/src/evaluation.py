"""
Per-label confusion counts, accuracy and macro-F1.

Accuracy sums the four counts over every label before dividing. Macro-F1 is
the harmonic combination of macro-averaged precision and macro-averaged
recall; the mean of per-label F1 scores is reported beside it for comparison.
"""
import logging
from dataclasses import dataclass
from typing import List, Optional, Union

import numpy as np
from pydantic import BaseModel

from .checkpoint import Checkpoint
from .corpus import Dataset
from .model import DEFAULT_THRESHOLD, predict
from .tokenizer import EncodedDataset, encode_dataset

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class ConfusionCounts:
    """Per-label TP/FP/FN/TN vectors"""

    tp: np.ndarray
    fp: np.ndarray
    fn: np.ndarray
    tn: np.ndarray

    @property
    def n_samples(self) -> int:
        return int(self.tp[0] + self.fp[0] + self.fn[0] + self.tn[0]) if self.tp.size else 0

    @property
    def num_labels(self) -> int:
        return int(self.tp.size)

    def precision(self) -> np.ndarray:
        """TP / (TP + FP) per label, 0 where nothing was predicted"""
        denom = self.tp + self.fp
        return np.divide(self.tp, denom, out=np.zeros(self.tp.shape), where=denom > 0)

    def recall(self) -> np.ndarray:
        """TP / (TP + FN) per label, 0 where nothing was expected"""
        denom = self.tp + self.fn
        return np.divide(self.tp, denom, out=np.zeros(self.tp.shape), where=denom > 0)


def confusion(preds: np.ndarray, truths: np.ndarray) -> ConfusionCounts:
    """
    Count outcomes per label.

    Raises:
        ValueError: shapes differ or are not (N, T)
    """
    preds = np.asarray(preds).astype(bool)
    truths = np.asarray(truths).astype(bool)
    if preds.shape != truths.shape or preds.ndim != 2:
        raise ValueError(f"predictions {preds.shape} and truths {truths.shape} must share an (N, T) shape")
    return ConfusionCounts(
        tp=(preds & truths).sum(axis=0).astype(np.int64),
        fp=(preds & ~truths).sum(axis=0).astype(np.int64),
        fn=(~preds & truths).sum(axis=0).astype(np.int64),
        tn=(~preds & ~truths).sum(axis=0).astype(np.int64),
    )


def _check_nonempty(c: ConfusionCounts) -> None:
    if c.num_labels == 0 or c.n_samples == 0:
        raise ValueError("metrics need at least one sample and one label")


def accuracy(c: ConfusionCounts) -> float:
    """(sum TP + sum TN) / (sum FP + sum FN + sum TP + sum TN)"""
    _check_nonempty(c)
    correct = int(c.tp.sum() + c.tn.sum())
    total = correct + int(c.fp.sum() + c.fn.sum())
    return correct / total


def macro_f1(c: ConfusionCounts) -> float:
    """2 * meanP * meanR / (meanP + meanR), 0 when both means are 0"""
    _check_nonempty(c)
    mean_p = float(c.precision().mean())
    mean_r = float(c.recall().mean())
    if mean_p + mean_r == 0:
        return 0.0
    return 2.0 * mean_p * mean_r / (mean_p + mean_r)


def mean_label_f1(c: ConfusionCounts) -> float:
    """Conventional macro-F1: the mean of per-label F1 scores"""
    _check_nonempty(c)
    p, r = c.precision(), c.recall()
    denom = p + r
    f1 = np.divide(2.0 * p * r, denom, out=np.zeros(p.shape), where=denom > 0)
    return float(f1.mean())


class LabelMetrics(BaseModel):
    label: str
    tp: int
    fp: int
    fn: int
    tn: int
    precision: float
    recall: float


class MetricsReport(BaseModel):
    """Serialized evaluation result"""
    accuracy: float
    macro_f1: float
    mean_label_f1: float
    per_label: List[LabelMetrics]
    threshold: float
    n_samples: int


def metrics_report(preds: np.ndarray, truths: np.ndarray, label_names: List[str],
                   threshold: float) -> MetricsReport:
    c = confusion(preds, truths)
    p, r = c.precision(), c.recall()
    per_label = [
        LabelMetrics(label=name, tp=int(c.tp[t]), fp=int(c.fp[t]), fn=int(c.fn[t]), tn=int(c.tn[t]),
                     precision=float(p[t]), recall=float(r[t]))
        for t, name in enumerate(label_names)
    ]
    return MetricsReport(accuracy=accuracy(c), macro_f1=macro_f1(c), mean_label_f1=mean_label_f1(c),
                         per_label=per_label, threshold=threshold, n_samples=c.n_samples)


def evaluate(ckpt: Checkpoint, test: Union[Dataset, EncodedDataset],
             threshold: Optional[float] = None) -> MetricsReport:
    """
    Predict every test defect at the threshold and score the predictions.

    A Dataset is encoded with the checkpoint's own vocabulary; an
    EncodedDataset must carry the checkpoint's vocab hash.
    """
    threshold = DEFAULT_THRESHOLD if threshold is None else threshold
    if isinstance(test, Dataset):
        if test.registry.labels != ckpt.registry.labels:
            raise ValueError("test registry differs from the checkpoint's registry")
        test = encode_dataset(test, ckpt.vocab, ckpt.variant, ckpt.encoder.max_positions)
    if len(test) == 0:
        raise ValueError("cannot evaluate on an empty test set")
    preds = predict(ckpt.logits(test), threshold)
    report = metrics_report(preds, test.targets, list(ckpt.registry.labels), threshold)
    logger.info(f"Evaluated {report.n_samples} defects: accuracy={report.accuracy:.4f} "
                f"macro_f1={report.macro_f1:.4f}")
    return report
