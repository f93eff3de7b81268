"""
Labeling functions and weak label aggregation.

Labeling functions (LFs) vote a set of team labels for a defect or abstain.
Votes are aggregated by precision-weighted voting: each LF is weighted by its
precision on a small gold dev set, and a label is assigned when its share of
the firing weight reaches the assignment threshold.
"""
import json
import logging
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Any, Dict, FrozenSet, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from .corpus import Dataset, DatasetError, Provenance, TeamLabelRegistry, build_text
from .tokenizer import tokenize

logger = logging.getLogger(__name__)

ABSTAIN = None
UNINFORMATIVE_WEIGHT = 0.5


class LFKind(Enum):
    """Labeling function trigger styles"""
    KEYWORD = "keyword"
    PATTERN = "pattern"


@dataclass(frozen=True)
class LabelingFunction:
    """
    A keyword or pattern rule emitting a fixed set of label ids.

    Keyword triggers match case-insensitive whole words; pattern triggers are
    case-insensitive substrings where '*' matches any run of characters.
    """

    id: str
    kind: LFKind
    trigger: Union[FrozenSet[str], str]
    emits: FrozenSet[int]

    def __post_init__(self):
        object.__setattr__(self, "emits", frozenset(int(t) for t in self.emits))
        if not self.emits:
            raise ValueError(f"LF {self.id}: emits must be non-empty")
        if self.kind is LFKind.KEYWORD:
            words = frozenset(w.lower() for w in self.trigger)
            if not words or any(not w for w in words):
                raise ValueError(f"LF {self.id}: keyword trigger must be non-empty")
            object.__setattr__(self, "trigger", words)
        else:
            if not isinstance(self.trigger, str) or not self.trigger.strip("*"):
                raise ValueError(f"LF {self.id}: pattern trigger must be non-empty")
            body = ".*".join(re.escape(part) for part in self.trigger.split("*"))
            object.__setattr__(self, "_regex", re.compile(body, re.IGNORECASE))

    def fires(self, text: str) -> bool:
        if self.kind is LFKind.KEYWORD:
            return not self.trigger.isdisjoint(tokenize(text))
        return self._regex.search(text) is not None


def keyword_lf(lf_id: str, words: Sequence[str], emits: Sequence[int]) -> LabelingFunction:
    return LabelingFunction(lf_id, LFKind.KEYWORD, frozenset(words), frozenset(emits))


def pattern_lf(lf_id: str, pattern: str, emits: Sequence[int]) -> LabelingFunction:
    return LabelingFunction(lf_id, LFKind.PATTERN, pattern, frozenset(emits))


def keyword_lfs_for_pools(registry: TeamLabelRegistry,
                          pools: Mapping[int, Sequence[str]]) -> List[LabelingFunction]:
    """One keyword LF per label, triggered by that label's signature pool"""
    return [keyword_lf(f"kw_{registry.name(t)}", pools[t], [t]) for t in sorted(pools)]


def load_lfs(path: str, registry: TeamLabelRegistry) -> List[LabelingFunction]:
    """Load LFs from a JSON array of {id, kind, trigger, emits}"""
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise DatasetError(f"LF file {path} is not valid JSON: {e}")
    if not isinstance(data, list):
        raise DatasetError(f"LF file {path} must hold a JSON array")
    lfs = []
    for i, entry in enumerate(data):
        try:
            kind = LFKind(entry["kind"])
            trigger = entry["trigger"]
            if kind is LFKind.KEYWORD and not isinstance(trigger, list):
                raise DatasetError(f"LF {entry['id']}: keyword trigger must be a list")
            if kind is LFKind.PATTERN and not isinstance(trigger, str):
                raise DatasetError(f"LF {entry['id']}: pattern trigger must be a string")
            emits = frozenset(registry.index(name) for name in entry["emits"])
            lfs.append(LabelingFunction(entry["id"], kind,
                                        frozenset(trigger) if kind is LFKind.KEYWORD else trigger,
                                        emits))
        except (KeyError, TypeError) as e:
            raise DatasetError(f"LF entry {i} is malformed: {e}")
    if len({lf.id for lf in lfs}) != len(lfs):
        raise DatasetError(f"LF file {path} has duplicate ids")
    return lfs


def save_lfs(lfs: Sequence[LabelingFunction], registry: TeamLabelRegistry, path: str) -> None:
    entries = []
    for lf in lfs:
        trigger = sorted(lf.trigger) if lf.kind is LFKind.KEYWORD else lf.trigger
        entries.append({"id": lf.id, "kind": lf.kind.value, "trigger": trigger,
                        "emits": [registry.name(t) for t in sorted(lf.emits)]})
    Path(path).write_text(json.dumps(entries, indent=2) + "\n", encoding="utf-8")


@dataclass(frozen=True)
class LabelMatrix:
    """Which LF fired on which defect; a fired cell holds that LF's label set"""

    lfs: Tuple[LabelingFunction, ...]
    fired: np.ndarray   # (N, F) bool

    @property
    def shape(self) -> Tuple[int, int]:
        return self.fired.shape

    def cell(self, i: int, f: int) -> Optional[FrozenSet[int]]:
        return self.lfs[f].emits if self.fired[i, f] else ABSTAIN

    def emits_matrix(self, num_labels: int) -> np.ndarray:
        """Binary (F, T) matrix of each LF's emitted labels"""
        emits = np.zeros((len(self.lfs), num_labels), dtype=np.float64)
        for f, lf in enumerate(self.lfs):
            for t in lf.emits:
                emits[f, t] = 1.0
        return emits


def apply_lfs(ds: Dataset, lfs: Sequence[LabelingFunction], workers: int = 1) -> LabelMatrix:
    """
    Apply every LF to every defect text.

    Rows are assembled in dataset order regardless of the worker count.
    """
    if not lfs:
        raise ValueError("at least one labeling function is required")
    lfs = tuple(lfs)

    def row(defect) -> List[bool]:
        text = build_text(defect)
        return [lf.fires(text) for lf in lfs]

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(row, ds.defects))
    else:
        rows = [row(d) for d in ds.defects]
    fired = np.array(rows, dtype=bool).reshape(len(ds), len(lfs))
    return LabelMatrix(lfs, fired)


@dataclass(frozen=True)
class LabelModelParams:
    """Per-LF vote weights and the label assignment threshold"""

    weights: np.ndarray
    assign_threshold: float = 0.5

    def validate(self) -> None:
        if np.any(self.weights < 0) or np.any(self.weights > 1):
            raise ValueError("LF weights must lie in [0, 1]")
        if not self.weights.sum() > 0:
            raise ValueError("LF weights must not all be zero")
        if not 0.0 < self.assign_threshold <= 1.0:
            raise ValueError("assign_threshold must be in (0, 1]")


def fit_label_model(matrix: LabelMatrix, dev: Dataset,
                    assign_threshold: float = 0.5) -> LabelModelParams:
    """
    Weight each LF by its precision on a gold dev set.

    Args:
        matrix: LF outputs over the dev defects
        dev: the dev set with gold labels, row-aligned with matrix

    Returns:
        Params where a firing counts as correct when the LF's emitted labels
        are a subset of the defect's gold labels; LFs that never fire on dev
        get the uninformative weight 0.5.
    """
    if len(dev) == 0:
        raise ValueError("dev set must be non-empty to fit the label model")
    if matrix.shape[0] != len(dev):
        raise ValueError(f"label matrix has {matrix.shape[0]} rows but dev has {len(dev)} defects")
    weights = np.full(len(matrix.lfs), UNINFORMATIVE_WEIGHT, dtype=np.float64)
    for f, lf in enumerate(matrix.lfs):
        rows = np.flatnonzero(matrix.fired[:, f])
        if rows.size == 0:
            continue
        correct = sum(1 for i in rows if lf.emits <= dev[int(i)].labels)
        weights[f] = correct / rows.size
    params = LabelModelParams(weights, assign_threshold)
    params.validate()
    return params


@dataclass(frozen=True)
class WeakLabels:
    """Aggregated label sets, scores and exclusion flags, one row per defect"""

    label_sets: Tuple[FrozenSet[int], ...]
    scores: np.ndarray     # (N, T)
    excluded: np.ndarray   # (N,) bool

    @property
    def coverage(self) -> int:
        return int((~self.excluded).sum())


def aggregate(matrix: LabelMatrix, params: LabelModelParams, num_labels: int) -> WeakLabels:
    """
    Aggregate LF votes into one label set per defect.

    score(i, t) is the weight of firing LFs emitting t over the weight of all
    firing LFs; t is assigned when score >= assign_threshold. Defects with no
    firing weight get the empty set and are flagged as excluded.
    """
    params.validate()
    if params.weights.shape != (len(matrix.lfs),):
        raise ValueError("params weights do not match the label matrix")
    firing = matrix.fired * params.weights[None, :]
    total = firing.sum(axis=1)
    votes = firing @ matrix.emits_matrix(num_labels)
    excluded = total <= 0
    scores = np.zeros_like(votes)
    np.divide(votes, total[:, None], out=scores, where=~excluded[:, None])
    assigned = (scores >= params.assign_threshold) & ~excluded[:, None]
    label_sets = tuple(frozenset(int(t) for t in np.flatnonzero(row)) for row in assigned)
    return WeakLabels(label_sets, scores, excluded)


def lf_summary(matrix: LabelMatrix) -> pd.DataFrame:
    """
    Per-LF coverage, overlap and conflict rates.

    Overlap: the LF fires together with at least one other LF.
    Conflict: it fires together with an LF emitting a different label set.
    """
    fired = matrix.fired
    n = max(fired.shape[0], 1)
    rows = []
    for f, lf in enumerate(matrix.lfs):
        others = np.delete(fired, f, axis=1)
        differing = [g for g, other in enumerate(matrix.lfs) if g != f and other.emits != lf.emits]
        overlap = fired[:, f] & others.any(axis=1) if others.size else np.zeros(fired.shape[0], bool)
        conflict = fired[:, f] & fired[:, differing].any(axis=1) if differing else np.zeros(fired.shape[0], bool)
        rows.append({
            "lf": lf.id,
            "kind": lf.kind.value,
            "emits": sorted(lf.emits),
            "coverage": fired[:, f].sum() / n,
            "overlaps": overlap.sum() / n,
            "conflicts": conflict.sum() / n,
        })
    return pd.DataFrame(rows).set_index("lf")


class WeakLabeler:
    """
    Worker that turns unlabeled defects into weakly labeled training data.

    Separated from the pipeline orchestration so it can be tested and reused
    on its own: fit on a gold dev set, then label any number of datasets.
    """

    def __init__(self, lfs: Sequence[LabelingFunction], assign_threshold: float = 0.5,
                 workers: int = 1):
        if not lfs:
            raise ValueError("at least one labeling function is required")
        self.lfs = tuple(lfs)
        self.assign_threshold = assign_threshold
        self.workers = workers
        self.params: Optional[LabelModelParams] = None

        # Statistics
        self.defects_seen = 0
        self.defects_labeled = 0
        self.defects_excluded = 0

    def fit(self, dev: Dataset) -> LabelModelParams:
        """Calibrate LF weights on the gold dev set"""
        matrix = apply_lfs(dev, self.lfs, self.workers)
        self.params = fit_label_model(matrix, dev, self.assign_threshold)
        logger.info("Label model weights: " + ", ".join(
            f"{lf.id}={w:.2f}" for lf, w in zip(self.lfs, self.params.weights)))
        return self.params

    def label(self, ds: Dataset) -> Tuple[Dataset, Dict[str, Any]]:
        """
        Weakly label a dataset.

        Returns:
            The labeled dataset (excluded defects dropped, provenance 'weak')
            and a report with coverage and LF analysis
        """
        if self.params is None:
            raise RuntimeError("WeakLabeler is not fitted. Call fit() first.")
        matrix = apply_lfs(ds, self.lfs, self.workers)
        weak = aggregate(matrix, self.params, ds.registry.size)
        kept = [d.replace(labels=labels, provenance=Provenance.WEAK)
                for d, labels, skip in zip(ds.defects, weak.label_sets, weak.excluded)
                if not skip]

        self.defects_seen += len(ds)
        self.defects_labeled += len(kept)
        self.defects_excluded += int(weak.excluded.sum())
        if weak.excluded.any():
            logger.warning(f"{int(weak.excluded.sum())}/{len(ds)} defects had no LF votes "
                           f"and were excluded from weak training data")

        summary = lf_summary(matrix)
        report = {
            "n_input": len(ds),
            "n_output": len(kept),
            "coverage": weak.coverage,
            "excluded_ids": [d.id for d, skip in zip(ds.defects, weak.excluded) if skip],
            "weights": {lf.id: float(w) for lf, w in zip(self.lfs, self.params.weights)},
            "assign_threshold": self.assign_threshold,
            "lf_summary": json.loads(summary.to_json(orient="index")),
        }
        return ds.with_defects(kept), report

    def get_statistics(self) -> dict:
        return {
            "defects_seen": self.defects_seen,
            "defects_labeled": self.defects_labeled,
            "defects_excluded": self.defects_excluded,
        }


def weak_label_dataset(ds: Dataset, lfs: Sequence[LabelingFunction], dev: Dataset,
                       assign_threshold: float = 0.5) -> Tuple[Dataset, Dict[str, Any]]:
    """Fit the label model on dev, then weakly label ds"""
    labeler = WeakLabeler(lfs, assign_threshold)
    labeler.fit(dev)
    return labeler.label(ds)
