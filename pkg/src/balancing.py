"""
Multi-label oversampling (MLSMOTE) over bag-of-token features.
"""
import logging
from collections import Counter
from dataclasses import dataclass
from typing import Any, Dict, FrozenSet, List, Sequence, Tuple

import numpy as np
from sklearn.neighbors import NearestNeighbors

from .corpus import Dataset, DatasetError, Defect, Provenance, build_text
from .tokenizer import Vocab, build_vocab, tokenize

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class ImbalanceStats:
    """
    Per-label imbalance ratios.

    irlbl[t] = max(counts) / counts[t]; NaN for labels with no positives,
    which are listed in zero_labels and left out of mean_ir.
    """

    counts: np.ndarray
    irlbl: np.ndarray
    mean_ir: float
    zero_labels: Tuple[int, ...]


def imbalance_stats(ds: Dataset) -> ImbalanceStats:
    """Count positives per label and derive IRLbl and MeanIR"""
    if len(ds) == 0:
        raise DatasetError("cannot compute imbalance of an empty dataset")
    counts = ds.label_counts()
    if counts.max() == 0:
        raise DatasetError("every label has zero positive samples")
    present = counts > 0
    irlbl = np.full(counts.shape, np.nan)
    irlbl[present] = counts.max() / counts[present]
    zero = tuple(int(t) for t in np.flatnonzero(~present))
    return ImbalanceStats(counts, irlbl, float(irlbl[present].mean()), zero)


def minority_labels(stats: ImbalanceStats) -> FrozenSet[int]:
    """Labels whose IRLbl exceeds MeanIR"""
    with np.errstate(invalid="ignore"):
        above = stats.irlbl > stats.mean_ir
    return frozenset(int(t) for t in np.flatnonzero(above))


def feature_matrix(ds: Dataset, vocab: Vocab) -> np.ndarray:
    """Bag-of-token counts, one row per defect, one column per vocabulary id"""
    features = np.zeros((len(ds), len(vocab)))
    for i, defect in enumerate(ds):
        for token_id in vocab.ids(tokenize(build_text(defect))):
            features[i, token_id] += 1.0
    return features


def interpolate(f_s: np.ndarray, f_n: np.ndarray, r: float) -> np.ndarray:
    """f_s + r * (f_n - f_s), before rounding"""
    return f_s + r * (f_n - f_s)


def ranking_labelset(member_labels: np.ndarray) -> FrozenSet[int]:
    """Labels present in strictly more than half of the member label rows"""
    votes = member_labels.sum(axis=0)
    return frozenset(int(t) for t in np.flatnonzero(votes * 2 > member_labels.shape[0]))


def realize_text(counts: np.ndarray, source_tokens: Sequence[str], neighbor_tokens: Sequence[str],
                 vocab: Vocab) -> str:
    """
    Turn integer token counts back into text.

    Tokens follow their first appearance in the source defect, then tokens
    only the neighbor has, in the neighbor's order.
    """
    ordered = list(dict.fromkeys(list(source_tokens) + list(neighbor_tokens)))
    words: List[str] = []
    for token in ordered:
        words.extend([token] * int(counts[vocab.id(token)]))
    return " ".join(words)


class MLSmoteBalancer:
    """
    Worker that appends synthetic samples for minority labels.

    For each minority label (ascending id) and each sample bearing it, a
    neighbor is drawn among its k nearest same-label samples, features are
    interpolated at a uniform r and rounded half-to-even, and the label set
    follows the ranking rule over the k+1 member label sets.
    """

    def __init__(self, k: int = 5, seed: int = 0, workers: int = 1):
        if k < 1:
            raise ValueError("k must be >= 1")
        self.k = k
        self.seed = seed
        self.workers = workers

        # Statistics
        self.synthetic_emitted = 0
        self.labels_processed = 0
        self.labels_skipped = 0
        self.empty_realizations = 0

    def balance(self, ds: Dataset) -> Tuple[Dataset, Dict[str, Any]]:
        before = imbalance_stats(ds)
        minority = sorted(minority_labels(before))
        vocab = build_vocab(ds, min_freq=1, max_size=len(ds) * 1000 + 10)
        features = feature_matrix(ds, vocab)
        labels = ds.label_matrix()
        token_lists = [tokenize(build_text(d)) for d in ds]
        rng = np.random.default_rng(self.seed)
        k = self.k

        synthetic: List[Defect] = []
        skipped: Dict[str, int] = {}
        taken = {d.id for d in ds}
        for t in minority:
            bag = np.flatnonzero(labels[:, t])
            name = ds.registry.name(t)
            if len(bag) < k + 1:
                skipped[name] = int(len(bag))
                logger.warning(f"Skipping minority label {name!r}: {len(bag)} samples, "
                               f"need at least {k + 1}")
                continue
            self.labels_processed += 1
            search = NearestNeighbors(n_neighbors=k + 1, algorithm="brute",
                                      n_jobs=self.workers if self.workers > 1 else None)
            search.fit(features[bag])
            _, neighbor_rows = search.kneighbors(features[bag])
            for row, s in enumerate(bag):
                members = [int(j) for j in neighbor_rows[row] if j != row][:k]
                n = bag[members[rng.integers(len(members))]]
                r = rng.random()
                counts = np.rint(interpolate(features[s], features[n], r))
                labelset = ranking_labelset(labels[[s] + [bag[j] for j in members]])
                text = realize_text(counts, token_lists[s], token_lists[n], vocab)
                if not text:
                    self.empty_realizations += 1
                    continue
                synthetic_id = f"{ds[s].id}-smote{t}"
                while synthetic_id in taken:
                    synthetic_id += "x"
                taken.add(synthetic_id)
                synthetic.append(Defect(synthetic_id, text, "", labelset, Provenance.MLSMOTE))

        balanced = ds.with_defects(list(ds.defects) + synthetic)
        after = imbalance_stats(balanced)
        self.synthetic_emitted += len(synthetic)
        self.labels_skipped += len(skipped)
        logger.info(f"MLSMOTE added {len(synthetic)} samples for {len(minority)} minority labels; "
                    f"MeanIR {before.mean_ir:.3f} -> {after.mean_ir:.3f}")

        names = ds.registry.labels
        report = {
            "n_input": len(ds),
            "n_output": len(balanced),
            "n_synthetic": len(synthetic),
            "k": k,
            "minority_labels": [names[t] for t in minority],
            "skipped_labels": skipped,
            "counts_before": dict(zip(names, before.counts.tolist())),
            "counts_after": dict(zip(names, after.counts.tolist())),
            "mean_ir_before": before.mean_ir,
            "mean_ir_after": after.mean_ir,
            "provenance_after": dict(Counter(d.provenance.value for d in balanced)),
        }
        return balanced, report

    def get_statistics(self) -> dict:
        return {
            "synthetic_emitted": self.synthetic_emitted,
            "labels_processed": self.labels_processed,
            "labels_skipped": self.labels_skipped,
            "empty_realizations": self.empty_realizations,
        }


def mlsmote(ds: Dataset, k: int = 5, seed: int = 0) -> Dataset:
    """Append MLSMOTE samples for every minority label; originals stay untouched"""
    balanced, _ = MLSmoteBalancer(k, seed).balance(ds)
    return balanced
