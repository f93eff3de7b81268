"""
Adversarial augmentation by embedding-neighbor word swaps.

A sampled share of defects gets a few extra copies in which a small share of
the words is replaced by near neighbors in embedding space. Labels carry over
unchanged.
"""
import logging
import math
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from typing import Any, Dict, List, Optional, Tuple

import numpy as np

from .config import AugmentConfig, derive_seed
from .corpus import Dataset, Defect, Provenance
from .embeddings import EmbeddingTable

logger = logging.getLogger(__name__)

_WORD = re.compile(r"([^\W_]+)")
FIELDS = ("title", "description")


@dataclass(frozen=True)
class Swap:
    """One recorded word replacement"""

    defect_id: str
    copy: int
    copy_id: str
    field: str
    position: int        # word index within the field
    original: str
    replacement: str
    cosine: float


@dataclass
class AugmentOutcome:
    """Copies produced for one defect, with the swap audit"""

    copies: List[Defect] = field(default_factory=list)
    swaps: List[Swap] = field(default_factory=list)
    shortfall: int = 0
    skipped: bool = False


def scored_neighbors(word: str, table: EmbeddingTable, k: int,
                     min_cos: float) -> List[Tuple[str, float]]:
    """(word, cosine) pairs for up to k other words with cosine >= min_cos, best first"""
    if k < 1:
        raise ValueError("k must be >= 1")
    found = table.similarities(word)
    if found is None:
        return []
    words, cosines = found
    query = word.lower()
    order = np.lexsort((np.arange(len(words)), -cosines))
    result = []
    for i in order:
        if cosines[i] < min_cos:
            break
        if words[i] == query:
            continue
        result.append((words[i], float(cosines[i])))
        if len(result) == k:
            break
    return result


def nearest_neighbors(word: str, table: EmbeddingTable, k: int, min_cos: float) -> List[str]:
    """
    Up to k distinct other words with cosine >= min_cos, most similar first.

    A word missing from the table has no neighbors.
    """
    return [w for w, _ in scored_neighbors(word, table, k, min_cos)]


def _match_case(source: str, replacement: str) -> str:
    if source[:1].isupper():
        return replacement[:1].upper() + replacement[1:]
    return replacement


def perturb_defect(d: Defect, cfg: AugmentConfig, table: EmbeddingTable,
                   rng: np.random.Generator,
                   cache: Optional[Dict[str, List[Tuple[str, float]]]] = None) -> AugmentOutcome:
    """
    Produce cfg.copies_per_defect perturbed copies of a defect.

    Each copy swaps B = max(1, ceil(perturb_rate * words)) distinct word
    positions, chosen uniformly among positions that have a qualifying
    neighbor, for a uniformly chosen neighbor. When fewer positions qualify,
    all of them are swapped and the shortfall is recorded.
    """
    cache = {} if cache is None else cache
    pieces = {name: _WORD.split(getattr(d, name)) for name in FIELDS}
    positions: List[Tuple[str, int, int]] = []   # (field, piece index, word index)
    for name in FIELDS:
        for word_index, piece_index in enumerate(range(1, len(pieces[name]), 2)):
            positions.append((name, piece_index, word_index))
    if not positions:
        raise ValueError(f"defect {d.id} has no words")

    def neighbors(word: str) -> List[Tuple[str, float]]:
        key = word.lower()
        if key not in cache:
            cache[key] = scored_neighbors(key, table, cfg.neighbor_k, cfg.min_cosine)
        return cache[key]

    qualifying = [p for p in positions if neighbors(pieces[p[0]][p[1]])]
    outcome = AugmentOutcome()
    if not qualifying:
        outcome.skipped = True
        logger.info(f"Skipping augmentation of {d.id}: no word has a neighbor "
                    f"with cosine >= {cfg.min_cosine}")
        return outcome

    budget = max(1, math.ceil(cfg.perturb_rate * len(positions)))
    outcome.shortfall = max(0, budget - len(qualifying))
    for copy in range(1, cfg.copies_per_defect + 1):
        altered = {name: list(parts) for name, parts in pieces.items()}
        picks = rng.choice(len(qualifying), size=min(budget, len(qualifying)), replace=False)
        copy_id = f"{d.id}-aug{copy}"
        swaps = []
        for pick in sorted(picks):
            name, piece_index, word_index = qualifying[pick]
            original = pieces[name][piece_index]
            candidates = neighbors(original)
            replacement, cosine = candidates[rng.integers(len(candidates))]
            altered[name][piece_index] = _match_case(original, replacement)
            swaps.append(Swap(d.id, copy, copy_id, name, word_index, original, replacement, cosine))
        title, description = ("".join(altered[name]) for name in FIELDS)
        if title == d.title and description == d.description:
            continue
        outcome.copies.append(d.replace(id=copy_id, title=title,
                                        description=description,
                                        provenance=Provenance.AUGMENTED))
        outcome.swaps.extend(swaps)
    return outcome


def augment_defect(d: Defect, cfg: AugmentConfig, table: EmbeddingTable,
                   rng: np.random.Generator) -> List[Defect]:
    """Perturbed copies of one defect; empty when no word can be swapped"""
    return perturb_defect(d, cfg, table, rng).copies


class Augmenter:
    """Worker that appends adversarial copies to a dataset"""

    def __init__(self, cfg: AugmentConfig, table: EmbeddingTable, workers: int = 1):
        cfg.validate()
        self.cfg = cfg
        self.table = table
        self.workers = workers

        # Statistics
        self.defects_sampled = 0
        self.copies_emitted = 0
        self.defects_skipped = 0
        self.shortfalls = 0

    def _defect_rng(self, d: Defect) -> np.random.Generator:
        return np.random.default_rng(derive_seed(self.cfg.seed, "augment", d.id))

    @staticmethod
    def _assign_ids(ds: Dataset, outcomes: List[AugmentOutcome]) -> Tuple[List[Defect], List[Swap]]:
        """Copies and swaps in source order; a copy id already taken gets an 'x' suffix"""
        taken = {d.id for d in ds}
        copies: List[Defect] = []
        swaps: List[Swap] = []
        for outcome in outcomes:
            renamed: Dict[str, str] = {}
            for c in outcome.copies:
                copy_id = c.id
                while copy_id in taken:
                    copy_id += "x"
                taken.add(copy_id)
                if copy_id != c.id:
                    logger.debug(f"Copy id {c.id} is taken; using {copy_id}")
                    renamed[c.id] = copy_id
                    c = c.replace(id=copy_id)
                copies.append(c)
            swaps.extend(replace(s, copy_id=renamed.get(s.copy_id, s.copy_id)) for s in outcome.swaps)
        return copies, swaps

    def augment(self, ds: Dataset) -> Tuple[Dataset, Dict[str, Any]]:
        """
        Sample floor(sample_fraction * N) defects and append their copies.

        Returns:
            The grown dataset (originals first, copies in source order) and a
            report carrying the swap audit
        """
        if len(ds) == 0:
            raise ValueError("cannot augment an empty dataset")
        n_sample = math.floor(self.cfg.sample_fraction * len(ds))
        sampler = np.random.default_rng(derive_seed(self.cfg.seed, "augment-sample"))
        chosen = sorted(int(i) for i in sampler.choice(len(ds), size=n_sample, replace=False))
        sampled = [ds[i] for i in chosen]

        def run(d: Defect) -> AugmentOutcome:
            return perturb_defect(d, self.cfg, self.table, self._defect_rng(d))

        if self.workers > 1:
            with ThreadPoolExecutor(max_workers=self.workers) as pool:
                outcomes = list(pool.map(run, sampled))
        else:
            outcomes = [run(d) for d in sampled]

        copies, swaps = self._assign_ids(ds, outcomes)
        skipped = [d.id for d, o in zip(sampled, outcomes) if o.skipped]
        shortfalls = {d.id: o.shortfall for d, o in zip(sampled, outcomes) if o.shortfall}

        self.defects_sampled += len(sampled)
        self.copies_emitted += len(copies)
        self.defects_skipped += len(skipped)
        self.shortfalls += len(shortfalls)
        logger.info(f"Augmented {len(sampled)}/{len(ds)} defects into {len(copies)} copies "
                    f"({len(skipped)} skipped, {len(shortfalls)} with a swap shortfall)")

        report = {
            "n_input": len(ds),
            "n_sampled": len(sampled),
            "n_output": len(ds) + len(copies),
            "n_copies": len(copies),
            "skipped_ids": skipped,
            "shortfalls": shortfalls,
            "config": asdict(self.cfg),
            "swaps": [asdict(s) for s in swaps],
        }
        return ds.with_defects(list(ds.defects) + copies), report

    def get_statistics(self) -> dict:
        return {
            "defects_sampled": self.defects_sampled,
            "copies_emitted": self.copies_emitted,
            "defects_skipped": self.defects_skipped,
            "shortfalls": self.shortfalls,
        }


def augment_dataset(ds: Dataset, cfg: AugmentConfig, table: EmbeddingTable) -> Dataset:
    """Grow a dataset with adversarial copies of a seeded random sample"""
    augmented, _ = Augmenter(cfg, table).augment(ds)
    return augmented
