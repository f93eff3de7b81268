"""
Word embedding table used by the adversarial augmenter.

The desk-scale table is built from the training corpus itself: positive PMI
co-occurrence counts factorized with a truncated SVD, plus a block of
hand-curated synonym groups whose members share an anchor direction.
"""
import json
import logging
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from sklearn.decomposition import TruncatedSVD

from .corpus import Dataset, DatasetError, build_text
from .tokenizer import tokenize

logger = logging.getLogger(__name__)

DEFAULT_DIM = 50
COOCCURRENCE_WINDOW = 2
SYNONYM_SPREAD = 0.2   # member = anchor + 0.2 * orthonormal offset -> pairwise cosine 1/1.04
CORPUS_WEIGHT = 0.5   # weight of the co-occurrence direction in a corpus word vector


@dataclass(frozen=True)
class EmbeddingTable:
    """Case-insensitive word -> vector map with a shared dimension"""

    dim: int
    entries: Dict[str, np.ndarray]
    _words: Tuple[str, ...] = field(init=False, repr=False, compare=False)
    _unit: np.ndarray = field(init=False, repr=False, compare=False)
    _index: Dict[str, int] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.dim < 1:
            raise ValueError("embedding dim must be >= 1")
        normalized: Dict[str, np.ndarray] = {}
        for word, vector in self.entries.items():
            key = word.lower()
            if key in normalized:
                raise ValueError(f"duplicate embedding entry {key!r}")
            vector = np.asarray(vector, dtype=np.float64)
            if vector.shape != (self.dim,):
                raise ValueError(f"vector for {key!r} has shape {vector.shape}, expected ({self.dim},)")
            if not np.all(np.isfinite(vector)) or not np.any(vector):
                raise ValueError(f"vector for {key!r} is zero or non-finite")
            normalized[key] = vector
        words = tuple(sorted(normalized))
        matrix = np.stack([normalized[w] for w in words]) if words else np.zeros((0, self.dim))
        unit = matrix / np.linalg.norm(matrix, axis=1, keepdims=True) if words else matrix
        object.__setattr__(self, "entries", normalized)
        object.__setattr__(self, "_words", words)
        object.__setattr__(self, "_unit", unit)
        object.__setattr__(self, "_index", {w: i for i, w in enumerate(words)})

    def __len__(self) -> int:
        return len(self._words)

    def __contains__(self, word: str) -> bool:
        return word.lower() in self._index

    def vector(self, word: str) -> Optional[np.ndarray]:
        return self.entries.get(word.lower())

    def cosine(self, a: str, b: str) -> float:
        i, j = self._index[a.lower()], self._index[b.lower()]
        return float(self._unit[i] @ self._unit[j])

    def similarities(self, word: str) -> Optional[Tuple[Tuple[str, ...], np.ndarray]]:
        """Cosine of a word against every entry, or None when the word is absent"""
        i = self._index.get(word.lower())
        if i is None:
            return None
        return self._words, self._unit @ self._unit[i]


def save_embedding_table(table: EmbeddingTable, path: str) -> None:
    """Write "<count> <dim>" then one "word v1 .. vdim" line per entry"""
    lines = [f"{len(table)} {table.dim}"]
    for word in sorted(table.entries):
        lines.append(word + " " + " ".join(repr(float(x)) for x in table.entries[word]))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_embedding_table(path: str) -> EmbeddingTable:
    """
    Read an embedding table file.

    Raises:
        DatasetError: malformed header or rows, with the offending line number
    """
    with open(path, encoding="utf-8") as fh:
        lines = [line.rstrip("\n") for line in fh]
    if not lines:
        raise DatasetError("empty embedding table file", line=1)
    header = lines[0].split()
    try:
        count, dim = int(header[0]), int(header[1])
    except (IndexError, ValueError):
        raise DatasetError(f"expected '<count> <dim>' header, got {lines[0]!r}", line=1)
    entries: Dict[str, np.ndarray] = {}
    rows = [(n, line) for n, line in enumerate(lines[1:], start=2) if line.strip()]
    if len(rows) != count:
        raise DatasetError(f"header announces {count} entries, file has {len(rows)}")
    for n, line in rows:
        parts = line.split()
        if len(parts) != dim + 1:
            raise DatasetError(f"expected a word and {dim} values, got {len(parts) - 1} values", line=n)
        try:
            vector = np.array([float(x) for x in parts[1:]])
        except ValueError as e:
            raise DatasetError(f"bad vector value: {e}", line=n)
        if not np.any(vector):
            raise DatasetError(f"zero vector for {parts[0]!r}", line=n)
        if parts[0].lower() in entries:
            raise DatasetError(f"duplicate entry {parts[0]!r}", line=n)
        entries[parts[0].lower()] = vector
    return EmbeddingTable(dim, entries)


def load_synonym_groups(path: str) -> List[List[str]]:
    groups = json.loads(Path(path).read_text(encoding="utf-8"))
    if not isinstance(groups, list) or not all(isinstance(g, list) and len(g) >= 2 for g in groups):
        raise DatasetError(f"{path}: synonym file must be a list of word lists (2+ words each)")
    return [[str(w).lower() for w in g] for g in groups]


def _ppmi(cooc: np.ndarray) -> np.ndarray:
    total = cooc.sum()
    rows = cooc.sum(axis=1, keepdims=True)
    cols = cooc.sum(axis=0, keepdims=True)
    with np.errstate(divide="ignore", invalid="ignore"):
        pmi = np.log(cooc * total / (rows * cols))
    pmi[~np.isfinite(pmi)] = 0.0
    return np.maximum(pmi, 0.0)


def _orthonormal(rng: np.random.Generator, dim: int, count: int) -> np.ndarray:
    q, _ = np.linalg.qr(rng.normal(size=(dim, count)))
    return q.T


def build_embedding_table(ds: Dataset, synonym_groups: Sequence[Sequence[str]] = (),
                          dim: int = DEFAULT_DIM, seed: int = 0,
                          window: int = COOCCURRENCE_WINDOW) -> EmbeddingTable:
    """
    Build a desk-scale embedding table from a corpus and synonym groups.

    Corpus words get rows of a truncated SVD of the positive-PMI co-occurrence
    matrix (symmetric window), blended with a word-specific random unit vector
    so that corpus words alone rarely reach augmentation-level cosine. Each
    synonym group gets a random unit anchor; members sit at anchor + 0.2 * e_i with e_i orthonormal to the anchor and to
    each other, so any two members have cosine 1 / 1.04. Synonym vectors take
    precedence over corpus vectors.
    """
    rng = np.random.default_rng(seed)
    counts: Counter = Counter()
    docs = [tokenize(build_text(d)) for d in ds]
    for tokens in docs:
        counts.update(tokens)
    words = sorted(counts)
    index = {w: i for i, w in enumerate(words)}
    entries: Dict[str, np.ndarray] = {}

    if len(words) >= 2:
        cooc = np.zeros((len(words), len(words)))
        for tokens in docs:
            ids = [index[t] for t in tokens]
            for pos, i in enumerate(ids):
                for j in ids[max(0, pos - window):pos]:
                    cooc[i, j] += 1.0
                    cooc[j, i] += 1.0
        components = min(dim, len(words) - 1)
        svd = TruncatedSVD(n_components=components, random_state=seed)
        reduced = svd.fit_transform(_ppmi(cooc))
        vectors = np.zeros((len(words), dim))
        vectors[:, :components] = reduced
        for w, v in zip(words, vectors):
            own = rng.normal(size=dim)
            own /= np.linalg.norm(own)
            norm = np.linalg.norm(v)
            if norm > 1e-12:
                own = CORPUS_WEIGHT * v / norm + np.sqrt(1.0 - CORPUS_WEIGHT ** 2) * own
            entries[w] = own / np.linalg.norm(own)

    assigned = set()
    for group in synonym_groups:
        members = list(dict.fromkeys(w.lower() for w in group))
        if len(members) + 1 > dim:
            raise ValueError(f"synonym group of {len(members)} words does not fit in dim {dim}")
        basis = _orthonormal(rng, dim, len(members) + 1)
        anchor, offsets = basis[0], basis[1:]
        for word, offset in zip(members, offsets):
            if word in assigned:
                logger.warning(f"Word {word!r} appears in more than one synonym group")
            entries[word] = anchor + SYNONYM_SPREAD * offset
            assigned.add(word)
    logger.info(f"Built embedding table: {len(entries)} words, dim {dim}, "
                f"{len(assigned)} words in {len(synonym_groups)} synonym groups")
    return EmbeddingTable(dim, entries)
