"""
Word-level vocabulary and encoder input construction.

Three input variants are supported:
    baseline    [CLS] d1..dK [SEP]
    fuse_nosep  [CLS] L1..LT d1..dK [SEP]
    fuse_sep    [CLS] L1..LT [SEP] d1..dK [SEP]   (segment 1 after the first [SEP])
"""
import hashlib
import json
import logging
import re
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from .config import Variant
from .corpus import Dataset, build_text

logger = logging.getLogger(__name__)

PAD, UNK, CLS, SEP = "[PAD]", "[UNK]", "[CLS]", "[SEP]"
RESERVED_TOKENS = (PAD, UNK, CLS, SEP)
PAD_ID, UNK_ID, CLS_ID, SEP_ID = 0, 1, 2, 3

_TOKEN = re.compile(r"[^\W_]+")


class VocabMismatchError(ValueError):
    """Raised when encoded data and a model were built under different vocabularies"""


def tokenize(text: str) -> List[str]:
    """Lowercase and split on whitespace and punctuation; punctuation is dropped"""
    return _TOKEN.findall(text.lower())


@dataclass(frozen=True)
class Vocab:
    """Immutable token -> id map with the four reserved ids first"""

    tokens: Tuple[str, ...]

    def __post_init__(self):
        tokens = tuple(self.tokens)
        object.__setattr__(self, "tokens", tokens)
        if tokens[:len(RESERVED_TOKENS)] != RESERVED_TOKENS:
            raise ValueError("vocab must start with [PAD], [UNK], [CLS], [SEP]")
        if len(set(tokens)) != len(tokens):
            raise ValueError("vocab tokens must be unique")
        for token in tokens[len(RESERVED_TOKENS):]:
            if token != token.lower():
                raise ValueError(f"vocab token {token!r} is not lowercase")
        object.__setattr__(self, "_ids", {tok: i for i, tok in enumerate(tokens)})

    def __len__(self) -> int:
        return len(self.tokens)

    def __contains__(self, token: str) -> bool:
        return token in self._ids

    def id(self, token: str) -> int:
        return self._ids.get(token, UNK_ID)

    def ids(self, tokens: Iterable[str]) -> List[int]:
        return [self._ids.get(tok, UNK_ID) for tok in tokens]

    def to_dict(self) -> Dict[str, int]:
        return {tok: i for i, tok in enumerate(self.tokens)}

    def vocab_hash(self) -> str:
        return hashlib.sha256(json.dumps(list(self.tokens)).encode("utf-8")).hexdigest()[:16]

    def save(self, path: str) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1, ensure_ascii=False) + "\n",
                              encoding="utf-8")

    @classmethod
    def from_dict(cls, mapping: Dict[str, int]) -> "Vocab":
        ordered = sorted(mapping.items(), key=lambda item: item[1])
        if [i for _, i in ordered] != list(range(len(ordered))):
            raise ValueError("vocab ids must be dense in [0, size)")
        return cls(tuple(tok for tok, _ in ordered))

    @classmethod
    def from_file(cls, path: str) -> "Vocab":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def build_vocab(ds: Dataset, min_freq: int = 1, max_size: int = 30000,
                include_label_names: bool = False) -> Vocab:
    """
    Build a vocabulary from a dataset's defect texts.

    Tokens with frequency >= min_freq enter most frequent first, ties broken
    lexicographically, up to max_size ids including the reserved ones. With
    include_label_names, registry label tokens are appended after the ranked
    corpus tokens so fused inputs never map a label to [UNK].
    """
    if min_freq < 1:
        raise ValueError("min_freq must be >= 1")
    counts: Counter = Counter()
    for defect in ds:
        counts.update(tokenize(build_text(defect)))
    if not counts:
        raise ValueError("cannot build a vocabulary from an empty corpus")

    extra: List[str] = []
    if include_label_names:
        for name in ds.registry.labels:
            for tok in tokenize(name):
                if tok not in extra:
                    extra.append(tok)

    budget = max_size - len(RESERVED_TOKENS)
    if budget < 1:
        raise ValueError("max_size must leave room beyond the reserved tokens")
    if len(extra) > budget:
        raise ValueError("max_size is too small for the label name tokens")
    ranked = sorted((tok for tok, c in counts.items() if c >= min_freq and tok not in extra),
                    key=lambda tok: (-counts[tok], tok))
    kept = ranked[:budget - len(extra)] + extra
    vocab = Vocab(RESERVED_TOKENS + tuple(kept))
    logger.info(f"Built vocabulary of {len(vocab)} tokens from {len(ds)} defects")
    return vocab


@dataclass(frozen=True)
class EncodedInput:
    """Token, segment and mask sequences for one defect, padded to max_len"""

    token_ids: np.ndarray
    segment_ids: np.ndarray
    attention_mask: np.ndarray
    variant: Variant

    @property
    def length(self) -> int:
        return int(self.token_ids.shape[0])


def _pack(pieces: Sequence[Tuple[List[int], int]], max_len: int, variant: Variant) -> EncodedInput:
    ids: List[int] = []
    segments: List[int] = []
    for piece, segment in pieces:
        ids.extend(piece)
        segments.extend([segment] * len(piece))
    real = len(ids)
    pad = max_len - real
    return EncodedInput(
        token_ids=np.array(ids + [PAD_ID] * pad, dtype=np.int64),
        segment_ids=np.array(segments + [0] * pad, dtype=np.int64),
        attention_mask=np.array([1] * real + [0] * pad, dtype=np.int64),
        variant=variant,
    )


def _label_ids(label_texts: Sequence[str], vocab: Vocab) -> List[int]:
    ids: List[int] = []
    for text in label_texts:
        ids.extend(vocab.ids(tokenize(text)))
    return ids


def encode_baseline(defect_text: str, vocab: Vocab, max_len: int) -> EncodedInput:
    """[CLS] d1..dK [SEP]; defect tokens truncated from the end"""
    if max_len < 2:
        raise ValueError("max_len must be >= 2")
    defect_ids = vocab.ids(tokenize(defect_text))[:max_len - 2]
    return _pack([([CLS_ID], 0), (defect_ids, 0), ([SEP_ID], 0)], max_len, Variant.BASELINE)


def encode_fuse_nosep(label_texts: Sequence[str], defect_text: str, vocab: Vocab,
                      max_len: int) -> EncodedInput:
    """[CLS] L1..LT d1..dK [SEP]; label tokens are never truncated"""
    label_ids = _label_ids(label_texts, vocab)
    if len(label_ids) + 2 >= max_len:
        raise ValueError(f"{len(label_ids)} label tokens do not fit in max_len={max_len}")
    defect_ids = vocab.ids(tokenize(defect_text))[:max_len - 2 - len(label_ids)]
    return _pack([([CLS_ID], 0), (label_ids, 0), (defect_ids, 0), ([SEP_ID], 0)],
                 max_len, Variant.FUSE_NOSEP)


def encode_fuse_sep(label_texts: Sequence[str], defect_text: str, vocab: Vocab,
                    max_len: int) -> EncodedInput:
    """[CLS] L1..LT [SEP] d1..dK [SEP]; segment 1 after the first [SEP]"""
    label_ids = _label_ids(label_texts, vocab)
    if len(label_ids) + 2 >= max_len:
        raise ValueError(f"{len(label_ids)} label tokens do not fit in max_len={max_len}")
    defect_ids = vocab.ids(tokenize(defect_text))[:max_len - 3 - len(label_ids)]
    return _pack([([CLS_ID], 0), (label_ids, 0), ([SEP_ID], 0), (defect_ids, 1), ([SEP_ID], 1)],
                 max_len, Variant.FUSE_SEP)


def encode(variant: Variant, defect_text: str, vocab: Vocab, max_len: int,
           label_texts: Optional[Sequence[str]] = None) -> EncodedInput:
    """Dispatch to the encoder for a variant"""
    if variant is Variant.BASELINE:
        return encode_baseline(defect_text, vocab, max_len)
    if label_texts is None:
        raise ValueError(f"variant {variant.value} needs the registry label texts")
    if variant is Variant.FUSE_NOSEP:
        return encode_fuse_nosep(label_texts, defect_text, vocab, max_len)
    return encode_fuse_sep(label_texts, defect_text, vocab, max_len)


@dataclass(frozen=True)
class EncodedDataset:
    """Stacked encoder inputs and binary targets for a whole dataset"""

    token_ids: np.ndarray        # (N, L)
    segment_ids: np.ndarray      # (N, L)
    attention_mask: np.ndarray   # (N, L)
    targets: np.ndarray          # (N, T)
    variant: Variant
    vocab_hash: str

    def __len__(self) -> int:
        return int(self.token_ids.shape[0])

    def take(self, index: np.ndarray) -> "EncodedDataset":
        return EncodedDataset(self.token_ids[index], self.segment_ids[index],
                              self.attention_mask[index], self.targets[index],
                              self.variant, self.vocab_hash)


def encode_dataset(ds: Dataset, vocab: Vocab, variant: Variant, max_len: int) -> EncodedDataset:
    """Encode every defect of a dataset under one vocabulary"""
    label_texts = list(ds.registry.labels)
    encoded = [encode(variant, build_text(d), vocab, max_len, label_texts) for d in ds]
    n = len(encoded)
    if n:
        token_ids = np.stack([e.token_ids for e in encoded])
        segment_ids = np.stack([e.segment_ids for e in encoded])
        attention_mask = np.stack([e.attention_mask for e in encoded])
    else:
        token_ids = segment_ids = attention_mask = np.zeros((0, max_len), dtype=np.int64)
    return EncodedDataset(token_ids, segment_ids, attention_mask,
                          ds.label_matrix(), variant, vocab.vocab_hash())
