"""
Defect data model, dataset files and the synthetic corpus generator.
"""
import hashlib
import json
import logging
import re
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, Dict, FrozenSet, Iterable, Iterator, List, Mapping, Optional, Sequence, Tuple

import numpy as np

logger = logging.getLogger(__name__)

LINEAGE_PREFIX = "# lineage "
TEXT_SEPARATOR = " . "

DEFAULT_TEAM_LABELS: Tuple[str, ...] = (
    "cart", "checkout", "search", "pricing", "payments",
    "pickup", "delivery", "account", "catalog", "orders",
    "inventory", "notifications", "reviews", "pharmacy", "membership",
)

# Signature words planted for each default team label. Pools are pairwise disjoint.
DEFAULT_KEYWORD_POOLS: Dict[str, Tuple[str, ...]] = {
    "cart": ("basket", "quantity", "subtotal", "minicart", "saveforlater"),
    "checkout": ("checkout", "placeorder", "tipping", "ordersummary", "confirmation"),
    "search": ("search", "query", "typeahead", "autocomplete", "facets"),
    "pricing": ("price", "cost", "prices", "discount", "rollback", "unitprice"),
    "payments": ("card", "paypal", "giftcard", "billing", "cvv"),
    "pickup": ("pickup", "curbside", "slot", "parking", "checkin"),
    "delivery": ("delivery", "courier", "eta", "doorstep", "shipment"),
    "account": ("login", "password", "profile", "signup", "otp"),
    "catalog": ("nutrition", "nourishment", "ingredients", "specifications", "thumbnail", "carousel"),
    "orders": ("refund", "cancel", "reorder", "receipt", "tracking"),
    "inventory": ("stock", "outofstock", "backorder", "availability", "substitution"),
    "notifications": ("push", "email", "sms", "alert", "banner"),
    "reviews": ("rating", "stars", "review", "helpful", "photos"),
    "pharmacy": ("prescription", "refill", "pharmacist", "vaccine", "insurance"),
    "membership": ("membership", "renewal", "trial", "perks", "subscription"),
}

DEFAULT_NOISE_VOCAB: Tuple[str, ...] = (
    "app", "ios", "android", "web", "screen", "page", "button", "tile", "tiles",
    "icon", "header", "footer", "layout", "spacing", "text", "font", "image",
    "link", "spinner", "message", "modal", "toggle", "dropdown", "tab", "menu",
    "scroll", "swipe", "tap", "click", "loading", "blank", "wrong", "incorrect",
    "missing", "duplicate", "broken", "slow", "stuck", "frozen", "overlapping",
    "truncated", "misaligned", "large", "small", "grey", "updated", "refreshed",
    "customer", "user", "tester", "store", "weekend", "morning", "device",
    "tablet", "desktop", "version", "release", "build", "displaying", "appearing",
)

DEFAULT_SENTENCE_TEMPLATES: Tuple[str, ...] = (
    "{kw} {noise} {noise} on the {noise} page",
    "{noise} {kw} not {noise} after {noise}",
    "the {kw} is {noise} when using the {noise}",
    "{kw} showing {noise} on {noise}",
    "cannot {noise} {kw} from the {noise} screen",
    "{noise} {noise} for {kw} is {noise}",
    "seeing {noise} {kw} in {noise} view",
    "{kw} {noise} inconsistently across {noise}",
)

NOISE_TEMPLATE = "{noise} {noise} {noise} {noise}"

_PLACEHOLDER = re.compile(r"\{(kw|noise)\}")
_LABEL_NAME = re.compile(r"^[a-z][a-z0-9]*$")


class DatasetError(ValueError):
    """Raised when a dataset, registry or generator spec is invalid"""

    def __init__(self, message: str, line: Optional[int] = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class Provenance(Enum):
    """Pipeline stage that produced a defect record"""
    REAL = "real"
    SYNTHETIC = "synthetic"
    WEAK = "weak"
    AUGMENTED = "augmented"
    MLSMOTE = "mlsmote"


class Split(Enum):
    """Dataset split"""
    TRAIN = "train"
    DEV = "dev"
    TEST = "test"


@dataclass(frozen=True)
class TeamLabelRegistry:
    """Ordered team label names; the position of a name is its label id"""

    labels: Tuple[str, ...]

    def __post_init__(self):
        labels = tuple(self.labels)
        object.__setattr__(self, "labels", labels)
        if len(labels) < 2:
            raise DatasetError("registry needs at least 2 labels")
        if len(set(labels)) != len(labels):
            raise DatasetError("registry label names must be unique")
        for name in labels:
            if not isinstance(name, str) or not _LABEL_NAME.match(name):
                raise DatasetError(f"invalid label name {name!r}: expected a lowercase word")
        object.__setattr__(self, "_index", {name: i for i, name in enumerate(labels)})

    @classmethod
    def default(cls) -> "TeamLabelRegistry":
        return cls(DEFAULT_TEAM_LABELS)

    @classmethod
    def from_file(cls, path: str) -> "TeamLabelRegistry":
        """Load a registry from a JSON array of label names"""
        try:
            data = json.loads(Path(path).read_text(encoding="utf-8"))
        except json.JSONDecodeError as e:
            raise DatasetError(f"registry file {path} is not valid JSON: {e}")
        if not isinstance(data, list):
            raise DatasetError(f"registry file {path} must hold a JSON array")
        return cls(tuple(data))

    def save(self, path: str) -> None:
        Path(path).write_text(json.dumps(list(self.labels), indent=2) + "\n", encoding="utf-8")

    @property
    def size(self) -> int:
        return len(self.labels)

    def __len__(self) -> int:
        return len(self.labels)

    def index(self, name: str) -> int:
        try:
            return self._index[name]
        except KeyError:
            raise DatasetError(f"unknown label {name!r}")

    def name(self, label_id: int) -> str:
        return self.labels[label_id]

    def registry_hash(self) -> str:
        return hashlib.sha256(json.dumps(list(self.labels)).encode("utf-8")).hexdigest()[:16]


@dataclass(frozen=True)
class Defect:
    """One product defect record"""

    id: str
    title: str
    description: str
    labels: FrozenSet[int] = frozenset()
    provenance: Provenance = Provenance.REAL

    def __post_init__(self):
        object.__setattr__(self, "labels", frozenset(int(t) for t in self.labels))
        if not self.id:
            raise DatasetError("defect id must be non-empty")
        if not self.title and not self.description:
            raise DatasetError(f"defect {self.id}: title and description are both empty")

    def validate(self, registry: TeamLabelRegistry) -> None:
        for t in self.labels:
            if not 0 <= t < registry.size:
                raise DatasetError(f"defect {self.id}: label id {t} outside registry")

    def replace(self, **changes: Any) -> "Defect":
        values = dict(id=self.id, title=self.title, description=self.description,
                      labels=self.labels, provenance=self.provenance)
        values.update(changes)
        return Defect(**values)


@dataclass(frozen=True)
class Dataset:
    """An ordered, validated collection of defects"""

    registry: TeamLabelRegistry
    defects: Tuple[Defect, ...]
    split: Split = Split.TRAIN
    lineage: Optional[Dict[str, Any]] = field(default=None, compare=False)

    def __post_init__(self):
        defects = tuple(self.defects)
        object.__setattr__(self, "defects", defects)
        seen = set()
        for defect in defects:
            defect.validate(self.registry)
            if defect.id in seen:
                raise DatasetError(f"duplicate defect id {defect.id!r}")
            seen.add(defect.id)

    def __len__(self) -> int:
        return len(self.defects)

    def __iter__(self) -> Iterator[Defect]:
        return iter(self.defects)

    def __getitem__(self, index: int) -> Defect:
        return self.defects[index]

    def with_defects(self, defects: Iterable[Defect],
                     lineage: Optional[Dict[str, Any]] = None) -> "Dataset":
        """Return a dataset over the same registry and split with other defects"""
        return Dataset(self.registry, tuple(defects), self.split, lineage)

    def label_matrix(self) -> np.ndarray:
        """Binary (N, T) matrix of the defects' label sets"""
        matrix = np.zeros((len(self.defects), self.registry.size), dtype=np.int64)
        for i, defect in enumerate(self.defects):
            for t in defect.labels:
                matrix[i, t] = 1
        return matrix

    def label_counts(self) -> np.ndarray:
        return self.label_matrix().sum(axis=0)


def build_text(defect: Defect) -> str:
    """Join title and description with a single sentence separator"""
    return f"{defect.title}{TEXT_SEPARATOR}{defect.description}"


def _record_to_defect(record: Any, registry: TeamLabelRegistry, line: int) -> Defect:
    if not isinstance(record, dict):
        raise DatasetError("record must be a JSON object", line)
    for key, kind in (("id", str), ("title", str), ("description", str),
                      ("labels", list), ("provenance", str)):
        if key not in record:
            raise DatasetError(f"missing key {key!r}", line)
        if not isinstance(record[key], kind):
            raise DatasetError(f"key {key!r} must be a {kind.__name__}", line)
    label_ids = set()
    for name in record["labels"]:
        if not isinstance(name, str) or name not in registry.labels:
            raise DatasetError(f"unknown label {name!r}", line)
        label_ids.add(registry.index(name))
    try:
        provenance = Provenance(record["provenance"])
    except ValueError:
        raise DatasetError(f"unknown provenance {record['provenance']!r}", line)
    try:
        return Defect(record["id"], record["title"], record["description"],
                      frozenset(label_ids), provenance)
    except DatasetError as e:
        raise DatasetError(str(e), line)


def load_dataset(path: str, registry: TeamLabelRegistry,
                 split: Split = Split.TRAIN) -> Dataset:
    """
    Load a JSONL dataset file.

    Lines starting with '#' are comments; a '# lineage {...}' line carries the
    producing command and config hash.

    Raises:
        DatasetError: malformed record, unknown label or duplicate id (with line number)
    """
    defects: List[Defect] = []
    seen = set()
    lineage = None
    with open(path, "r", encoding="utf-8") as f:
        for line_no, raw in enumerate(f, start=1):
            line = raw.strip()
            if not line:
                continue
            if line.startswith("#"):
                if raw.startswith(LINEAGE_PREFIX):
                    try:
                        lineage = json.loads(raw[len(LINEAGE_PREFIX):])
                    except json.JSONDecodeError as e:
                        raise DatasetError(f"malformed lineage header: {e}", line_no)
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as e:
                raise DatasetError(f"malformed record: {e.msg}", line_no)
            defect = _record_to_defect(record, registry, line_no)
            if defect.id in seen:
                raise DatasetError(f"duplicate defect id {defect.id!r}", line_no)
            seen.add(defect.id)
            defects.append(defect)
    logger.debug(f"Loaded {len(defects)} defects from {path}")
    return Dataset(registry, tuple(defects), split, lineage)


def defect_to_record(defect: Defect, registry: TeamLabelRegistry) -> Dict[str, Any]:
    return {
        "id": defect.id,
        "title": defect.title,
        "description": defect.description,
        "labels": [registry.name(t) for t in sorted(defect.labels)],
        "provenance": defect.provenance.value,
    }


def save_dataset(ds: Dataset, path: str, lineage: Optional[Dict[str, Any]] = None) -> None:
    """Write a dataset as JSONL, preceded by a lineage header when one is known"""
    lineage = lineage if lineage is not None else ds.lineage
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        if lineage is not None:
            f.write(LINEAGE_PREFIX + json.dumps(lineage, sort_keys=True) + "\n")
        for defect in ds.defects:
            f.write(json.dumps(defect_to_record(defect, ds.registry), ensure_ascii=False) + "\n")
    logger.debug(f"Saved {len(ds)} defects to {path}")


@dataclass
class SyntheticCorpusSpec:
    """Recipe for a synthetic defect corpus with planted ground truth"""

    size: int
    keyword_pool: Mapping[int, Sequence[str]]
    labels_per_defect: Tuple[int, int] = (1, 3)
    noise_vocab: Sequence[str] = DEFAULT_NOISE_VOCAB
    sentence_templates: Sequence[str] = DEFAULT_SENTENCE_TEMPLATES
    seed: int = 0
    label_weights: Optional[Sequence[float]] = None   # sampling skew; None means uniform
    split: Split = Split.TRAIN
    id_prefix: str = "d"

    @classmethod
    def default(cls, size: int, seed: int, registry: Optional[TeamLabelRegistry] = None,
                **overrides: Any) -> "SyntheticCorpusSpec":
        """Spec using the bundled keyword pools for a registry of default label names"""
        registry = registry or TeamLabelRegistry.default()
        missing = [name for name in registry.labels if name not in DEFAULT_KEYWORD_POOLS]
        if missing:
            raise DatasetError(f"no bundled keyword pool for labels {missing}")
        pools = {registry.index(name): DEFAULT_KEYWORD_POOLS[name] for name in registry.labels}
        return cls(size=size, keyword_pool=pools, seed=seed, **overrides)

    def validate(self, registry: TeamLabelRegistry) -> None:
        if self.size < 1:
            raise DatasetError("corpus size must be >= 1")
        lo, hi = self.labels_per_defect
        if not 1 <= lo <= hi <= registry.size:
            raise DatasetError(f"labels_per_defect must satisfy 1 <= lo <= hi <= {registry.size}")
        if set(self.keyword_pool) != set(range(registry.size)):
            raise DatasetError("keyword_pool must have an entry for every label id")
        owner: Dict[str, int] = {}
        for t, words in self.keyword_pool.items():
            if len(set(words)) < 5:
                raise DatasetError(f"keyword pool for label {t} needs >= 5 distinct words")
            for word in words:
                if word in owner and owner[word] != t:
                    raise DatasetError(
                        f"keyword {word!r} is in pools of labels {owner[word]} and {t}")
                owner[word] = t
        overlap = sorted(set(self.noise_vocab) & set(owner))
        if overlap:
            raise DatasetError(f"noise vocabulary contains signature words {overlap}")
        if not self.noise_vocab:
            raise DatasetError("noise vocabulary must be non-empty")
        if not self.sentence_templates or any("{kw}" not in t for t in self.sentence_templates):
            raise DatasetError("every sentence template needs a {kw} placeholder")
        if self.label_weights is not None:
            weights = np.asarray(self.label_weights, dtype=np.float64)
            if weights.shape != (registry.size,) or np.any(weights <= 0):
                raise DatasetError("label_weights must hold one positive weight per label")


def _fill(template: str, keyword: str, noise_vocab: Sequence[str],
          rng: np.random.Generator) -> str:
    def substitute(match: "re.Match[str]") -> str:
        if match.group(1) == "kw":
            return keyword
        return noise_vocab[int(rng.integers(len(noise_vocab)))]
    return _PLACEHOLDER.sub(substitute, template)


def generate_synthetic_corpus(spec: SyntheticCorpusSpec,
                              registry: Optional[TeamLabelRegistry] = None) -> Dataset:
    """
    Generate a corpus whose ground truth is the set of labels whose
    signature words were planted in each defect.

    Deterministic for a fixed spec (seed included).
    """
    registry = registry or TeamLabelRegistry.default()
    spec.validate(registry)
    rng = np.random.default_rng(spec.seed)
    lo, hi = spec.labels_per_defect
    pools = {t: tuple(spec.keyword_pool[t]) for t in range(registry.size)}
    templates = tuple(spec.sentence_templates)
    noise = tuple(spec.noise_vocab)
    probs = None
    if spec.label_weights is not None:
        weights = np.asarray(spec.label_weights, dtype=np.float64)
        probs = weights / weights.sum()

    defects = []
    for i in range(spec.size):
        m = int(rng.integers(lo, hi + 1))
        labels = [int(t) for t in rng.choice(registry.size, size=m, replace=False, p=probs)]
        keywords = [pools[t][int(rng.integers(len(pools[t])))] for t in labels]

        title = _fill(templates[int(rng.integers(len(templates)))], keywords[0], noise, rng)
        title = title[:1].upper() + title[1:]
        sentences = []
        for t in labels:
            keyword = pools[t][int(rng.integers(len(pools[t])))]
            sentences.append(_fill(templates[int(rng.integers(len(templates)))], keyword, noise, rng))
        sentences.append(_fill(NOISE_TEMPLATE, "", noise, rng))
        order = rng.permutation(len(sentences))
        description = ". ".join(sentences[j] for j in order) + "."

        defects.append(Defect(
            id=f"{spec.id_prefix}{i:06d}",
            title=title,
            description=description,
            labels=frozenset(labels),
            provenance=Provenance.SYNTHETIC,
        ))

    ds = Dataset(registry, tuple(defects), spec.split)
    logger.info(f"Generated {len(ds)} synthetic defects (seed={spec.seed})")
    return ds
