"""
Configuration management for the defect-triage pipeline.
"""
import hashlib
import json
import os
from dataclasses import asdict, dataclass, field, fields
from enum import Enum
from pathlib import Path
from typing import Any, Dict, List, Optional

import numpy as np


class Variant(Enum):
    """Encoder input construction variants"""
    BASELINE = "baseline"
    FUSE_NOSEP = "fuse_nosep"
    FUSE_SEP = "fuse_sep"


class HeadKind(Enum):
    """Classification heads"""
    LINEAR = "linear"
    BILSTM = "bilstm"


class Precision(Enum):
    """Float precision modes for the tensor engine"""
    FLOAT32 = "float32"
    FLOAT64 = "float64"

    @property
    def dtype(self) -> np.dtype:
        return np.dtype(self.value)


class Stage(Enum):
    """Data generation stages, in the order the pipeline runs them"""
    WEAK = "weak"
    AUGMENT = "augment"
    BALANCE = "balance"


STAGE_ORDER = (Stage.WEAK, Stage.AUGMENT, Stage.BALANCE)


def derive_seed(root: int, *keys: str) -> int:
    """
    Derive an independent 64-bit sub-seed from a root seed and string keys.

    The same (root, keys) always yields the same value, and distinct keys
    give statistically independent streams.
    """
    key_ints = [int.from_bytes(hashlib.sha256(k.encode("utf-8")).digest()[:4], "little")
                for k in keys]
    state = np.random.SeedSequence([int(root) & 0xFFFFFFFFFFFFFFFF, *key_ints])
    return int(state.generate_state(1, dtype=np.uint64)[0])


@dataclass
class AugmentConfig:
    """Adversarial augmentation settings"""

    sample_fraction: float = 0.30   # share of defects chosen for augmentation
    copies_per_defect: int = 2
    perturb_rate: float = 0.10      # share of words altered per copy
    min_cosine: float = 0.8
    neighbor_k: int = 10
    seed: int = 0

    def validate(self) -> None:
        """Validate configuration"""
        if not 0.0 < self.sample_fraction <= 1.0:
            raise ValueError("sample_fraction must be in (0, 1]")
        if not 0.0 < self.perturb_rate <= 1.0:
            raise ValueError("perturb_rate must be in (0, 1]")
        if not -1.0 <= self.min_cosine <= 1.0:
            raise ValueError("min_cosine must be in [-1, 1]")
        if self.copies_per_defect < 1:
            raise ValueError("copies_per_defect must be >= 1")
        if self.neighbor_k < 1:
            raise ValueError("neighbor_k must be >= 1")


@dataclass
class TrainingConfig:
    """
    Model hyper-parameters.

    The defaults of the first block are the published fine-tuning values;
    use ``TrainingConfig.desk()`` for the from-scratch desk-scale preset.
    """

    dropout: float = 0.1
    max_seq_length: int = 512
    batch_size: int = 16
    learning_rate: float = 1e-5
    weight_decay: float = 0.01
    adam_epsilon: float = 1e-6
    epochs: int = 10

    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    precision: str = Precision.FLOAT32.value

    # Encoder / head dimensions
    hidden_size: int = 64
    num_layers: int = 2
    num_heads: int = 4
    lstm_hidden: Optional[int] = None   # per direction; None means hidden_size // 2

    # Positive-class weight per label; None means 1.0 everywhere
    pos_weight: Optional[List[float]] = None

    @classmethod
    def desk(cls, **overrides: Any) -> "TrainingConfig":
        """Desk-scale preset for training the encoder from scratch on CPU"""
        values = dict(max_seq_length=128, learning_rate=1e-3)
        values.update(overrides)
        return cls(**values)

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "TrainingConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"Unknown training config keys: {sorted(unknown)}")
        return cls(**data)

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    @property
    def precision_mode(self) -> Precision:
        return Precision(self.precision)

    @property
    def resolved_lstm_hidden(self) -> int:
        return self.lstm_hidden if self.lstm_hidden is not None else self.hidden_size // 2

    def validate(self) -> None:
        """Validate configuration"""
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must be in [0, 1)")
        if self.max_seq_length < 4:
            raise ValueError("max_seq_length must be >= 4")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be > 0")
        if self.weight_decay < 0:
            raise ValueError("weight_decay must be >= 0")
        if self.adam_epsilon <= 0:
            raise ValueError("adam_epsilon must be > 0")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if not (0.0 <= self.adam_beta1 < 1.0 and 0.0 <= self.adam_beta2 < 1.0):
            raise ValueError("adam betas must be in [0, 1)")
        try:
            Precision(self.precision)
        except ValueError:
            raise ValueError(f"precision must be one of {[p.value for p in Precision]}")
        if self.hidden_size < 1 or self.num_layers < 1 or self.num_heads < 1:
            raise ValueError("hidden_size, num_layers and num_heads must be >= 1")
        if self.hidden_size % self.num_heads != 0:
            raise ValueError("hidden_size must be divisible by num_heads")
        if self.resolved_lstm_hidden < 1:
            raise ValueError("lstm_hidden must be >= 1")
        if self.pos_weight is not None and any(p <= 0 for p in self.pos_weight):
            raise ValueError("pos_weight entries must be > 0")


@dataclass
class PipelineConfig:
    """Configuration for data generation and the experiment matrix"""

    # Paths
    registry_path: str = "data/registry.json"
    lf_path: str = "data/lfs.json"
    embedding_path: str = "data/embeddings.txt"
    data_dir: str = "data"
    train_input: str = "train.jsonl"
    dev_input: str = "dev.jsonl"
    test_input: str = "test.jsonl"

    # Stage toggles
    weak: bool = True
    augment: bool = True
    balance: bool = True

    # Stage settings
    augmentation: AugmentConfig = field(default_factory=AugmentConfig)
    mlsmote_k: int = 5
    vote_threshold: float = 0.25   # a 3-label defect scores 1/3 per agreeing LF

    # Model settings
    training: TrainingConfig = field(default_factory=TrainingConfig.desk)
    variant: str = Variant.FUSE_SEP.value
    head: str = HeadKind.LINEAR.value
    seed: int = 7
    threshold: float = 0.55

    # Logging
    log_level: str = "INFO"

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "PipelineConfig":
        data = dict(data)
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"Unknown config keys: {sorted(unknown)}")
        if "augmentation" in data:
            data["augmentation"] = AugmentConfig(**data["augmentation"])
        if "training" in data:
            data["training"] = TrainingConfig.from_dict(data["training"])
        return cls(**data)

    @classmethod
    def from_file(cls, path: str) -> "PipelineConfig":
        """Load configuration from a JSON document"""
        try:
            data = json.loads(Path(path).read_text(encoding="utf-8"))
        except json.JSONDecodeError as e:
            raise ValueError(f"Config file {path} is not valid JSON: {e}")
        if not isinstance(data, dict):
            raise ValueError(f"Config file {path} must hold a JSON object")
        return cls.from_dict(data)

    def apply_env(self) -> "PipelineConfig":
        """Apply environment variable overrides in place"""
        self.data_dir = os.getenv("DEFTRI_DATA_DIR", self.data_dir)
        self.log_level = os.getenv("DEFTRI_LOG_LEVEL", self.log_level)
        if os.getenv("DEFTRI_SEED"):
            self.seed = int(os.environ["DEFTRI_SEED"])
        return self

    @classmethod
    def from_env(cls, path: Optional[str] = None) -> "PipelineConfig":
        """Load configuration from an optional file, then environment overrides"""
        config = cls.from_file(path) if path else cls()
        return config.apply_env()

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    def config_hash(self) -> str:
        """Hash of every setting that influences produced artifacts"""
        payload = self.to_dict()
        payload.pop("data_dir")
        payload.pop("log_level")
        encoded = json.dumps(payload, sort_keys=True).encode("utf-8")
        return hashlib.sha256(encoded).hexdigest()[:16]

    def stage_seed(self, stage: Stage) -> int:
        return derive_seed(self.seed, "stage", stage.value)

    def data_path(self, name: str) -> Path:
        return Path(self.data_dir) / name

    @property
    def enabled_stages(self) -> List[Stage]:
        toggles = {Stage.WEAK: self.weak, Stage.AUGMENT: self.augment, Stage.BALANCE: self.balance}
        return [stage for stage in STAGE_ORDER if toggles[stage]]

    def validate(self, check_files: bool = True) -> None:
        """Validate configuration"""
        self.augmentation.validate()
        self.training.validate()
        try:
            Variant(self.variant)
        except ValueError:
            raise ValueError(f"variant must be one of {[v.value for v in Variant]}")
        try:
            HeadKind(self.head)
        except ValueError:
            raise ValueError(f"head must be one of {[h.value for h in HeadKind]}")
        if self.mlsmote_k < 1:
            raise ValueError("mlsmote_k must be >= 1")
        if not 0.0 < self.vote_threshold <= 1.0:
            raise ValueError("vote_threshold must be in (0, 1]")
        if not 0.0 < self.threshold < 1.0:
            raise ValueError("threshold must be in (0, 1)")

        if not check_files:
            return
        required = [("registry_path", self.registry_path),
                    ("train_input", str(self.data_path(self.train_input)))]
        if self.weak:
            required.append(("lf_path", self.lf_path))
            required.append(("dev_input", str(self.data_path(self.dev_input))))
        if self.augment:
            required.append(("embedding_path", self.embedding_path))
        for key, path in required:
            if not Path(path).exists():
                raise ValueError(f"{key} does not exist: {path}")
