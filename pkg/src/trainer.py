"""
Mini-batch training with per-epoch dev scoring and best-epoch selection.
"""
import logging
from dataclasses import asdict, dataclass, field
from typing import Any, Dict, List, Optional, Sequence

import numpy as np
from tqdm import tqdm

from . import numerics as nx
from .checkpoint import Checkpoint
from .config import HeadKind, TrainingConfig, Variant
from .corpus import Dataset, TeamLabelRegistry
from .evaluation import accuracy, confusion, macro_f1
from .model import (DEFAULT_THRESHOLD, DefectClassifier, EncoderConfig, HeadConfig,
                    bce_with_logits, predict, trim_padding)
from .tokenizer import EncodedDataset, Vocab, VocabMismatchError, build_vocab, encode_dataset

logger = logging.getLogger(__name__)


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    dev_accuracy: float
    dev_macro_f1: float


@dataclass
class TrainingResult:
    """Best-epoch checkpoint and the full per-epoch history"""

    checkpoint: Checkpoint
    history: List[EpochRecord] = field(default_factory=list)
    best_epoch: int = 0


def select_best_epoch(dev_accuracies: Sequence[float]) -> int:
    """1-based epoch with the highest dev accuracy; the earliest wins ties"""
    if not dev_accuracies:
        raise ValueError("no epochs to select from")
    return int(np.argmax(np.asarray(dev_accuracies))) + 1


class Trainer:
    """
    Worker that fits one (variant, head) cell.

    The root seed is split into independent streams for parameter init,
    batch shuffling and dropout, so two runs with the same seed produce the
    same history and checkpoint.
    """

    def __init__(self, hparams: TrainingConfig, variant: Variant, head_kind: HeadKind,
                 seed: int = 0, threshold: float = DEFAULT_THRESHOLD, show_progress: bool = False):
        hparams.validate()
        self.hparams = hparams
        self.variant = variant
        self.head_kind = head_kind
        self.seed = seed
        self.threshold = threshold
        self.show_progress = show_progress

        # Statistics
        self.epochs_run = 0
        self.batches_run = 0
        self.samples_seen = 0

    def _check(self, train: EncodedDataset, dev: EncodedDataset, vocab: Vocab) -> None:
        if len(train) == 0:
            raise ValueError("training set is empty")
        if len(dev) == 0:
            raise ValueError("dev set is empty")
        expected = vocab.vocab_hash()
        for name, data in (("train", train), ("dev", dev)):
            if data.vocab_hash != expected:
                raise VocabMismatchError(f"{name} data encoded with vocab {data.vocab_hash}, "
                                         f"model vocab is {expected}")
            if data.variant is not self.variant:
                raise ValueError(f"{name} data encoded as {data.variant.value}, "
                                 f"trainer expects {self.variant.value}")

    def _score(self, model: DefectClassifier, dev: EncodedDataset) -> Dict[str, float]:
        chunks = []
        step = max(1, self.hparams.batch_size * 4)
        for start in range(0, len(dev), step):
            part = slice(start, start + step)
            chunks.append(model.logits(*trim_padding(dev.token_ids[part], dev.segment_ids[part],
                                                     dev.attention_mask[part])))
        c = confusion(predict(np.concatenate(chunks), self.threshold), dev.targets)
        return {"accuracy": accuracy(c), "macro_f1": macro_f1(c)}

    def fit(self, train: EncodedDataset, dev: EncodedDataset, vocab: Vocab,
            registry: TeamLabelRegistry) -> TrainingResult:
        self._check(train, dev, vocab)
        hp = self.hparams
        init_seq, shuffle_seq, dropout_seq = np.random.SeedSequence(self.seed).spawn(3)
        shuffle_rng = np.random.default_rng(shuffle_seq)
        dropout_rng = np.random.default_rng(dropout_seq)
        encoder_cfg = EncoderConfig.from_training(len(vocab), hp)
        head_cfg = HeadConfig(self.head_kind, registry.size, hp.hidden_size, hp.resolved_lstm_hidden)
        pos_weight = None if hp.pos_weight is None else np.asarray(hp.pos_weight)
        if pos_weight is not None and pos_weight.size not in (1, registry.size):
            raise ValueError(f"pos_weight needs 1 or {registry.size} values, got {pos_weight.size}")

        history: List[EpochRecord] = []
        best_state: Optional[Dict[str, np.ndarray]] = None
        best_accuracy = -1.0
        n = len(train)
        with nx.precision(hp.precision_mode):
            model = DefectClassifier(encoder_cfg, head_cfg,
                                     seed=int(init_seq.generate_state(1)[0]))
            optimizer = nx.AdamOptimizer(model.params, lr=hp.learning_rate, eps=hp.adam_epsilon,
                                         weight_decay=hp.weight_decay, beta1=hp.adam_beta1,
                                         beta2=hp.adam_beta2)
            for epoch in range(1, hp.epochs + 1):
                order = shuffle_rng.permutation(n)
                total_loss = 0.0
                starts = range(0, n, hp.batch_size)
                bar = tqdm(starts, desc=f"{self.variant.value}/{self.head_kind.value} epoch {epoch}",
                           unit="batch", disable=not self.show_progress, leave=False)
                for start in bar:
                    batch = train.take(order[start:start + hp.batch_size])
                    ids, segments, mask = trim_padding(batch.token_ids, batch.segment_ids,
                                                       batch.attention_mask)
                    optimizer.zero_grad()
                    logits = model.forward(ids, segments, mask, training=True, rng=dropout_rng)
                    loss = bce_with_logits(logits, batch.targets, pos_weight)
                    loss.backward()
                    optimizer.step()
                    total_loss += loss.item() * len(batch)
                    self.batches_run += 1
                    bar.set_postfix(loss=f"{loss.item():.4f}")
                self.samples_seen += n
                self.epochs_run += 1

                scores = self._score(model, dev)
                record = EpochRecord(epoch, total_loss / n, scores["accuracy"], scores["macro_f1"])
                history.append(record)
                logger.info(f"Epoch {epoch}/{hp.epochs}: loss={record.train_loss:.4f} "
                            f"dev_accuracy={record.dev_accuracy:.4f} "
                            f"dev_macro_f1={record.dev_macro_f1:.4f}")
                if record.dev_accuracy > best_accuracy:
                    best_accuracy = record.dev_accuracy
                    best_state = model.state_dict()

        best_epoch = select_best_epoch([r.dev_accuracy for r in history])
        metadata: Dict[str, Any] = {
            "seed": self.seed,
            "best_epoch": best_epoch,
            "history": [asdict(r) for r in history],
            "hparams": hp.to_dict(),
            "threshold": self.threshold,
        }
        ckpt = Checkpoint(best_state, encoder_cfg, head_cfg, self.variant, vocab, registry,
                          hp.precision_mode, metadata)
        logger.info(f"Best epoch {best_epoch} with dev accuracy {best_accuracy:.4f}")
        return TrainingResult(ckpt, history, best_epoch)

    def get_statistics(self) -> dict:
        return {
            "epochs_run": self.epochs_run,
            "batches_run": self.batches_run,
            "samples_seen": self.samples_seen,
        }


def train(train_ds: Dataset, dev_ds: Dataset, variant: Variant, head_kind: HeadKind,
          hparams: TrainingConfig, seed: int = 0, vocab: Optional[Vocab] = None,
          threshold: float = DEFAULT_THRESHOLD) -> TrainingResult:
    """Encode both datasets under one vocabulary and fit a model"""
    if len(train_ds) == 0:
        raise ValueError("training set is empty")
    if train_ds.registry != dev_ds.registry:
        raise ValueError("train and dev use different label registries")
    vocab = vocab or build_vocab(train_ds, include_label_names=True)
    train_enc = encode_dataset(train_ds, vocab, variant, hparams.max_seq_length)
    dev_enc = encode_dataset(dev_ds, vocab, variant, hparams.max_seq_length)
    return Trainer(hparams, variant, head_kind, seed, threshold).fit(train_enc, dev_enc, vocab,
                                                                     train_ds.registry)
