"""
Checkpoint file format.

Layout:
    8 bytes   magic b"TRIAGE01"
    8 bytes   little-endian unsigned header length
    header    UTF-8 JSON: tensor names and shapes, precision, encoder and head
              configs, variant, vocabulary (tokens and hash), registry labels,
              training metadata and the payload sha256
    payload   little-endian raw floats of every tensor, in header order
"""
import hashlib
import json
import logging
import os
import struct
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Optional

import numpy as np

from . import numerics as nx
from .config import Precision, Variant
from .corpus import TeamLabelRegistry
from .model import DefectClassifier, EncoderConfig, HeadConfig, trim_padding
from .tokenizer import EncodedDataset, Vocab, VocabMismatchError

logger = logging.getLogger(__name__)

MAGIC = b"TRIAGE01"
FORMAT_VERSION = 1
INFERENCE_BATCH = 64


class CheckpointError(ValueError):
    """Raised for unreadable, corrupt or mismatched checkpoints"""


@dataclass
class Checkpoint:
    """Trained parameters plus everything needed to rebuild the model"""

    params: Dict[str, np.ndarray]
    encoder: EncoderConfig
    head: HeadConfig
    variant: Variant
    vocab: Vocab
    registry: TeamLabelRegistry
    precision: Precision = Precision.FLOAT32
    metadata: Dict[str, Any] = field(default_factory=dict)

    @property
    def vocab_hash(self) -> str:
        return self.vocab.vocab_hash()

    def model(self) -> DefectClassifier:
        with nx.precision(self.precision):
            return DefectClassifier(self.encoder, self.head, self.params)

    def check_encoded(self, data: EncodedDataset) -> None:
        if data.vocab_hash != self.vocab_hash:
            raise VocabMismatchError(f"data encoded with vocab {data.vocab_hash}, "
                                     f"checkpoint expects {self.vocab_hash}")
        if data.variant is not self.variant:
            raise ValueError(f"data encoded as {data.variant.value}, "
                             f"checkpoint expects {self.variant.value}")

    def logits(self, data: EncodedDataset, model: Optional[DefectClassifier] = None) -> np.ndarray:
        """Eval-mode logits for every row, in the checkpoint's precision"""
        self.check_encoded(data)
        model = model or self.model()
        out = []
        with nx.precision(self.precision):
            for start in range(0, len(data), INFERENCE_BATCH):
                chunk = slice(start, start + INFERENCE_BATCH)
                out.append(model.logits(*trim_padding(data.token_ids[chunk], data.segment_ids[chunk],
                                                      data.attention_mask[chunk])))
        if not out:
            return np.zeros((0, self.head.num_labels))
        return np.concatenate(out)


def _header(ckpt: Checkpoint, payload_sha: str) -> Dict[str, Any]:
    return {
        "format_version": FORMAT_VERSION,
        "tensors": [{"name": name, "shape": list(arr.shape)} for name, arr in ckpt.params.items()],
        "precision": ckpt.precision.value,
        "encoder": ckpt.encoder.to_dict(),
        "head": ckpt.head.to_dict(),
        "variant": ckpt.variant.value,
        "vocab_hash": ckpt.vocab_hash,
        "vocab": list(ckpt.vocab.tokens),
        "labels": list(ckpt.registry.labels),
        "metadata": ckpt.metadata,
        "payload_sha256": payload_sha,
    }


def save_checkpoint(ckpt: Checkpoint, path: str) -> None:
    """Write a checkpoint atomically (temp file then rename)"""
    dtype = np.dtype(ckpt.precision.value).newbyteorder("<")
    payload = b"".join(np.ascontiguousarray(arr, dtype=dtype).tobytes()
                       for arr in ckpt.params.values())
    header = json.dumps(_header(ckpt, hashlib.sha256(payload).hexdigest()),
                        sort_keys=True).encode("utf-8")
    target = Path(path)
    target.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=target.parent, prefix=target.name, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(MAGIC)
            fh.write(struct.pack("<Q", len(header)))
            fh.write(header)
            fh.write(payload)
        os.replace(tmp, target)
    except BaseException:
        Path(tmp).unlink(missing_ok=True)
        raise
    logger.info(f"Saved checkpoint {path} ({len(ckpt.params)} tensors, {len(payload)} bytes)")


def load_checkpoint(path: str, expected_vocab: Optional[Vocab] = None) -> Checkpoint:
    """
    Read a checkpoint written by save_checkpoint.

    Raises:
        CheckpointError: bad magic, truncated file, payload hash mismatch,
            malformed header, or a vocabulary differing from expected_vocab
    """
    try:
        raw = Path(path).read_bytes()
    except OSError as e:
        raise CheckpointError(f"cannot read checkpoint {path}: {e}")
    if len(raw) < 16 or raw[:8] != MAGIC:
        raise CheckpointError(f"{path} is not a checkpoint file")
    (header_len,) = struct.unpack("<Q", raw[8:16])
    if 16 + header_len > len(raw):
        raise CheckpointError(f"{path} is truncated (header)")
    try:
        header = json.loads(raw[16:16 + header_len].decode("utf-8"))
        precision = Precision(header["precision"])
        encoder = EncoderConfig(**header["encoder"])
        head = HeadConfig.from_dict(header["head"])
        variant = Variant(header["variant"])
        vocab = Vocab(tuple(header["vocab"]))
        registry = TeamLabelRegistry(tuple(header["labels"]))
        tensors = header["tensors"]
    except (KeyError, TypeError, ValueError) as e:
        raise CheckpointError(f"{path}: malformed header: {e}")

    payload = raw[16 + header_len:]
    if hashlib.sha256(payload).hexdigest() != header.get("payload_sha256"):
        raise CheckpointError(f"{path} is corrupt or truncated (payload hash mismatch)")
    if vocab.vocab_hash() != header.get("vocab_hash"):
        raise CheckpointError(f"{path}: stored vocabulary does not match its hash")
    if expected_vocab is not None and expected_vocab.vocab_hash() != vocab.vocab_hash():
        raise CheckpointError(f"{path}: vocab hash mismatch (checkpoint {vocab.vocab_hash()}, "
                              f"expected {expected_vocab.vocab_hash()})")

    dtype = np.dtype(precision.value).newbyteorder("<")
    params: Dict[str, np.ndarray] = {}
    offset = 0
    for spec in tensors:
        count = int(np.prod(spec["shape"], dtype=np.int64))
        size = count * dtype.itemsize
        if offset + size > len(payload):
            raise CheckpointError(f"{path}: payload shorter than its tensor table")
        flat = np.frombuffer(payload, dtype=dtype, count=count, offset=offset)
        params[spec["name"]] = flat.reshape(spec["shape"]).astype(precision.dtype)
        offset += size
    if offset != len(payload):
        raise CheckpointError(f"{path}: {len(payload) - offset} unexpected trailing payload bytes")
    return Checkpoint(params, encoder, head, variant, vocab, registry, precision,
                      header.get("metadata", {}))
