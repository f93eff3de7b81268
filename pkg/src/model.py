"""
Transformer encoder, classification heads and multi-label loss.

The encoder sums token, position and segment embeddings and runs a stack of
post-norm transformer blocks. Two heads turn the last hidden layer into one
logit per team label: a dense tanh layer over the [CLS] vector, or a
bidirectional LSTM over the whole (pad-masked) sequence.
"""
import logging
import math
from dataclasses import asdict, dataclass
from typing import Any, Dict, List, Optional, Tuple

import numpy as np

from . import numerics as nx
from .config import HeadKind, TrainingConfig
from .numerics import ShapeError, Tensor
from .tokenizer import EncodedInput

logger = logging.getLogger(__name__)

MASK_BIAS = -1e9
INIT_STD = 0.02
DEFAULT_THRESHOLD = 0.55


@dataclass(frozen=True)
class EncoderConfig:
    """Encoder dimensions"""

    vocab_size: int
    hidden: int = 64
    layers: int = 2
    heads: int = 4
    ffn_dim: Optional[int] = None   # None means 4 * hidden
    max_positions: int = 128
    segment_types: int = 2
    dropout: float = 0.1

    @property
    def ffn(self) -> int:
        return self.ffn_dim if self.ffn_dim is not None else 4 * self.hidden

    @property
    def head_dim(self) -> int:
        return self.hidden // self.heads

    def validate(self) -> None:
        if self.vocab_size < 5:
            raise ValueError("vocab_size must cover the reserved tokens and at least one word")
        if self.hidden % self.heads != 0:
            raise ValueError("hidden must be divisible by heads")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must be in [0, 1)")
        if self.layers < 1 or self.max_positions < 2 or self.segment_types != 2:
            raise ValueError("encoder needs >= 1 layer, >= 2 positions and 2 segment types")

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_training(cls, vocab_size: int, hparams: TrainingConfig) -> "EncoderConfig":
        return cls(vocab_size=vocab_size, hidden=hparams.hidden_size, layers=hparams.num_layers,
                   heads=hparams.num_heads, max_positions=hparams.max_seq_length,
                   dropout=hparams.dropout)


@dataclass(frozen=True)
class HeadConfig:
    """
    Classification head shape.

    linear: dense hidden -> hidden with tanh, then hidden -> num_labels
    bilstm: lstm_hidden units per direction, relu over the concatenated
            final states, then 2 * lstm_hidden -> num_labels
    """

    kind: HeadKind
    num_labels: int
    hidden: int
    lstm_hidden: int

    def validate(self) -> None:
        if self.num_labels < 2:
            raise ValueError("num_labels must be >= 2")
        if self.lstm_hidden < 1:
            raise ValueError("lstm_hidden must be >= 1")

    def to_dict(self) -> Dict[str, Any]:
        values = asdict(self)
        values["kind"] = self.kind.value
        return values

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "HeadConfig":
        return cls(HeadKind(data["kind"]), data["num_labels"], data["hidden"], data["lstm_hidden"])


def init_params(enc: EncoderConfig, head: HeadConfig, seed: int) -> Dict[str, Tensor]:
    """Truncation-free normal(0, 0.02) weights, zero biases, unit layer-norm gains"""
    enc.validate()
    head.validate()
    rng = np.random.default_rng(seed)
    shapes: Dict[str, tuple] = {
        "embeddings.token": (enc.vocab_size, enc.hidden),
        "embeddings.position": (enc.max_positions, enc.hidden),
        "embeddings.segment": (enc.segment_types, enc.hidden),
        "embeddings.ln.gamma": (enc.hidden,),
        "embeddings.ln.beta": (enc.hidden,),
    }
    for i in range(enc.layers):
        p = f"layers.{i}"
        for name in ("query", "key", "value", "output"):
            shapes[f"{p}.attn.{name}.weight"] = (enc.hidden, enc.hidden)
            shapes[f"{p}.attn.{name}.bias"] = (enc.hidden,)
        shapes[f"{p}.attn.ln.gamma"] = (enc.hidden,)
        shapes[f"{p}.attn.ln.beta"] = (enc.hidden,)
        shapes[f"{p}.ffn.in.weight"] = (enc.hidden, enc.ffn)
        shapes[f"{p}.ffn.in.bias"] = (enc.ffn,)
        shapes[f"{p}.ffn.out.weight"] = (enc.ffn, enc.hidden)
        shapes[f"{p}.ffn.out.bias"] = (enc.hidden,)
        shapes[f"{p}.ffn.ln.gamma"] = (enc.hidden,)
        shapes[f"{p}.ffn.ln.beta"] = (enc.hidden,)
    if head.kind is HeadKind.LINEAR:
        shapes["head.dense.weight"] = (head.hidden, head.hidden)
        shapes["head.dense.bias"] = (head.hidden,)
        shapes["head.out.weight"] = (head.hidden, head.num_labels)
        shapes["head.out.bias"] = (head.num_labels,)
    else:
        gates = 4 * head.lstm_hidden
        for direction in ("fwd", "bwd"):
            shapes[f"head.lstm.{direction}.input"] = (head.hidden, gates)
            shapes[f"head.lstm.{direction}.recurrent"] = (head.lstm_hidden, gates)
            shapes[f"head.lstm.{direction}.bias"] = (gates,)
        shapes["head.out.weight"] = (2 * head.lstm_hidden, head.num_labels)
        shapes["head.out.bias"] = (head.num_labels,)

    params = {}
    for name, shape in shapes.items():
        if name.endswith(".gamma"):
            value = np.ones(shape)
        elif name.endswith(".bias") or name.endswith(".beta"):
            value = np.zeros(shape)
        else:
            value = rng.normal(0.0, INIT_STD, size=shape)
        params[name] = Tensor(value, requires_grad=True)
    return params


def _linear(x: Tensor, params: Dict[str, Tensor], prefix: str) -> Tensor:
    return x @ params[f"{prefix}.weight"] + params[f"{prefix}.bias"]


def encode(params: Dict[str, Tensor], cfg: EncoderConfig, token_ids: np.ndarray,
           segment_ids: np.ndarray, attention_mask: np.ndarray, training: bool = False,
           rng: Optional[np.random.Generator] = None,
           attention_sink: Optional[List[np.ndarray]] = None) -> Tensor:
    """
    Run the encoder over a batch of (B, L) inputs and return (B, L, H) states.

    Pad positions get an additive -1e9 attention bias, so their softmax weight
    from every query is exactly zero.
    """
    token_ids = np.asarray(token_ids)
    if token_ids.ndim != 2:
        raise ShapeError(f"encode expects (batch, length) ids, got shape {token_ids.shape}")
    batch, length = token_ids.shape
    if length > cfg.max_positions:
        raise ShapeError(f"input length {length} exceeds max_positions {cfg.max_positions}")
    if token_ids.size and token_ids.max() >= cfg.vocab_size:
        raise ValueError(f"token id {int(token_ids.max())} out of range for vocab_size {cfg.vocab_size}")
    drop = cfg.dropout

    x = (nx.embedding_lookup(params["embeddings.token"], token_ids)
         + nx.embedding_lookup(params["embeddings.position"], np.arange(length))
         + nx.embedding_lookup(params["embeddings.segment"], np.asarray(segment_ids)))
    x = nx.layer_norm(x, params["embeddings.ln.gamma"], params["embeddings.ln.beta"])
    x = nx.dropout(x, drop, rng, training)

    mask = np.asarray(attention_mask)
    bias = Tensor(((1 - mask) * MASK_BIAS)[:, None, None, :])
    heads, dh = cfg.heads, cfg.head_dim
    scale = 1.0 / math.sqrt(dh)

    for i in range(cfg.layers):
        p = f"layers.{i}"

        def split_heads(t: Tensor) -> Tensor:
            return t.reshape(batch, length, heads, dh).transpose(0, 2, 1, 3)

        q = split_heads(_linear(x, params, f"{p}.attn.query"))
        k = split_heads(_linear(x, params, f"{p}.attn.key"))
        v = split_heads(_linear(x, params, f"{p}.attn.value"))
        scores = (q @ k.transpose(0, 1, 3, 2)) * scale + bias
        probs = nx.softmax(scores, axis=-1)
        if attention_sink is not None:
            attention_sink.append(probs.data.copy())
        probs = nx.dropout(probs, drop, rng, training)
        context = (probs @ v).transpose(0, 2, 1, 3).reshape(batch, length, cfg.hidden)
        attn_out = nx.dropout(_linear(context, params, f"{p}.attn.output"), drop, rng, training)
        x = nx.layer_norm(x + attn_out, params[f"{p}.attn.ln.gamma"], params[f"{p}.attn.ln.beta"])

        ff = nx.gelu(_linear(x, params, f"{p}.ffn.in"))
        ff = nx.dropout(_linear(ff, params, f"{p}.ffn.out"), drop, rng, training)
        x = nx.layer_norm(x + ff, params[f"{p}.ffn.ln.gamma"], params[f"{p}.ffn.ln.beta"])
    return x


def trim_padding(token_ids: np.ndarray, segment_ids: np.ndarray,
                 attention_mask: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Drop trailing columns that are padding in every row of a batch"""
    real = np.flatnonzero(np.asarray(attention_mask).any(axis=0))
    span = int(real[-1]) + 1 if real.size else 1
    return token_ids[:, :span], segment_ids[:, :span], attention_mask[:, :span]


def pool_cls(hidden: Tensor) -> Tensor:
    """The [CLS] (position 0) vector of the last layer"""
    if hidden.ndim == 2:
        return hidden[0]
    return hidden[:, 0, :]


def _lstm_direction(params: Dict[str, Tensor], prefix: str, inputs: Tensor,
                    mask: np.ndarray, units: int, reverse: bool) -> Tensor:
    batch, length, _ = inputs.shape
    projected = inputs @ params[f"{prefix}.input"] + params[f"{prefix}.bias"]
    recurrent = params[f"{prefix}.recurrent"]
    dtype = nx.default_dtype()
    h = Tensor(np.zeros((batch, units)))
    c = Tensor(np.zeros((batch, units)))
    steps = range(length - 1, -1, -1) if reverse else range(length)
    for t in steps:
        z = projected[:, t, :] + h @ recurrent
        i_gate = nx.sigmoid(z[:, :units])
        f_gate = nx.sigmoid(z[:, units:2 * units])
        g_gate = nx.tanh(z[:, 2 * units:3 * units])
        o_gate = nx.sigmoid(z[:, 3 * units:])
        c_new = f_gate * c + i_gate * g_gate
        h_new = o_gate * nx.tanh(c_new)
        keep = mask[:, t:t + 1].astype(dtype)
        h = h_new * keep + h * (1.0 - keep)
        c = c_new * keep + c * (1.0 - keep)
    return h


def head_forward(params: Dict[str, Tensor], head: HeadConfig, hidden: Tensor, pooled: Tensor,
                 attention_mask: np.ndarray, dropout_rate: float = 0.0, training: bool = False,
                 rng: Optional[np.random.Generator] = None) -> Tensor:
    """
    Map encoder output to (B, T) logits.

    The linear head reads the pooled [CLS] vector. The BiLSTM head reads the
    sequence up to the longest real input in the batch; pad steps leave the
    recurrent state untouched. It concatenates the forward state after the last
    real token with the backward state at position 0.
    """
    if head.kind is HeadKind.LINEAR:
        dense = nx.tanh(_linear(pooled, params, "head.dense"))
        dense = nx.dropout(dense, dropout_rate, rng, training)
        return _linear(dense, params, "head.out")

    mask = np.asarray(attention_mask)
    real_columns = np.flatnonzero(mask.any(axis=0))
    span = int(real_columns[-1]) + 1 if real_columns.size else 1
    sequence = hidden[:, :span, :]
    mask = mask[:, :span]
    forward = _lstm_direction(params, "head.lstm.fwd", sequence, mask, head.lstm_hidden, False)
    backward = _lstm_direction(params, "head.lstm.bwd", sequence, mask, head.lstm_hidden, True)
    summary = nx.relu(nx.concat([forward, backward], axis=-1))
    summary = nx.dropout(summary, dropout_rate, rng, training)
    return _linear(summary, params, "head.out")


def bce_with_logits(logits: Tensor, targets: np.ndarray, pos_weight: Optional[np.ndarray] = None,
                    sample_weight: Optional[np.ndarray] = None) -> Tensor:
    """
    Weighted multi-label binary cross entropy on logits, averaged over batch and labels.

    Raises:
        ValueError: targets outside {0, 1} or non-positive pos_weight
    """
    targets = np.asarray(targets)
    if targets.shape != logits.shape:
        raise ShapeError(f"targets shape {targets.shape} does not match logits {logits.shape}")
    if not np.all((targets == 0) | (targets == 1)):
        raise ValueError("targets must be 0 or 1")
    if pos_weight is not None and np.any(np.asarray(pos_weight) <= 0):
        raise ValueError("pos_weight must be > 0")
    return nx.binary_cross_entropy_with_logits(logits, targets, pos_weight, sample_weight)


def sigmoid_array(logits: np.ndarray) -> np.ndarray:
    return nx._stable_sigmoid(np.asarray(logits, dtype=np.float64))


def predict(logits, threshold: float = DEFAULT_THRESHOLD) -> np.ndarray:
    """Binary label vector: bit t is set iff sigmoid(logit_t) >= threshold"""
    if not 0.0 < threshold < 1.0:
        raise ValueError("threshold must be in (0, 1)")
    values = logits.data if isinstance(logits, Tensor) else logits
    return (sigmoid_array(values) >= threshold).astype(np.int64)


class DefectClassifier:
    """Encoder plus head with its named parameters"""

    def __init__(self, encoder_config: EncoderConfig, head_config: HeadConfig,
                 params: Optional[Dict[str, np.ndarray]] = None, seed: int = 0):
        self.encoder_config = encoder_config
        self.head_config = head_config
        self.params = init_params(encoder_config, head_config, seed)
        if params is not None:
            self.load_state(params)

    def load_state(self, arrays: Dict[str, np.ndarray]) -> None:
        missing = set(self.params) - set(arrays)
        unexpected = set(arrays) - set(self.params)
        if missing or unexpected:
            raise ValueError(f"parameter mismatch: missing={sorted(missing)} "
                             f"unexpected={sorted(unexpected)}")
        for name, value in arrays.items():
            if value.shape != self.params[name].shape:
                raise ShapeError(f"{name}: expected {self.params[name].shape}, got {value.shape}")
            self.params[name] = Tensor(np.array(value, copy=True), requires_grad=True)

    def state_dict(self) -> Dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.params.items()}

    def forward(self, token_ids: np.ndarray, segment_ids: np.ndarray, attention_mask: np.ndarray,
                training: bool = False, rng: Optional[np.random.Generator] = None,
                attention_sink: Optional[List[np.ndarray]] = None) -> Tensor:
        hidden = encode(self.params, self.encoder_config, token_ids, segment_ids, attention_mask,
                        training, rng, attention_sink)
        pooled = pool_cls(hidden)
        return head_forward(self.params, self.head_config, hidden, pooled, attention_mask,
                            self.encoder_config.dropout, training, rng)

    def logits(self, token_ids: np.ndarray, segment_ids: np.ndarray,
               attention_mask: np.ndarray) -> np.ndarray:
        """Eval-mode logits without recording a graph"""
        with nx.no_grad():
            return self.forward(token_ids, segment_ids, attention_mask).data.copy()

    def logits_for(self, inputs: List[EncodedInput]) -> np.ndarray:
        return self.logits(np.stack([e.token_ids for e in inputs]),
                           np.stack([e.segment_ids for e in inputs]),
                           np.stack([e.attention_mask for e in inputs]))

    def predict_proba(self, token_ids: np.ndarray, segment_ids: np.ndarray,
                      attention_mask: np.ndarray) -> np.ndarray:
        return sigmoid_array(self.logits(token_ids, segment_ids, attention_mask))
