"""A small bidirectional transformer encoder with pluggable sentence pooling.

The encoder is the post-norm variant: each block applies multi-head
self-attention and a GELU feed-forward network, with dropout on each
sublayer output before its residual addition and a layer norm after it.
Padding positions are excluded from attention by adding a large negative
bias to their key columns, so appending padding never changes the states
at real positions.

``forward`` keeps every layer's hidden states and attention maps, which
the pooling strategies and the attention export tooling both consume.
Hidden state index 0 is the embedding output; index L is the last block.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Iterator, Sequence

import numpy as np

from . import tensor as T
from .errors import ConfigError, DegenerateInputError, ShapeError, VocabularyError
from .tensor import Tensor
from .text import TokenSequence, Vocabulary, encode_single

__all__ = [
    "EncoderConfig",
    "EncoderWeights",
    "LayerOutputs",
    "PoolingStrategy",
    "embed_sentences",
    "forward",
    "forward_batch",
    "parameter_names",
    "pool",
]

ATTENTION_MASK_BIAS = -1e9
INIT_STD = 0.02


class PoolingStrategy(enum.Enum):
    """How a sequence of hidden states becomes one sentence vector."""

    CLS = "CLS"
    MEAN = "Mean"
    FIRST_LAST = "FirstLast"
    TOP2 = "Top2"

    @classmethod
    def parse(cls, name: str) -> "PoolingStrategy":
        for strategy in cls:
            if strategy.value == name:
                return strategy
        valid = ", ".join(s.value for s in cls)
        raise ConfigError(f"unknown pooling strategy {name!r}; expected one of: {valid}")


@dataclass(frozen=True)
class EncoderConfig:
    """Architecture hyperparameters; immutable once training starts."""

    vocab_size: int
    num_layers: int = 4
    num_heads: int = 4
    hidden_size: int = 64
    ff_size: int = 256
    max_len: int = 64
    dropout: float = 0.1

    def __post_init__(self):
        for name in ("vocab_size", "num_layers", "num_heads", "hidden_size", "ff_size", "max_len"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.hidden_size % self.num_heads != 0:
            raise ConfigError(
                f"hidden_size {self.hidden_size} is not divisible by num_heads {self.num_heads}"
            )
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"dropout must be in [0, 1), got {self.dropout}")

    @property
    def head_dim(self) -> int:
        return self.hidden_size // self.num_heads

    def to_dict(self) -> dict:
        return {
            "vocab_size": self.vocab_size,
            "num_layers": self.num_layers,
            "num_heads": self.num_heads,
            "hidden_size": self.hidden_size,
            "ff_size": self.ff_size,
            "max_len": self.max_len,
            "dropout": self.dropout,
        }


def parameter_names(config: EncoderConfig) -> list[str]:
    """Canonical parameter order; serialization writes weight blobs in this order."""
    names = ["tok_emb", "pos_emb"]
    for i in range(config.num_layers):
        prefix = f"layer{i}"
        names += [f"{prefix}.attn.{n}" for n in ("wq", "bq", "wk", "bk", "wv", "bv", "wo", "bo")]
        names += [f"{prefix}.ln1.gain", f"{prefix}.ln1.bias"]
        names += [f"{prefix}.ff.w1", f"{prefix}.ff.b1", f"{prefix}.ff.w2", f"{prefix}.ff.b2"]
        names += [f"{prefix}.ln2.gain", f"{prefix}.ln2.bias"]
    return names


def _parameter_shape(name: str, config: EncoderConfig) -> tuple[int, ...]:
    d, f = config.hidden_size, config.ff_size
    if name == "tok_emb":
        return (config.vocab_size, d)
    if name == "pos_emb":
        return (config.max_len, d)
    leaf = name.split(".", 1)[1]
    shapes = {
        "attn.wq": (d, d), "attn.wk": (d, d), "attn.wv": (d, d), "attn.wo": (d, d),
        "attn.bq": (d,), "attn.bk": (d,), "attn.bv": (d,), "attn.bo": (d,),
        "ln1.gain": (d,), "ln1.bias": (d,), "ln2.gain": (d,), "ln2.bias": (d,),
        "ff.w1": (d, f), "ff.b1": (f,), "ff.w2": (f, d), "ff.b2": (d,),
    }
    return shapes[leaf]


class EncoderWeights:
    """Named parameter tensors in the canonical order for one encoder."""

    def __init__(self, config: EncoderConfig, params: dict[str, Tensor]):
        expected = parameter_names(config)
        if list(params) != expected:
            raise ShapeError("parameter names or order do not match the encoder configuration")
        for name, p in params.items():
            want = _parameter_shape(name, config)
            if p.data.shape != want:
                raise ShapeError(f"parameter {name!r} has shape {p.data.shape}, expected {want}")
        self.config = config
        self._params = params

    @classmethod
    def initialize(cls, config: EncoderConfig, seed: int) -> "EncoderWeights":
        """Draw matrices and embeddings from N(0, 0.02^2); zero biases; unit gains."""
        rng = np.random.default_rng(seed)
        params: dict[str, Tensor] = {}
        for name in parameter_names(config):
            shape = _parameter_shape(name, config)
            if name.endswith((".gain",)):
                data = np.ones(shape)
            elif len(shape) == 1:
                data = np.zeros(shape)
            else:
                data = rng.normal(0.0, INIT_STD, size=shape)
            params[name] = Tensor(data, requires_grad=True)
        return cls(config, params)

    @classmethod
    def from_arrays(cls, config: EncoderConfig, arrays: dict[str, np.ndarray]) -> "EncoderWeights":
        # Copies, so training never writes back into the caller's arrays.
        params = {
            name: Tensor(np.array(arrays[name], copy=True), requires_grad=True)
            for name in parameter_names(config)
        }
        return cls(config, params)

    def to_arrays(self) -> dict[str, np.ndarray]:
        return {name: np.array(p.data, copy=True) for name, p in self._params.items()}

    def copy(self) -> "EncoderWeights":
        return EncoderWeights.from_arrays(self.config, self.to_arrays())

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def items(self) -> Iterator[tuple[str, Tensor]]:
        return iter(self._params.items())

    def as_dict(self) -> dict[str, Tensor]:
        return dict(self._params)


@dataclass
class LayerOutputs:
    """Per-layer states from one forward pass.

    ``hidden`` has num_layers + 1 entries (embedding output first), each of
    shape (seq, d) for a single sequence or (batch, seq, d) for a batch.
    ``attention`` has one post-softmax map per layer, (heads, seq, seq) or
    (batch, heads, seq, seq).
    """

    hidden: list[Tensor]
    attention: list[Tensor]


def _attention_block(x, mask_bias, weights, prefix, config, train_mode, rng):
    q = T.add(T.matmul(x, weights[f"{prefix}.attn.wq"]), weights[f"{prefix}.attn.bq"])
    k = T.add(T.matmul(x, weights[f"{prefix}.attn.wk"]), weights[f"{prefix}.attn.bk"])
    v = T.add(T.matmul(x, weights[f"{prefix}.attn.wv"]), weights[f"{prefix}.attn.bv"])
    batch, seq, d = x.shape
    heads, head_dim = config.num_heads, config.head_dim
    split = lambda t: T.transpose(T.reshape(t, (batch, seq, heads, head_dim)), (0, 2, 1, 3))
    qh, kh, vh = split(q), split(k), split(v)
    scores = T.scale(T.matmul(qh, T.transpose(kh, (0, 1, 3, 2))), 1.0 / np.sqrt(head_dim))
    probs = T.softmax(T.add(scores, mask_bias), axis=-1)
    context = T.matmul(probs, vh)
    context = T.reshape(T.transpose(context, (0, 2, 1, 3)), (batch, seq, d))
    out = T.add(T.matmul(context, weights[f"{prefix}.attn.wo"]), weights[f"{prefix}.attn.bo"])
    if train_mode and config.dropout > 0.0:
        out = T.dropout(out, config.dropout, rng)
    return out, probs


def _feed_forward(x, weights, prefix, config, train_mode, rng):
    h = T.gelu(T.add(T.matmul(x, weights[f"{prefix}.ff.w1"]), weights[f"{prefix}.ff.b1"]))
    out = T.add(T.matmul(h, weights[f"{prefix}.ff.w2"]), weights[f"{prefix}.ff.b2"])
    if train_mode and config.dropout > 0.0:
        out = T.dropout(out, config.dropout, rng)
    return out


def forward_batch(
    seqs: Sequence[TokenSequence],
    weights: EncoderWeights,
    config: EncoderConfig,
    train_mode: bool = False,
    rng: np.random.Generator | None = None,
) -> LayerOutputs:
    """Encode equal-length sequences together; see :class:`LayerOutputs` for shapes.

    In train mode dropout is active and ``rng`` must be provided; evaluation
    is deterministic and needs none.
    """
    if not seqs:
        raise ShapeError("forward_batch needs at least one sequence")
    lengths = {s.length for s in seqs}
    if len(lengths) != 1:
        raise ShapeError(f"sequences in one batch must share a length, got {sorted(lengths)}")
    seq_len = lengths.pop()
    if seq_len < 1:
        raise ShapeError("cannot encode an empty sequence")
    if seq_len > config.max_len:
        raise ConfigError(f"sequence length {seq_len} exceeds max_len {config.max_len}")
    if train_mode and config.dropout > 0.0 and rng is None:
        raise ConfigError("train-mode forward with dropout requires an rng")
    ids = np.array([s.ids for s in seqs], dtype=np.intp)
    if ids.max(initial=0) >= config.vocab_size:
        raise VocabularyError(
            f"token id {int(ids.max())} out of range for vocab_size {config.vocab_size}"
        )
    mask = np.array([s.attention_mask for s in seqs])

    x = T.add(
        T.gather_rows(weights["tok_emb"], ids),
        T.gather_rows(weights["pos_emb"], np.arange(seq_len, dtype=np.intp)),
    )
    if train_mode and config.dropout > 0.0:
        x = T.dropout(x, config.dropout, rng)
    # (batch, 1, 1, seq): masked key columns get a large negative score bias.
    bias = T.constant(
        (1.0 - mask)[:, None, None, :] * ATTENTION_MASK_BIAS, dtype=x.data.dtype
    )
    hidden = [x]
    attention: list[Tensor] = []
    for i in range(config.num_layers):
        prefix = f"layer{i}"
        attn_out, probs = _attention_block(x, bias, weights, prefix, config, train_mode, rng)
        x = T.layer_norm(
            T.add(x, attn_out), weights[f"{prefix}.ln1.gain"], weights[f"{prefix}.ln1.bias"]
        )
        ff_out = _feed_forward(x, weights, prefix, config, train_mode, rng)
        x = T.layer_norm(
            T.add(x, ff_out), weights[f"{prefix}.ln2.gain"], weights[f"{prefix}.ln2.bias"]
        )
        hidden.append(x)
        attention.append(probs)
    return LayerOutputs(hidden=hidden, attention=attention)


def forward(
    seq: TokenSequence,
    weights: EncoderWeights,
    config: EncoderConfig,
    train_mode: bool = False,
    rng: np.random.Generator | None = None,
) -> LayerOutputs:
    """Encode one sequence; hidden states are (seq, d), attention maps (heads, seq, seq)."""
    out = forward_batch([seq], weights, config, train_mode=train_mode, rng=rng)
    seq_len = seq.length
    hidden = [T.reshape(h, (seq_len, config.hidden_size)) for h in out.hidden]
    attention = [
        T.reshape(a, (config.num_heads, seq_len, seq_len)) for a in out.attention
    ]
    return LayerOutputs(hidden=hidden, attention=attention)


def _masked_mean(states: Tensor, mask: np.ndarray) -> Tensor:
    """Average over non-padding positions via a constant weight matmul."""
    counts = mask.sum(axis=-1, keepdims=True)
    weights_row = (mask / counts).astype(states.data.dtype)
    if states.ndim == 3:
        batch, seq, d = states.shape
        pooled = T.matmul(T.constant(weights_row[:, None, :], dtype=states.data.dtype), states)
        return T.reshape(pooled, (batch, d))
    seq, d = states.shape
    pooled = T.matmul(T.constant(weights_row[None, :], dtype=states.data.dtype), states)
    return T.reshape(pooled, (d,))


def _cls_state(states: Tensor) -> Tensor:
    if states.ndim == 3:
        batch, seq, d = states.shape
        flat = T.reshape(states, (batch * seq, d))
        return T.gather_rows(flat, np.arange(batch, dtype=np.intp) * seq)
    seq, d = states.shape
    return T.reshape(T.gather_rows(states, np.array([0], dtype=np.intp)), (d,))


def pool(outputs: LayerOutputs, mask, strategy: PoolingStrategy) -> Tensor:
    """Reduce layer states to sentence vectors, shape (d,) or (batch, d).

    CLS takes the last layer's first position.  Mean averages the last
    layer over non-padding positions.  FirstLast averages block 1 with the
    last block before the masked mean, Top2 the last two blocks; both are
    symmetric in the two layers they combine.
    """
    mask = np.asarray(mask)
    if outputs.hidden[-1].ndim == 3:
        expected = outputs.hidden[-1].shape[:2]
    else:
        expected = outputs.hidden[-1].shape[:1]
    if mask.shape != expected:
        raise ShapeError(f"mask shape {mask.shape} does not match states {expected}")
    if np.any(mask.sum(axis=-1) == 0):
        raise DegenerateInputError("cannot pool a fully padded sequence")
    if strategy is PoolingStrategy.CLS:
        return _cls_state(outputs.hidden[-1])
    if strategy is PoolingStrategy.MEAN:
        return _masked_mean(outputs.hidden[-1], mask)
    if strategy is PoolingStrategy.FIRST_LAST:
        if len(outputs.hidden) < 2:
            raise ConfigError("FirstLast pooling needs at least one block")
        combined = T.scale(T.add(outputs.hidden[1], outputs.hidden[-1]), 0.5)
        return _masked_mean(combined, mask)
    if strategy is PoolingStrategy.TOP2:
        if len(outputs.hidden) < 3:
            raise ConfigError("Top2 pooling needs at least two blocks")
        combined = T.scale(T.add(outputs.hidden[-2], outputs.hidden[-1]), 0.5)
        return _masked_mean(combined, mask)
    raise ConfigError(f"unhandled pooling strategy {strategy!r}")


def embed_sentences(
    texts: Sequence[str],
    weights: EncoderWeights,
    config: EncoderConfig,
    vocab: Vocabulary,
    strategy: PoolingStrategy = PoolingStrategy.CLS,
    batch_size: int = 32,
) -> np.ndarray:
    """Encode (eval mode) and pool sentences into an (n, d) float array."""
    vectors = np.zeros((len(texts), config.hidden_size), dtype=np.float32)
    for start in range(0, len(texts), batch_size):
        chunk = texts[start : start + batch_size]
        seqs = [encode_single(text, vocab, config.max_len) for text in chunk]
        outputs = forward_batch(seqs, weights, config, train_mode=False)
        mask = np.array([s.attention_mask for s in seqs])
        pooled = pool(outputs, mask, strategy)
        vectors[start : start + len(chunk)] = pooled.data.astype(np.float32)
    return vectors
