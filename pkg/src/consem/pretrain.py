"""Contrastive pretraining with an optional masked-language auxiliary loss.

The objective treats, for each anchor in a batch of N triples, its own
positive as the target among all 2N in-batch candidates (every positive
and every hard negative), scored by cosine similarity over a temperature:

    loss_i = -log( exp(s(a_i, p_i)/tau)
                   / sum_j [ exp(s(a_i, p_j)/tau) + exp(s(a_i, n_j)/tau) ] )

and the batch loss is the mean over i.  The auxiliary loss masks anchor
tokens (fresh draws every epoch) and predicts the originals through a
projection tied to the token embedding matrix; the combined objective is
``contrastive + mlm_weight * mlm``.

All randomness (subsampling, splits, shuffles, dropout, masking) derives
from the run seed through fixed-purpose streams, so repeated runs produce
identical loss records and weights.
"""

from __future__ import annotations

import csv
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from . import tensor as T
from .checkpoint import Checkpoint
from .encoder import (
    EncoderConfig,
    EncoderWeights,
    LayerOutputs,
    PoolingStrategy,
    forward_batch,
    pool,
)
from .errors import ConfigError, ContractError, DataError, ShapeError, TrainingDivergedError
from .optim import AdamW
from .tensor import Tape, Tensor, backward
from .text import (
    CLS_ID,
    MASK_ID,
    PAD_ID,
    SEP_ID,
    ContrastiveTriple,
    TokenSequence,
    Vocabulary,
    encode_single,
)

__all__ = [
    "LossRecord",
    "MaskedTarget",
    "PretrainConfig",
    "contrastive_loss",
    "contrastive_scores",
    "mask_for_mlm",
    "mlm_loss",
    "select_fraction",
    "train",
    "write_loss_csv",
]

LOSS_CSV_HEADER = ["epoch", "step", "split", "contrastive", "mlm", "combined"]

# Stream tags for seed derivation; never reorder, it would change every run.
_STREAM_FRACTION = 1
_STREAM_SPLIT = 2
_STREAM_SHUFFLE = 3
_STREAM_DROPOUT = 4
_STREAM_MLM_TRAIN = 5
_STREAM_MLM_VAL = 6


@dataclass
class PretrainConfig:
    """Hyperparameters of one pretraining run."""

    tau: float = 0.05
    mlm_weight: float = 0.0
    mask_rate: float = 0.15
    batch_size: int = 8
    epochs: int = 10
    learning_rate: float = 1e-3
    weight_decay: float = 0.01
    seed: int = 0
    pooling: PoolingStrategy = PoolingStrategy.CLS
    data_fraction: float = 1.0
    validation_fraction: float = 0.1

    def __post_init__(self):
        if self.tau <= 0.0:
            raise ConfigError(f"tau must be positive, got {self.tau}")
        if self.mlm_weight < 0.0:
            raise ConfigError(f"mlm_weight must be non-negative, got {self.mlm_weight}")
        if not 0.0 < self.mask_rate < 1.0:
            raise ConfigError(f"mask_rate must be in (0, 1), got {self.mask_rate}")
        if self.batch_size < 1 or self.epochs < 1:
            raise ConfigError("batch_size and epochs must be >= 1")
        if self.learning_rate <= 0.0:
            raise ConfigError(f"learning_rate must be positive, got {self.learning_rate}")
        if not 0.0 < self.data_fraction <= 1.0:
            raise ConfigError(f"data_fraction must be in (0, 1], got {self.data_fraction}")
        if not 0.0 <= self.validation_fraction < 1.0:
            raise ConfigError(
                f"validation_fraction must be in [0, 1), got {self.validation_fraction}"
            )
        if isinstance(self.pooling, str):
            self.pooling = PoolingStrategy.parse(self.pooling)

    def to_dict(self) -> dict:
        payload = asdict(self)
        payload["pooling"] = self.pooling.value
        return payload

    @classmethod
    def from_dict(cls, payload: dict) -> "PretrainConfig":
        return cls(**payload)


@dataclass
class LossRecord:
    """Per-epoch average losses for one split."""

    epoch: int
    step: int
    split: str
    contrastive: float
    mlm: float
    combined: float


def contrastive_scores(
    anchors: Tensor, positives: Tensor, negatives: Tensor, tau: float
) -> tuple[Tensor, Tensor]:
    """Temperature-scaled cosine score matrix (N, 2N) and the positive diagonal (N,).

    Columns 0..N-1 score each anchor against every positive, columns N..2N-1
    against every hard negative.  Exposed separately so properties of the
    scores (argmax stability under tau, for one) can be tested directly.
    """
    if anchors.ndim != 2 or anchors.shape != positives.shape or anchors.shape != negatives.shape:
        raise ShapeError(
            f"expected three equal (N, d) matrices, got {anchors.shape}, "
            f"{positives.shape}, {negatives.shape}"
        )
    if anchors.shape[0] < 1:
        raise ShapeError("contrastive batch must contain at least one triple")
    if tau <= 0.0:
        raise ConfigError(f"tau must be positive, got {tau}")
    inv_tau = 1.0 / tau
    na = T.normalize_rows(anchors)
    npos = T.normalize_rows(positives)
    nneg = T.normalize_rows(negatives)
    own = T.scale(T.reduce_sum(T.mul(na, npos), axis=1), inv_tau)
    sim_pos = T.scale(T.matmul(na, T.transpose(npos, (1, 0))), inv_tau)
    sim_neg = T.scale(T.matmul(na, T.transpose(nneg, (1, 0))), inv_tau)
    return T.concat([sim_pos, sim_neg], axis=1), own


def contrastive_loss(anchors: Tensor, positives: Tensor, negatives: Tensor, tau: float) -> Tensor:
    """Mean in-batch classification loss over the triples; see the module docstring."""
    scores, own = contrastive_scores(anchors, positives, negatives, tau)
    return T.mean(T.sub(T.logsumexp(scores, axis=1), own))


@dataclass
class MaskedTarget:
    """A position whose original token must be recovered."""

    position: int
    token_id: int


_UNMASKABLE = (PAD_ID, CLS_ID, SEP_ID)


def mask_for_mlm(
    seq: TokenSequence, rate: float, rng: np.random.Generator
) -> tuple[TokenSequence, list[MaskedTarget]]:
    """Replace each maskable token with [MASK] independently with probability ``rate``.

    Special tokens and padding are never selected.  One uniform draw is
    consumed per position regardless of eligibility, so the selection for a
    given (seed, sequence) is stable.  Every selected position becomes the
    [MASK] id; there is no keep-or-random branch.
    """
    if not 0.0 < rate < 1.0:
        raise ConfigError(f"mask rate must be in (0, 1), got {rate}")
    draws = rng.random(len(seq.ids))
    corrupted = list(seq.ids)
    targets: list[MaskedTarget] = []
    for position, (token_id, keep_mask) in enumerate(zip(seq.ids, seq.attention_mask)):
        if keep_mask != 1 or token_id in _UNMASKABLE:
            continue
        if draws[position] < rate:
            corrupted[position] = MASK_ID
            targets.append(MaskedTarget(position=position, token_id=token_id))
    return TokenSequence(ids=corrupted, attention_mask=list(seq.attention_mask)), targets


def _mlm_loss_flat(
    last_hidden: Tensor, rows: np.ndarray, cols: np.ndarray, token_ids: np.ndarray, tok_emb: Tensor
) -> Tensor:
    """Cross-entropy at masked positions with logits tied to the token embeddings."""
    if last_hidden.ndim == 2:
        states = T.gather_rows(last_hidden, cols)
    else:
        batch, seq, d = last_hidden.shape
        flat = T.reshape(last_hidden, (batch * seq, d))
        states = T.gather_rows(flat, rows * seq + cols)
    logits = T.matmul(states, T.transpose(tok_emb, (1, 0)))
    return T.cross_entropy(logits, token_ids)


def mlm_loss(outputs: LayerOutputs, targets: Sequence[MaskedTarget], token_embedding: Tensor) -> Tensor:
    """Mean masked-token cross-entropy for one sequence; zero when nothing is masked."""
    if not targets:
        return Tensor(0.0)
    cols = np.array([t.position for t in targets], dtype=np.intp)
    ids = np.array([t.token_id for t in targets], dtype=np.intp)
    return _mlm_loss_flat(outputs.hidden[-1], np.zeros_like(cols), cols, ids, token_embedding)


def select_fraction(n: int, fraction: float, seed: int) -> np.ndarray:
    """Indices of a seeded subset of size max(1, round(fraction * n)).

    Subsets are prefixes of one fixed permutation, so for the same seed a
    smaller fraction always selects a subset of a larger one.
    """
    if not 0.0 < fraction <= 1.0:
        raise ConfigError(f"fraction must be in (0, 1], got {fraction}")
    if n < 1:
        raise ContractError("cannot subsample an empty dataset")
    rng = np.random.default_rng([seed, _STREAM_FRACTION])
    order = rng.permutation(n)
    keep = max(1, int(round(fraction * n)))
    return np.sort(order[:keep])


def _split_validation(n: int, fraction: float, seed: int) -> tuple[np.ndarray, np.ndarray]:
    rng = np.random.default_rng([seed, _STREAM_SPLIT])
    order = rng.permutation(n)
    n_val = min(int(n * fraction), n - 1)
    return np.sort(order[n_val:]), np.sort(order[:n_val])


def _epoch_masking(seqs, indices, rate, seed, stream, epoch):
    corrupted, rows, cols, ids = [], [], [], []
    for batch_row, global_row in enumerate(indices):
        rng = np.random.default_rng([seed, stream, epoch, int(global_row)])
        seq, targets = mask_for_mlm(seqs[global_row], rate, rng)
        corrupted.append(seq)
        for target in targets:
            rows.append(batch_row)
            cols.append(target.position)
            ids.append(target.token_id)
    return (
        corrupted,
        np.array(rows, dtype=np.intp),
        np.array(cols, dtype=np.intp),
        np.array(ids, dtype=np.intp),
    )


def _batch_losses(
    seq_lists: tuple[list[TokenSequence], list[TokenSequence], list[TokenSequence]],
    mlm_batch,
    weights: EncoderWeights,
    encoder_config: EncoderConfig,
    config: PretrainConfig,
    train_mode: bool,
    rng: np.random.Generator | None,
) -> tuple[Tensor, Tensor | None]:
    pooled = []
    for seqs in seq_lists:
        outputs = forward_batch(seqs, weights, encoder_config, train_mode=train_mode, rng=rng)
        mask = np.array([s.attention_mask for s in seqs])
        pooled.append(pool(outputs, mask, config.pooling))
    cl = contrastive_loss(pooled[0], pooled[1], pooled[2], config.tau)
    ml: Tensor | None = None
    if mlm_batch is not None:
        corrupted, rows, cols, ids = mlm_batch
        if len(ids):
            outputs = forward_batch(
                corrupted, weights, encoder_config, train_mode=train_mode, rng=rng
            )
            ml = _mlm_loss_flat(outputs.hidden[-1], rows, cols, ids, weights["tok_emb"])
        else:
            ml = Tensor(0.0)
    return cl, ml


def train(
    triples: Sequence[ContrastiveTriple],
    config: PretrainConfig,
    vocab: Vocabulary,
    encoder_config: EncoderConfig | None = None,
    init_weights: EncoderWeights | None = None,
) -> tuple[Checkpoint, list[LossRecord]]:
    """Run contrastive pretraining and return the final checkpoint and loss log.

    Data-fraction subsampling happens first, then a seeded validation split.
    One loss record per epoch and split is produced; validation records are
    omitted when the split is empty.  ``init_weights`` warm-starts from an
    existing encoder (the optimizer state always starts fresh).
    """
    if not triples:
        raise DataError("no training triples were provided")
    if encoder_config is None:
        encoder_config = EncoderConfig(vocab_size=vocab.size)
    if encoder_config.vocab_size != vocab.size:
        raise ConfigError(
            f"encoder vocab_size {encoder_config.vocab_size} does not match vocabulary size {vocab.size}"
        )
    if init_weights is not None and init_weights.config != encoder_config:
        raise ConfigError("warm-start weights were built for a different encoder configuration")

    selected = select_fraction(len(triples), config.data_fraction, config.seed)
    train_idx, val_idx = _split_validation(len(selected), config.validation_fraction, config.seed)
    chosen = [triples[i] for i in selected]

    max_len = encoder_config.max_len
    anchors = [encode_single(t.sentence1, vocab, max_len) for t in chosen]
    positives = [encode_single(t.sentence2, vocab, max_len) for t in chosen]
    negatives = [encode_single(t.hard_neg, vocab, max_len) for t in chosen]

    weights = init_weights.copy() if init_weights is not None else EncoderWeights.initialize(
        encoder_config, config.seed
    )
    optimizer = AdamW(
        weights.as_dict(),
        learning_rate=config.learning_rate,
        weight_decay=config.weight_decay,
    )
    use_mlm = config.mlm_weight > 0.0
    records: list[LossRecord] = []
    step = 0

    for epoch in range(1, config.epochs + 1):
        shuffle_rng = np.random.default_rng([config.seed, _STREAM_SHUFFLE, epoch])
        order = train_idx[shuffle_rng.permutation(len(train_idx))]
        sums = {"contrastive": 0.0, "mlm": 0.0, "rows": 0}
        for batch_no, start in enumerate(range(0, len(order), config.batch_size)):
            rows = order[start : start + config.batch_size]
            batch = (
                [anchors[i] for i in rows],
                [positives[i] for i in rows],
                [negatives[i] for i in rows],
            )
            mlm_batch = (
                _epoch_masking(anchors, rows, config.mask_rate, config.seed, _STREAM_MLM_TRAIN, epoch)
                if use_mlm
                else None
            )
            drop_rng = np.random.default_rng([config.seed, _STREAM_DROPOUT, epoch, batch_no])
            with Tape() as tape:
                cl, ml = _batch_losses(
                    batch, mlm_batch, weights, encoder_config, config, True, drop_rng
                )
                loss = cl if ml is None else T.add(cl, T.scale(ml, config.mlm_weight))
                if not np.isfinite(loss.data):
                    raise TrainingDivergedError(f"non-finite loss at step {step + 1}")
                backward(loss, tape)
            optimizer.step()
            optimizer.zero_grad()
            step += 1
            sums["contrastive"] += float(cl.data) * len(rows)
            sums["mlm"] += (float(ml.data) if ml is not None else 0.0) * len(rows)
            sums["rows"] += len(rows)
        mean_cl = sums["contrastive"] / sums["rows"]
        mean_ml = sums["mlm"] / sums["rows"]
        records.append(
            LossRecord(
                epoch=epoch,
                step=step,
                split="train",
                contrastive=mean_cl,
                mlm=mean_ml,
                combined=mean_cl + config.mlm_weight * mean_ml,
            )
        )
        if len(val_idx):
            records.append(
                _validation_record(
                    epoch, step, val_idx, anchors, positives, negatives,
                    weights, encoder_config, config,
                )
            )

    final = Checkpoint(
        encoder_config=encoder_config,
        pretrain_config=config.to_dict(),
        vocab_hash=vocab.content_hash(),
        step=step,
        params=weights.to_arrays(),
    )
    return final, records


def _validation_record(
    epoch, step, val_idx, anchors, positives, negatives, weights, encoder_config, config
) -> LossRecord:
    use_mlm = config.mlm_weight > 0.0
    sums = {"contrastive": 0.0, "mlm": 0.0, "rows": 0}
    for start in range(0, len(val_idx), config.batch_size):
        rows = val_idx[start : start + config.batch_size]
        batch = (
            [anchors[i] for i in rows],
            [positives[i] for i in rows],
            [negatives[i] for i in rows],
        )
        mlm_batch = (
            _epoch_masking(anchors, rows, config.mask_rate, config.seed, _STREAM_MLM_VAL, epoch)
            if use_mlm
            else None
        )
        cl, ml = _batch_losses(batch, mlm_batch, weights, encoder_config, config, False, None)
        sums["contrastive"] += float(cl.data) * len(rows)
        sums["mlm"] += (float(ml.data) if ml is not None else 0.0) * len(rows)
        sums["rows"] += len(rows)
    mean_cl = sums["contrastive"] / sums["rows"]
    mean_ml = sums["mlm"] / sums["rows"]
    return LossRecord(
        epoch=epoch,
        step=step,
        split="validation",
        contrastive=mean_cl,
        mlm=mean_ml,
        combined=mean_cl + config.mlm_weight * mean_ml,
    )


def write_loss_csv(records: Sequence[LossRecord], path: str | Path) -> None:
    """Write the loss log with a fixed header and fixed float formatting."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(LOSS_CSV_HEADER)
        for r in records:
            writer.writerow(
                [r.epoch, r.step, r.split, f"{r.contrastive:.8f}", f"{r.mlm:.8f}", f"{r.combined:.8f}"]
            )
