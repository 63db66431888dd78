"""Task fine-tuning on top of a pretrained encoder.

Three task shapes are supported.  Pair classification encodes
``[CLS] a [SEP] b [SEP]``, single-sentence classification encodes
``[CLS] a [SEP]``, and multiple-choice reading comprehension is reduced
to pair classification: each choice is appended to the question to form
a statement, the statement/context pair is labeled entailment for the
correct choice and contradiction otherwise, and at prediction time the
choice with the highest entailment probability wins (ties go to the
lowest index).

In every case a linear head reads the last layer's [CLS] state.  The
model from the best epoch by dev accuracy (macro F1 breaking ties) is
returned, so a longer schedule can never return a worse dev model.
"""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import tensor as T
from .checkpoint import Checkpoint
from .encoder import (
    EncoderConfig,
    EncoderWeights,
    PoolingStrategy,
    forward_batch,
    parameter_names,
    pool,
)
from .errors import ConfigError, DataError, FormatError, TrainingDivergedError, VocabularyError
from .metrics import ConfusionMatrix, MetricsReport, accuracy, macro_f1, mrc_accuracy
from .optim import AdamW
from .tensor import Tape, Tensor, backward
from .text import TokenSequence, Vocabulary, encode_pair, encode_single

__all__ = [
    "FinetuneConfig",
    "FinetunedModel",
    "TaskKind",
    "TaskSpec",
    "evaluate_classifier",
    "evaluate_mrc",
    "finetune_classifier",
    "load_model",
    "load_task_records",
    "mrc_pairs",
    "mrc_predict",
    "mrc_scores",
    "save_model",
]

ENTAILMENT_LABEL = "entailment"
CONTRADICTION_LABEL = "contradiction"
MRC_LABELS = sorted([CONTRADICTION_LABEL, ENTAILMENT_LABEL])

_STREAM_HEAD_INIT = 101
_STREAM_SHUFFLE = 102
_STREAM_DROPOUT = 103


class TaskKind(enum.Enum):
    PAIR = "pair"
    SINGLE = "single"
    MRC = "mrc"

    @classmethod
    def parse(cls, name: str) -> "TaskKind":
        for kind in cls:
            if kind.value == name:
                return kind
        raise ConfigError(f"unknown task kind {name!r}; expected one of: pair, single, mrc")


@dataclass
class TaskSpec:
    """What to fine-tune on: task shape, label set, and input field names.

    ``labels`` may be left empty to infer the sorted set of labels seen in
    the training split.  ``field_map`` renames input JSON fields, letting a
    corpus with, say, premise/hypothesis keys feed the pair task directly.
    """

    kind: TaskKind
    labels: list[str] = field(default_factory=list)
    field_map: dict[str, str] = field(default_factory=dict)

    def source_field(self, canonical: str) -> str:
        return self.field_map.get(canonical, canonical)


@dataclass
class FinetuneConfig:
    batch_size: int = 16
    epochs: int = 7
    learning_rate: float = 1e-3
    weight_decay: float = 0.01
    seed: int = 0

    def __post_init__(self):
        if self.batch_size < 1 or self.epochs < 1:
            raise ConfigError("batch_size and epochs must be >= 1")
        if self.learning_rate <= 0.0:
            raise ConfigError(f"learning_rate must be positive, got {self.learning_rate}")


def load_task_records(path: str | Path, task: TaskSpec) -> list[dict]:
    """Read task JSON lines into canonical records; each keeps its line number."""
    records: list[dict] = []
    for lineno, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        if not raw.strip():
            continue
        try:
            obj = json.loads(raw)
        except json.JSONDecodeError as exc:
            raise DataError(f"{path}:{lineno}: malformed JSON ({exc.msg})") from exc
        try:
            records.append(_canonical_record(obj, task, lineno))
        except KeyError as exc:
            raise DataError(f"{path}:{lineno}: missing field {exc.args[0]!r}") from exc
    return records


def _canonical_record(obj: dict, task: TaskSpec, lineno: int) -> dict:
    if task.kind is TaskKind.PAIR:
        return {
            "text_a": str(obj[task.source_field("text_a")]),
            "text_b": str(obj[task.source_field("text_b")]),
            "label": str(obj[task.source_field("label")]),
            "line": lineno,
        }
    if task.kind is TaskKind.SINGLE:
        return {
            "text": str(obj[task.source_field("text")]),
            "label": str(obj[task.source_field("label")]),
            "line": lineno,
        }
    choices = obj[task.source_field("choices")]
    answer = obj[task.source_field("answer_index")]
    if not isinstance(choices, list) or not choices:
        raise DataError(f"line {lineno}: 'choices' must be a non-empty list")
    if not isinstance(answer, int) or not 0 <= answer < len(choices):
        raise DataError(f"line {lineno}: 'answer_index' must index into {len(choices)} choices")
    return {
        "context": str(obj[task.source_field("context")]),
        "question": str(obj[task.source_field("question")]),
        "choices": [str(c) for c in choices],
        "answer_index": answer,
        "line": lineno,
    }


def mrc_pairs(records: Sequence[dict]) -> list[dict]:
    """Expand reading-comprehension records into labeled statement/context pairs."""
    pairs = []
    for rec in records:
        for k, choice in enumerate(rec["choices"]):
            pairs.append(
                {
                    "text_a": f"{rec['question']} {choice}",
                    "text_b": rec["context"],
                    "label": ENTAILMENT_LABEL if k == rec["answer_index"] else CONTRADICTION_LABEL,
                    "line": rec.get("line", 0),
                }
            )
    return pairs


@dataclass
class FinetunedModel:
    """A tuned encoder plus its classification head and label set."""

    encoder_config: EncoderConfig
    weights: EncoderWeights
    head_weight: Tensor
    head_bias: Tensor
    labels: list[str]
    kind: TaskKind
    vocab_hash: str

    def label_index(self, label: str) -> int:
        try:
            return self.labels.index(label)
        except ValueError:
            raise DataError(f"label {label!r} is not part of this model's label set {self.labels}")


def _encode_record(rec: dict, kind: TaskKind, vocab: Vocabulary, max_len: int) -> TokenSequence:
    if kind is TaskKind.SINGLE:
        return encode_single(rec["text"], vocab, max_len)
    return encode_pair(rec["text_a"], rec["text_b"], vocab, max_len)


def _gold_indices(records: Sequence[dict], labels: list[str]) -> np.ndarray:
    index = {label: i for i, label in enumerate(labels)}
    gold = np.zeros(len(records), dtype=np.intp)
    for i, rec in enumerate(records):
        if rec["label"] not in index:
            raise DataError(f"line {rec.get('line', '?')}: unknown label {rec['label']!r}; expected one of {labels}")
        gold[i] = index[rec["label"]]
    return gold


def _batch_logits(seqs, weights, head_w, head_b, config, train_mode, rng):
    outputs = forward_batch(seqs, weights, config, train_mode=train_mode, rng=rng)
    mask = np.array([s.attention_mask for s in seqs])
    cls = pool(outputs, mask, PoolingStrategy.CLS)
    return T.add(T.matmul(cls, head_w), head_b)


def _predict_probs(seqs, weights, head_w, head_b, config, batch_size=64) -> np.ndarray:
    probs = []
    for start in range(0, len(seqs), batch_size):
        logits = _batch_logits(
            seqs[start : start + batch_size], weights, head_w, head_b, config, False, None
        )
        probs.append(T.softmax(logits, axis=1).data)
    return np.concatenate(probs, axis=0)


def finetune_classifier(
    checkpoint: Checkpoint,
    task: TaskSpec,
    train_records: Sequence[dict],
    dev_records: Sequence[dict],
    config: FinetuneConfig,
    vocab: Vocabulary,
) -> tuple[FinetunedModel, MetricsReport]:
    """Fine-tune encoder and head; return the best-dev-epoch model and its report.

    The checkpoint object and file are left untouched; all weights are
    copied before any update.  MRC tasks are expanded to entailment versus
    contradiction pairs before training.
    """
    if checkpoint.vocab_hash != vocab.content_hash():
        raise VocabularyError("checkpoint was built with a different vocabulary")
    if not train_records:
        raise DataError("no training records were provided")
    if not dev_records:
        raise DataError("no dev records were provided")
    encoder_config = checkpoint.encoder_config

    if task.kind is TaskKind.MRC:
        labels = list(MRC_LABELS)
        train_pairs = mrc_pairs(train_records)
        pair_kind = TaskKind.PAIR
    else:
        labels = list(task.labels) if task.labels else sorted({r["label"] for r in train_records})
        train_pairs = list(train_records)
        pair_kind = task.kind
    if len(labels) < 2:
        raise ConfigError(f"need at least two labels to classify, got {labels}")

    train_seqs = [_encode_record(r, pair_kind, vocab, encoder_config.max_len) for r in train_pairs]
    train_gold = _gold_indices(train_pairs, labels)

    encoder_arrays = {name: checkpoint.params[name] for name in parameter_names(encoder_config)}
    weights = EncoderWeights.from_arrays(encoder_config, encoder_arrays)
    head_rng = np.random.default_rng([config.seed, _STREAM_HEAD_INIT])
    head_w = Tensor(
        head_rng.normal(0.0, 0.02, size=(encoder_config.hidden_size, len(labels))),
        requires_grad=True,
    )
    head_b = Tensor(np.zeros(len(labels)), requires_grad=True)
    params = weights.as_dict()
    params["head.weight"] = head_w
    params["head.bias"] = head_b
    optimizer = AdamW(params, learning_rate=config.learning_rate, weight_decay=config.weight_decay)

    model = FinetunedModel(
        encoder_config=encoder_config,
        weights=weights,
        head_weight=head_w,
        head_bias=head_b,
        labels=labels,
        kind=task.kind,
        vocab_hash=checkpoint.vocab_hash,
    )
    best: tuple[float, float] | None = None
    best_state: tuple[dict, np.ndarray, np.ndarray] | None = None
    best_report: MetricsReport | None = None

    n = len(train_seqs)
    for epoch in range(1, config.epochs + 1):
        shuffle_rng = np.random.default_rng([config.seed, _STREAM_SHUFFLE, epoch])
        order = shuffle_rng.permutation(n)
        for batch_no, start in enumerate(range(0, n, config.batch_size)):
            rows = order[start : start + config.batch_size]
            seqs = [train_seqs[i] for i in rows]
            drop_rng = np.random.default_rng([config.seed, _STREAM_DROPOUT, epoch, batch_no])
            with Tape() as tape:
                logits = _batch_logits(seqs, weights, head_w, head_b, encoder_config, True, drop_rng)
                loss = T.cross_entropy(logits, train_gold[rows])
                if not np.isfinite(loss.data):
                    raise TrainingDivergedError(f"non-finite loss in epoch {epoch}")
                backward(loss, tape)
            optimizer.step()
            optimizer.zero_grad()
        if task.kind is TaskKind.MRC:
            _, report = evaluate_mrc(model, vocab, dev_records)
            score = (report.mrc_accuracy, report.macro_f1)
        else:
            _, report = evaluate_classifier(model, vocab, dev_records)
            score = (report.accuracy, report.macro_f1)
        if best is None or score > best:
            best = score
            best_state = (weights.to_arrays(), head_w.data.copy(), head_b.data.copy())
            best_report = report

    assert best_state is not None and best_report is not None
    arrays, hw, hb = best_state
    model.weights = EncoderWeights.from_arrays(encoder_config, arrays)
    model.head_weight = Tensor(hw, requires_grad=True)
    model.head_bias = Tensor(hb, requires_grad=True)
    return model, best_report


def evaluate_classifier(
    model: FinetunedModel, vocab: Vocabulary, records: Sequence[dict]
) -> tuple[list[dict], MetricsReport]:
    """Predict labels for pair or single records; returns predictions and metrics."""
    kind = TaskKind.PAIR if model.kind is TaskKind.MRC else model.kind
    seqs = [_encode_record(r, kind, vocab, model.encoder_config.max_len) for r in records]
    gold = _gold_indices(records, model.labels)
    probs = _predict_probs(seqs, model.weights, model.head_weight, model.head_bias, model.encoder_config)
    preds = probs.argmax(axis=1)
    predictions = [
        {
            "id": i,
            "gold": model.labels[gold[i]],
            "pred": model.labels[preds[i]],
            "scores": [float(p) for p in probs[i]],
        }
        for i in range(len(records))
    ]
    cm = ConfusionMatrix.from_pairs(model.labels, gold.tolist(), preds.tolist())
    macro, per_class = macro_f1(cm)
    report = MetricsReport(accuracy=accuracy(cm), macro_f1=macro, per_class=per_class)
    return predictions, report


def mrc_scores(
    model: FinetunedModel, vocab: Vocabulary, context: str, question: str, choices: Sequence[str]
) -> np.ndarray:
    """Entailment probability of each (question + choice, context) pair."""
    if ENTAILMENT_LABEL not in model.labels:
        raise ConfigError("model has no entailment class to score choices with")
    if not choices:
        raise DataError("cannot score an empty choice list")
    seqs = [
        encode_pair(f"{question} {choice}", context, vocab, model.encoder_config.max_len)
        for choice in choices
    ]
    probs = _predict_probs(seqs, model.weights, model.head_weight, model.head_bias, model.encoder_config)
    return probs[:, model.label_index(ENTAILMENT_LABEL)]


def mrc_predict(
    model: FinetunedModel, vocab: Vocabulary, context: str, question: str, choices: Sequence[str]
) -> int:
    """Index of the best-scoring choice; ties resolve to the lowest index."""
    return int(np.argmax(mrc_scores(model, vocab, context, question, choices)))


def evaluate_mrc(
    model: FinetunedModel, vocab: Vocabulary, records: Sequence[dict]
) -> tuple[list[dict], MetricsReport]:
    """Answer each question and report question-level accuracy.

    The report's accuracy fields all carry the question-level value; the
    per-pair confusion is not meaningful at prediction time because only
    the relative order of entailment scores matters.
    """
    predictions = []
    chosen: list[int] = []
    gold: list[int] = []
    for i, rec in enumerate(records):
        scores = mrc_scores(model, vocab, rec["context"], rec["question"], rec["choices"])
        pick = int(np.argmax(scores))
        chosen.append(pick)
        gold.append(rec["answer_index"])
        predictions.append(
            {
                "id": i,
                "gold": rec["answer_index"],
                "pred": pick,
                "scores": [float(s) for s in scores],
            }
        )
    value = mrc_accuracy(chosen, gold)
    report = MetricsReport(accuracy=value, macro_f1=value, per_class=[], mrc_accuracy=value)
    return predictions, report


def save_model(model: FinetunedModel, pretrain_config: dict | None, path: str | Path) -> None:
    """Serialize a fine-tuned model in the checkpoint container format."""
    from .checkpoint import save_checkpoint

    params = model.weights.to_arrays()
    params["head.weight"] = np.array(model.head_weight.data, copy=True)
    params["head.bias"] = np.array(model.head_bias.data, copy=True)
    ckpt = Checkpoint(
        encoder_config=model.encoder_config,
        pretrain_config=pretrain_config,
        vocab_hash=model.vocab_hash,
        step=0,
        params=params,
        extra={"task": model.kind.value, "labels": model.labels},
    )
    save_checkpoint(ckpt, path)


def load_model(path: str | Path) -> FinetunedModel:
    """Load a fine-tuned model saved by :func:`save_model`."""
    from .checkpoint import load_checkpoint

    ckpt = load_checkpoint(path)
    if "task" not in ckpt.extra or "labels" not in ckpt.extra:
        raise FormatError(f"{path}: checkpoint does not contain a fine-tuned model")
    if "head.weight" not in ckpt.params or "head.bias" not in ckpt.params:
        raise FormatError(f"{path}: fine-tuned model is missing its head parameters")
    config = ckpt.encoder_config
    encoder_arrays = {name: ckpt.params[name] for name in parameter_names(config)}
    return FinetunedModel(
        encoder_config=config,
        weights=EncoderWeights.from_arrays(config, encoder_arrays),
        head_weight=Tensor(ckpt.params["head.weight"], requires_grad=True),
        head_bias=Tensor(ckpt.params["head.bias"], requires_grad=True),
        labels=[str(x) for x in ckpt.extra["labels"]],
        kind=TaskKind.parse(str(ckpt.extra["task"])),
        vocab_hash=ckpt.vocab_hash,
    )
