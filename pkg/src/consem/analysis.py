"""Embedding-space diagnostics and retrieval scoring.

Alignment is the mean squared distance between paired embeddings; lower
means matched sentences sit closer.  Computed over entailment pairs it
should undercut the same quantity over contradiction pairs for a useful
space.  Uniformity is ``log mean exp(-2 ||x - y||^2)`` over all distinct
unordered pairs of L2-normalized embeddings; more negative means the
mass spreads more evenly over the hypersphere (two orthogonal unit
vectors give exactly -4).  Retrieval quality is accuracy at top K: the
fraction of claims whose gold context lands among the K nearest
candidates by cosine, descending, ties resolved toward the lower index.

All statistics are computed in float64 from the given vectors; nothing
here needs gradients.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .checkpoint import Checkpoint
from .encoder import EncoderWeights, forward, parameter_names
from .errors import (
    ConfigError,
    ContractError,
    DataError,
    DegenerateInputError,
    FormatError,
    MetricError,
    ShapeError,
    VocabularyError,
)
from .text import Vocabulary, encode_pair

__all__ = [
    "AnalysisReport",
    "EmbeddingSet",
    "RetrievalCase",
    "accuracy_at_topk",
    "alignment",
    "export_attention",
    "load_embeddings",
    "rank_candidates",
    "save_embeddings",
    "uniformity",
]

TOPK_REPORT_VALUES = (1, 3, 5, 10)


@dataclass
class EmbeddingSet:
    """Embeddings with aligned ids and source texts."""

    vectors: np.ndarray
    texts: list[str]
    ids: list[int] = field(default_factory=list)

    def __post_init__(self):
        self.vectors = np.asarray(self.vectors)
        if self.vectors.ndim != 2:
            raise ShapeError(f"embeddings must be a 2-d array, got shape {self.vectors.shape}")
        if not self.ids:
            self.ids = list(range(self.vectors.shape[0]))
        if len(self.texts) != self.vectors.shape[0] or len(self.ids) != self.vectors.shape[0]:
            raise ContractError(
                f"{self.vectors.shape[0]} vectors but {len(self.texts)} texts and {len(self.ids)} ids"
            )
        if np.any((self.vectors * self.vectors).sum(axis=1) == 0.0):
            raise DegenerateInputError("embedding set contains a zero vector")


def _normalized(vectors: np.ndarray) -> np.ndarray:
    v = np.asarray(vectors, dtype=np.float64)
    norms = np.sqrt((v * v).sum(axis=1, keepdims=True))
    if np.any(norms == 0.0):
        raise DegenerateInputError("cannot normalize a zero vector")
    return v / norms


@dataclass
class RetrievalCase:
    """One claim against its candidate contexts, with the gold index."""

    claim: np.ndarray
    candidates: np.ndarray
    gold_index: int

    def __post_init__(self):
        self.claim = np.asarray(self.claim)
        self.candidates = np.asarray(self.candidates)
        if self.claim.ndim != 1 or self.candidates.ndim != 2:
            raise ShapeError("claim must be a vector and candidates a matrix")
        if self.candidates.shape[0] < 1 or self.candidates.shape[1] != self.claim.shape[0]:
            raise ShapeError(
                f"candidates {self.candidates.shape} incompatible with claim {self.claim.shape}"
            )
        if not 0 <= self.gold_index < self.candidates.shape[0]:
            raise ContractError(f"gold index {self.gold_index} out of range")


def rank_candidates(claim: np.ndarray, candidates: np.ndarray) -> np.ndarray:
    """Candidate indices by descending cosine similarity, ties toward lower index."""
    c = _normalized(np.asarray(claim)[None, :])[0]
    m = _normalized(candidates)
    sims = m @ c
    return np.argsort(-sims, kind="stable")


def accuracy_at_topk(cases: Sequence[RetrievalCase], k: int) -> float:
    """Fraction of cases whose gold candidate ranks in the top K.

    K larger than a candidate pool is clamped to the pool size, so the value
    is non-decreasing in K and reaches 1 at the pool size for any gold.
    """
    if k < 1:
        raise ConfigError(f"K must be >= 1, got {k}")
    if not cases:
        raise MetricError("accuracy at top K over zero cases is undefined")
    hits = 0
    for case in cases:
        kk = min(k, case.candidates.shape[0])
        order = rank_candidates(case.claim, case.candidates)
        if case.gold_index in order[:kk]:
            hits += 1
    return hits / len(cases)


def alignment(pairs: Sequence[tuple[np.ndarray, np.ndarray]]) -> float:
    """Mean squared Euclidean distance between paired embeddings."""
    if not len(pairs):
        raise MetricError("alignment over zero pairs is undefined")
    total = 0.0
    width = None
    for a, b in pairs:
        a = np.asarray(a, dtype=np.float64)
        b = np.asarray(b, dtype=np.float64)
        if a.shape != b.shape or a.ndim != 1:
            raise ShapeError(f"pair shapes disagree: {a.shape} vs {b.shape}")
        if width is None:
            width = a.shape[0]
        elif a.shape[0] != width:
            raise ShapeError("all pairs must share one embedding width")
        diff = a - b
        total += float(diff @ diff)
    return total / len(pairs)


def uniformity(embeddings) -> float:
    """``log mean exp(-2 d^2)`` over distinct unordered pairs of normalized rows."""
    vectors = embeddings.vectors if isinstance(embeddings, EmbeddingSet) else embeddings
    v = _normalized(vectors)
    n = v.shape[0]
    if n < 2:
        raise MetricError("uniformity needs at least two embeddings")
    sq = ((v[:, None, :] - v[None, :, :]) ** 2).sum(axis=2)
    iu = np.triu_indices(n, k=1)
    return float(np.log(np.mean(np.exp(-2.0 * sq[iu]))))


@dataclass
class AnalysisReport:
    """Geometry diagnostics plus optional retrieval accuracies."""

    alignment_entailment: float
    alignment_contradiction: float
    uniformity: float
    accuracy_at_k: dict[int, float] | None = None

    def to_json(self) -> str:
        payload = {
            "alignment_entailment": self.alignment_entailment,
            "alignment_contradiction": self.alignment_contradiction,
            "uniformity": self.uniformity,
            "accuracy_at_k": (
                {str(k): v for k, v in sorted(self.accuracy_at_k.items())}
                if self.accuracy_at_k is not None
                else None
            ),
        }
        return json.dumps(payload, sort_keys=True, indent=2)


def export_attention(
    checkpoint: Checkpoint, vocab: Vocabulary, text_a: str, text_b: str
) -> dict:
    """Last-layer attention over ``[CLS] a [SEP] b [SEP]`` with aligned token strings.

    Returns per-head matrices and the head-averaged matrix, trimmed to the
    real (non-padding) length; each row of each matrix sums to one.
    """
    if checkpoint.vocab_hash != vocab.content_hash():
        raise VocabularyError("checkpoint was built with a different vocabulary")
    config = checkpoint.encoder_config
    arrays = {name: checkpoint.params[name] for name in parameter_names(config)}
    weights = EncoderWeights.from_arrays(config, arrays)
    seq = encode_pair(text_a, text_b, vocab, config.max_len)
    outputs = forward(seq, weights, config, train_mode=False)
    n = seq.real_length
    probs = outputs.attention[-1].data[:, :n, :n].astype(np.float64)
    tokens = [vocab.token_for(i) for i in seq.ids[:n]]
    return {
        "tokens": tokens,
        "heads": [head.tolist() for head in probs],
        "head_mean": probs.mean(axis=0).tolist(),
    }


def save_embeddings(path: str | Path, embeddings: EmbeddingSet) -> None:
    """Write ``(n, d)`` as two little-endian u32 then row-major float32 values.

    A JSON-lines sidecar at ``<path>.jsonl`` carries one ``{"id", "text"}``
    object per row in the same order.
    """
    path = Path(path)
    vectors = np.ascontiguousarray(embeddings.vectors, dtype="<f4")
    with open(path, "wb") as fh:
        fh.write(struct.pack("<II", vectors.shape[0], vectors.shape[1]))
        fh.write(vectors.tobytes())
    sidecar = [
        json.dumps({"id": i, "text": t}, sort_keys=True, ensure_ascii=False)
        for i, t in zip(embeddings.ids, embeddings.texts)
    ]
    Path(str(path) + ".jsonl").write_text(
        "\n".join(sidecar) + ("\n" if sidecar else ""), encoding="utf-8"
    )


def load_embeddings(path: str | Path) -> EmbeddingSet:
    """Read an embedding file and its sidecar back into an :class:`EmbeddingSet`."""
    path = Path(path)
    blob = path.read_bytes()
    if len(blob) < 8:
        raise FormatError(f"{path}: too short for an embedding file header")
    n, d = struct.unpack("<II", blob[:8])
    expected = 8 + 4 * n * d
    if len(blob) != expected:
        raise FormatError(f"{path}: expected {expected} bytes for ({n}, {d}), found {len(blob)}")
    vectors = np.frombuffer(blob, dtype="<f4", count=n * d, offset=8).reshape(n, d).astype(np.float32)
    sidecar_path = Path(str(path) + ".jsonl")
    if not sidecar_path.exists():
        raise FormatError(f"{sidecar_path}: sidecar metadata is missing")
    ids: list[int] = []
    texts: list[str] = []
    for lineno, raw in enumerate(sidecar_path.read_text(encoding="utf-8").splitlines(), start=1):
        if not raw.strip():
            continue
        try:
            rec = json.loads(raw)
            ids.append(int(rec["id"]))
            texts.append(str(rec["text"]))
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
            raise DataError(f"{sidecar_path}:{lineno}: bad sidecar record ({exc})") from exc
    if len(ids) != n:
        raise FormatError(f"{sidecar_path}: {len(ids)} sidecar rows for {n} vectors")
    return EmbeddingSet(vectors=vectors, texts=texts, ids=ids)
