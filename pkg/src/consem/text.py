"""Deterministic tokenization, vocabulary handling, and NLI triple mining.

Text is lowercased and split on whitespace with punctuation separated
into its own tokens, so the same corpus always produces the same token
stream.  Vocabularies assign ids 0..4 to the reserved tokens and order
the rest by descending frequency, ties broken alphabetically, which
makes vocabulary files byte-for-byte reproducible.

Triple mining pairs, within each premise group of a labeled corpus, the
k-th entailment hypothesis with the k-th contradiction hypothesis in
input order and drops neutral examples entirely.
"""

from __future__ import annotations

import hashlib
import json
import re
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

from .errors import ConfigError, DataError, FormatError, VocabularyError

__all__ = [
    "ContrastiveTriple",
    "DatasetStats",
    "LeakageViolation",
    "NliExample",
    "SourceStats",
    "TokenSequence",
    "Vocabulary",
    "build_vocab",
    "encode_pair",
    "encode_single",
    "leakage_guard",
    "load_nli_jsonl",
    "load_triples_jsonl",
    "prepare_contrastive",
    "save_triples_jsonl",
    "tokenize",
]

PAD_TOKEN = "[PAD]"
CLS_TOKEN = "[CLS]"
SEP_TOKEN = "[SEP]"
UNK_TOKEN = "[UNK]"
MASK_TOKEN = "[MASK]"
RESERVED_TOKENS = (PAD_TOKEN, CLS_TOKEN, SEP_TOKEN, UNK_TOKEN, MASK_TOKEN)

PAD_ID, CLS_ID, SEP_ID, UNK_ID, MASK_ID = range(5)

NLI_LABELS = ("entailment", "contradiction", "neutral")

_TOKEN_RE = re.compile(r"\w+|[^\w\s]", re.UNICODE)


def split_text(text: str) -> list[str]:
    """Lowercase and split into word / punctuation tokens."""
    return _TOKEN_RE.findall(text.lower())


@dataclass
class Vocabulary:
    """Immutable token/id mapping; index in ``tokens`` is the id."""

    tokens: list[str]
    index: dict[str, int] = field(init=False, repr=False)

    def __post_init__(self):
        self.index = {token: i for i, token in enumerate(self.tokens)}
        if len(self.index) != len(self.tokens):
            raise VocabularyError("vocabulary contains duplicate tokens")
        if tuple(self.tokens[:5]) != RESERVED_TOKENS:
            raise VocabularyError(f"vocabulary must start with the reserved tokens {RESERVED_TOKENS}")

    @property
    def size(self) -> int:
        return len(self.tokens)

    def id_for(self, token: str) -> int:
        return self.index.get(token, UNK_ID)

    def token_for(self, token_id: int) -> str:
        if not 0 <= token_id < len(self.tokens):
            raise VocabularyError(f"token id {token_id} out of range for vocabulary of size {len(self.tokens)}")
        return self.tokens[token_id]

    def content_hash(self) -> str:
        """SHA-256 of the serialized token list; stored in checkpoints."""
        payload = "\n".join(self.tokens).encode("utf-8")
        return hashlib.sha256(payload).hexdigest()

    def save(self, path: str | Path) -> None:
        Path(path).write_text("\n".join(self.tokens) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "Vocabulary":
        lines = Path(path).read_text(encoding="utf-8").splitlines()
        if len(lines) < len(RESERVED_TOKENS):
            raise FormatError(f"vocabulary file {path} is too short")
        return cls(tokens=list(lines))


def build_vocab(corpus: Iterable[str], min_count: int = 1) -> Vocabulary:
    """Count tokens over ``corpus`` and keep those with frequency >= ``min_count``.

    Non-reserved tokens are ordered by (frequency desc, token asc) after the
    five reserved tokens.  Corpus tokens that collide with a reserved literal
    are dropped rather than duplicated.
    """
    if min_count < 1:
        raise ConfigError(f"min_count must be >= 1, got {min_count}")
    counts: Counter[str] = Counter()
    for text in corpus:
        counts.update(split_text(text))
    kept = [
        token
        for token, count in counts.items()
        if count >= min_count and token not in RESERVED_TOKENS
    ]
    kept.sort(key=lambda token: (-counts[token], token))
    return Vocabulary(tokens=list(RESERVED_TOKENS) + kept)


@dataclass
class TokenSequence:
    """Token ids plus an attention mask that is 1 exactly on non-padding positions."""

    ids: list[int]
    attention_mask: list[int]

    def __post_init__(self):
        if len(self.ids) != len(self.attention_mask):
            raise ConfigError("ids and attention_mask lengths differ")

    @property
    def length(self) -> int:
        return len(self.ids)

    @property
    def real_length(self) -> int:
        return sum(self.attention_mask)


def tokenize(text: str, vocab: Vocabulary, max_len: int) -> TokenSequence:
    """Map raw text to bare token ids (no specials, no padding), truncated to ``max_len``."""
    if max_len < 1:
        raise ConfigError(f"max_len must be >= 1, got {max_len}")
    ids = [vocab.id_for(token) for token in split_text(text)][:max_len]
    return TokenSequence(ids=ids, attention_mask=[1] * len(ids))


def _pad(ids: list[int], max_len: int) -> TokenSequence:
    mask = [1] * len(ids) + [0] * (max_len - len(ids))
    return TokenSequence(ids=ids + [PAD_ID] * (max_len - len(ids)), attention_mask=mask)


def encode_single(text: str, vocab: Vocabulary, max_len: int) -> TokenSequence:
    """Encode one sentence as ``[CLS] text [SEP]``, truncated and padded to ``max_len``."""
    if max_len < 2:
        raise ConfigError(f"max_len must be >= 2 to fit [CLS] and [SEP], got {max_len}")
    body = [vocab.id_for(t) for t in split_text(text)][: max_len - 2]
    return _pad([CLS_ID] + body + [SEP_ID], max_len)


def encode_pair(text_a: str, text_b: str, vocab: Vocabulary, max_len: int) -> TokenSequence:
    """Encode a pair as ``[CLS] a [SEP] b [SEP]``, truncated and padded to ``max_len``.

    When the pair is too long, tokens are removed one at a time from the end
    of whichever segment is currently longer (the first segment on ties), so
    both segments stay represented.
    """
    if max_len < 4:
        raise ConfigError(f"max_len must be >= 4 to fit both segments, got {max_len}")
    a = [vocab.id_for(t) for t in split_text(text_a)]
    b = [vocab.id_for(t) for t in split_text(text_b)]
    budget = max_len - 3
    while len(a) + len(b) > budget:
        if a and len(a) >= len(b):
            a.pop()
        else:
            b.pop()
    return _pad([CLS_ID] + a + [SEP_ID] + b + [SEP_ID], max_len)


@dataclass
class NliExample:
    """One labeled premise/hypothesis pair."""

    premise: str
    hypothesis: str
    label: str
    source: str = "default"

    def __post_init__(self):
        if self.label not in NLI_LABELS:
            raise DataError(f"unknown NLI label {self.label!r}; expected one of {NLI_LABELS}")


@dataclass
class ContrastiveTriple:
    """Anchor sentence with one entailed positive and one contradicting hard negative."""

    sentence1: str
    sentence2: str
    hard_neg: str


@dataclass
class SourceStats:
    """Per-source counts mirroring one row of the preparation summary."""

    premises: int = 0
    entailment: int = 0
    contradiction: int = 0
    triples: int = 0


@dataclass
class DatasetStats:
    """Preparation counts per source plus a total row."""

    per_source: dict[str, SourceStats]

    @property
    def total(self) -> SourceStats:
        return SourceStats(
            premises=sum(s.premises for s in self.per_source.values()),
            entailment=sum(s.entailment for s in self.per_source.values()),
            contradiction=sum(s.contradiction for s in self.per_source.values()),
            triples=sum(s.triples for s in self.per_source.values()),
        )

    def to_json(self) -> str:
        def row(s: SourceStats) -> dict:
            return {
                "premises": s.premises,
                "entailment": s.entailment,
                "contradiction": s.contradiction,
                "triples": s.triples,
            }

        payload = {
            "sources": {name: row(s) for name, s in sorted(self.per_source.items())},
            "total": row(self.total),
        }
        return json.dumps(payload, sort_keys=True, indent=2)


def _normalize_ws(text: str) -> str:
    return " ".join(text.split())


def prepare_contrastive(examples: Sequence[NliExample]) -> tuple[list[ContrastiveTriple], DatasetStats]:
    """Mine (anchor, positive, hard negative) triples from a labeled NLI corpus.

    Examples are grouped by (source, whitespace-normalized premise) in first
    appearance order.  Within a group, the k-th entailment hypothesis is
    paired with the k-th contradiction hypothesis (both in input order) and
    min(#entailment, #contradiction) triples are emitted.  Neutral examples
    are counted toward nothing.  Degenerate pairs whose positive equals the
    hard negative are dropped.
    """
    groups: dict[tuple[str, str], dict] = {}
    order: list[tuple[str, str]] = []
    stats: dict[str, SourceStats] = {}
    for ex in examples:
        key = (ex.source, _normalize_ws(ex.premise))
        if key not in groups:
            groups[key] = {"premise": ex.premise, "entailment": [], "contradiction": []}
            order.append(key)
            stats.setdefault(ex.source, SourceStats()).premises += 1
        else:
            stats.setdefault(ex.source, SourceStats())
        if ex.label == "entailment":
            groups[key]["entailment"].append(ex.hypothesis)
            stats[ex.source].entailment += 1
        elif ex.label == "contradiction":
            groups[key]["contradiction"].append(ex.hypothesis)
            stats[ex.source].contradiction += 1
    triples: list[ContrastiveTriple] = []
    for key in order:
        source = key[0]
        group = groups[key]
        for positive, negative in zip(group["entailment"], group["contradiction"]):
            if positive == negative:
                continue
            triples.append(ContrastiveTriple(group["premise"], positive, negative))
            stats[source].triples += 1
    return triples, DatasetStats(per_source=stats)


@dataclass
class LeakageViolation:
    """A triple sentence that also appears verbatim in a held-out set."""

    triple_index: int
    fieldname: str
    sentence: str


def leakage_guard(
    triples: Sequence[ContrastiveTriple], held_out: Iterable[str]
) -> list[LeakageViolation]:
    """Report every triple field whose text appears verbatim among ``held_out``."""
    held = set(held_out)
    violations: list[LeakageViolation] = []
    for i, triple in enumerate(triples):
        for fieldname in ("sentence1", "sentence2", "hard_neg"):
            sentence = getattr(triple, fieldname)
            if sentence in held:
                violations.append(LeakageViolation(i, fieldname, sentence))
    return violations


def load_nli_jsonl(path: str | Path) -> list[NliExample]:
    """Read labeled pairs from JSON lines with premise/hypothesis/label fields."""
    examples: list[NliExample] = []
    for lineno, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        if not raw.strip():
            continue
        try:
            record = json.loads(raw)
        except json.JSONDecodeError as exc:
            raise DataError(f"{path}:{lineno}: malformed JSON ({exc.msg})") from exc
        try:
            examples.append(
                NliExample(
                    premise=str(record["premise"]),
                    hypothesis=str(record["hypothesis"]),
                    label=str(record["label"]),
                    source=str(record.get("source", "default")),
                )
            )
        except KeyError as exc:
            raise DataError(f"{path}:{lineno}: missing field {exc.args[0]!r}") from exc
        except DataError as exc:
            raise DataError(f"{path}:{lineno}: {exc}") from exc
    return examples


def save_triples_jsonl(triples: Sequence[ContrastiveTriple], path: str | Path) -> None:
    lines = [
        json.dumps(
            {"sentence1": t.sentence1, "sentence2": t.sentence2, "hard_neg": t.hard_neg},
            sort_keys=True,
            ensure_ascii=False,
        )
        for t in triples
    ]
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""), encoding="utf-8")


def load_triples_jsonl(path: str | Path) -> list[ContrastiveTriple]:
    """Read training triples, validating that every field is a non-empty string."""
    triples: list[ContrastiveTriple] = []
    for lineno, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        if not raw.strip():
            continue
        try:
            record = json.loads(raw)
        except json.JSONDecodeError as exc:
            raise DataError(f"{path}:{lineno}: malformed JSON ({exc.msg})") from exc
        try:
            triple = ContrastiveTriple(
                sentence1=record["sentence1"],
                sentence2=record["sentence2"],
                hard_neg=record["hard_neg"],
            )
        except KeyError as exc:
            raise DataError(f"{path}:{lineno}: missing field {exc.args[0]!r}") from exc
        for fieldname in ("sentence1", "sentence2", "hard_neg"):
            value = getattr(triple, fieldname)
            if not isinstance(value, str) or not value.strip():
                raise DataError(f"{path}:{lineno}: field {fieldname!r} must be a non-empty string")
        if triple.sentence2 == triple.hard_neg:
            raise DataError(f"{path}:{lineno}: positive and hard negative are identical")
        triples.append(triple)
    return triples
