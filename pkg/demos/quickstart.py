"""Walk the whole pipeline once on a synthetic corpus.

Every stage runs through the command-line entry points, exactly as it
would from a shell, so the script doubles as a living transcript of the
README workflow: mine triples from labeled pairs, fit a vocabulary,
pretrain the encoder contrastively, fine-tune a pair classifier, and
finally evaluate and retrieve.  Artifacts land in a temp directory whose
path is printed at the end, so you can poke at every file afterwards.
"""

import json
import tempfile
from pathlib import Path

from consem.cli import main

TOPICS = ["river", "glacier", "harbor", "canyon", "orchard", "temple"]

PATTERNS = [
    "the {t} stays quiet through {w}",
    "people cross the {t} every {w}",
    "a guide describes the {t} during {w}",
    "light settles on the {t} in {w}",
]
WHEN = ["spring", "summer", "autumn", "winter", "dawn", "dusk"]


def sentence(topic: str, k: int) -> str:
    mixed = (k * 2654435761) >> 8
    return PATTERNS[mixed % len(PATTERNS)].format(t=topic, w=WHEN[(mixed >> 4) % len(WHEN)])


def write_jsonl(path: Path, rows: list[dict]) -> None:
    path.write_text("\n".join(json.dumps(r) for r in rows) + "\n", encoding="utf-8")


root = Path(tempfile.mkdtemp(prefix="consem_quickstart_"))
print(f"working under {root}\n")

# 1. A labeled NLI file: each premise gets one entailed hypothesis (same
#    topic) and one contradicting one (different topic).  Neutral rows are
#    included to show they are ignored by the miner.
rows = []
for g in range(60):
    topic = TOPICS[g % len(TOPICS)]
    other = TOPICS[(g + 2) % len(TOPICS)]
    premise = sentence(topic, 3 * g)
    rows.append({"premise": premise, "hypothesis": sentence(topic, 3 * g + 1), "label": "entailment"})
    rows.append({"premise": premise, "hypothesis": sentence(other, 3 * g + 2), "label": "contradiction"})
    rows.append({"premise": premise, "hypothesis": "maybe " + sentence(other, 900 + g), "label": "neutral"})
write_jsonl(root / "nli.jsonl", rows)

print("== prepare: mine (anchor, positive, hard negative) triples ==")
assert main(["prepare", "--nli", str(root / "nli.jsonl"), "--out", str(root / "prep")]) == 0
stats = json.loads((root / "prep" / "stats.json").read_text())
print(f"   stats.json reports {stats['total']['triples']} triples "
      f"over {stats['total']['premises']} premises\n")

print("== build-vocab: whitespace tokens above a count threshold ==")
assert main(["build-vocab", "--triples", str(root / 'prep' / 'triples.jsonl'),
             "--out", str(root / "vv")]) == 0
print()

# 2. Contrastive pretraining.  The encoder here is deliberately small so
#    the demo finishes in seconds; drop the size flags for the default.
print("== pretrain: pull entailed pairs together, push hard negatives apart ==")
assert main([
    "pretrain",
    "--triples", str(root / "prep" / "triples.jsonl"),
    "--vocab", str(root / "vv" / "vocab.txt"),
    "--out", str(root / "pre"),
    "--num-layers", "2", "--num-heads", "2", "--hidden-size", "32",
    "--ff-size", "64", "--max-len", "20",
    "--epochs", "8", "--batch-size", "8", "--pooling", "Mean", "--tau", "0.1",
]) == 0
head = (root / "pre" / "loss_log.csv").read_text().splitlines()
print(f"   loss_log.csv: {head[0]}")
print(f"   first epoch:  {head[1]}")
print(f"   last epoch:   {head[-1]}\n")

# 3. Fine-tune a pair classifier.  The synthetic task is decided by a cue
#    word so a linear head on top of the encoder can solve it.
train, dev = [], []
for i in range(80):
    topic = TOPICS[i % len(TOPICS)]
    if i % 2 == 0:
        pair = {"text_a": sentence(topic, 500 + 2 * i), "text_b": "indeed " + sentence(topic, 501 + 2 * i),
                "label": "entailment"}
    else:
        pair = {"text_a": sentence(topic, 500 + 2 * i),
                "text_b": "instead " + sentence(TOPICS[(i + 3) % len(TOPICS)], 501 + 2 * i),
                "label": "contradiction"}
    (train if i < 64 else dev).append(pair)
write_jsonl(root / "train.jsonl", train)
write_jsonl(root / "dev.jsonl", dev)

print("== finetune: linear head over the pretrained encoder ==")
assert main([
    "finetune",
    "--checkpoint", str(root / "pre" / "checkpoint.bin"),
    "--vocab", str(root / "vv" / "vocab.txt"),
    "--train", str(root / "train.jsonl"), "--dev", str(root / "dev.jsonl"),
    "--task", "pair", "--ft-epochs", "7", "--ft-learning-rate", "2e-3",
    "--ft-batch-size", "8", "--out", str(root / "ft"),
]) == 0
metrics = json.loads((root / "ft" / "dev_metrics.json").read_text())
print(f"   dev accuracy {metrics['accuracy']:.2f}, macro F1 {metrics['macro_f1']:.2f}\n")

print("== evaluate: per-record predictions for the dev split ==")
assert main([
    "evaluate", "--model", str(root / "ft" / "model.bin"),
    "--vocab", str(root / "vv" / "vocab.txt"),
    "--data", str(root / "dev.jsonl"), "--out", str(root / "eval"),
]) == 0
first = json.loads((root / "eval" / "predictions.jsonl").read_text().splitlines()[0])
print(f"   first prediction: gold={first['gold']} pred={first['pred']}\n")

# 4. Retrieval: does a fresh sentence land nearest the unseen sentence
#    about the same topic?
write_jsonl(root / "claims.jsonl",
            [{"claim": sentence(t, 700 + i), "gold_index": i} for i, t in enumerate(TOPICS)])
write_jsonl(root / "contexts.jsonl",
            [{"text": sentence(t, 800 + i)} for i, t in enumerate(TOPICS)])
print("== retrieve: accuracy@K over the embedding space ==")
assert main([
    "retrieve", "--checkpoint", str(root / "pre" / "checkpoint.bin"),
    "--vocab", str(root / "vv" / "vocab.txt"),
    "--claims", str(root / "claims.jsonl"), "--contexts", str(root / "contexts.jsonl"),
    "--out", str(root / "ret"),
]) == 0
print()
print(f"all artifacts kept under {root}")
