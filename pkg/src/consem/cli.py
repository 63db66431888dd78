"""Command-line entry points.

Subcommands mirror the workflow: ``prepare`` mines triples from labeled
pairs, ``build-vocab`` fits the tokenizer, ``pretrain`` runs the
contrastive stage, ``finetune`` and ``evaluate`` handle downstream tasks,
``analyze`` and ``retrieve`` probe the embedding space, and ``sweep``
re-runs the pretrain/finetune/evaluate chain over a hyperparameter grid.

Every command reads an optional ``--config`` file, applies explicit flags
on top, writes deterministic artifacts under ``--out``, and archives the
resolved configuration next to them.  Commands exit 0 only when they
fully succeed (for ``prepare``, also only when no leakage was found).
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

from .analysis import (
    AnalysisReport,
    EmbeddingSet,
    RetrievalCase,
    TOPK_REPORT_VALUES,
    accuracy_at_topk,
    alignment,
    export_attention,
    save_embeddings,
    uniformity,
)
from .checkpoint import load_checkpoint, save_checkpoint
from .config import RunConfig
from .encoder import EncoderWeights, PoolingStrategy, embed_sentences, parameter_names
from .errors import ConfigError, ConsemError, DataError, VocabularyError
from .finetune import (
    TaskKind,
    TaskSpec,
    evaluate_classifier,
    evaluate_mrc,
    finetune_classifier,
    load_model,
    load_task_records,
    save_model,
)
from .pretrain import train, write_loss_csv
from .text import (
    Vocabulary,
    build_vocab,
    leakage_guard,
    load_nli_jsonl,
    load_triples_jsonl,
    prepare_contrastive,
    save_triples_jsonl,
)

__all__ = ["build_parser", "entrypoint", "main"]

_ENCODER_KEYS = ("num_layers", "num_heads", "hidden_size", "ff_size", "max_len", "dropout")
_PRETRAIN_KEYS = (
    "tau",
    "mlm_weight",
    "mask_rate",
    "batch_size",
    "epochs",
    "learning_rate",
    "weight_decay",
    "pooling",
    "data_fraction",
    "validation_fraction",
)
_FINETUNE_KEYS = ("ft_batch_size", "ft_epochs", "ft_learning_rate")

SWEEP_GRIDS = {
    "tau": ("0.001", "0.01", "0.05", "0.1", "0.5", "1"),
    "lambda": ("w/o", "0.001", "0.01", "0.05", "0.1", "0.5", "1"),
    "mask_rate": ("0.1", "0.15", "0.2", "0.3", "0.4", "0.5"),
    "pooling": ("CLS", "Mean", "FirstLast", "Top2"),
    "data_fraction": ("0.25", "0.5", "0.75", "1.0"),
}

# The sweep axis is named for the symbol it varies; "lambda" writes the
# mlm_weight configuration key.
_AXIS_CONFIG_KEY = {"lambda": "mlm_weight"}


def _add_config_keys(parser: argparse.ArgumentParser, keys) -> None:
    for key in keys:
        parser.add_argument(f"--{key.replace('_', '-')}", dest=key, default=None, metavar="V")


def _resolve_config(args: argparse.Namespace, keys=()) -> RunConfig:
    config = RunConfig()
    if getattr(args, "config", None):
        config.update_from_file(args.config)
    config.update({key: getattr(args, key, None) for key in keys})
    if getattr(args, "seed", None) is not None:
        config.update({"seed": args.seed})
    return config


def _out_dir(args: argparse.Namespace) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _load_jsonl(path: str | Path) -> list[tuple[int, dict]]:
    rows = []
    for lineno, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        if not raw.strip():
            continue
        try:
            rows.append((lineno, json.loads(raw)))
        except json.JSONDecodeError as exc:
            raise DataError(f"{path}:{lineno}: malformed JSON ({exc.msg})") from exc
    return rows


def _strings_in(value) -> list[str]:
    if isinstance(value, str):
        return [value]
    if isinstance(value, list):
        return [s for item in value for s in _strings_in(item)]
    if isinstance(value, dict):
        return [s for item in value.values() for s in _strings_in(item)]
    return []


def _encoder_from_checkpoint(ckpt):
    arrays = {name: ckpt.params[name] for name in parameter_names(ckpt.encoder_config)}
    return EncoderWeights.from_arrays(ckpt.encoder_config, arrays)


def _checkpoint_vocab(args) -> tuple:
    ckpt = load_checkpoint(args.checkpoint)
    vocab = Vocabulary.load(args.vocab)
    if ckpt.vocab_hash != vocab.content_hash():
        raise VocabularyError("checkpoint was built with a different vocabulary")
    return ckpt, vocab


def _pooling_for(args, ckpt) -> PoolingStrategy:
    if getattr(args, "pooling", None):
        return PoolingStrategy.parse(args.pooling)
    if ckpt.pretrain_config and "pooling" in ckpt.pretrain_config:
        return PoolingStrategy.parse(ckpt.pretrain_config["pooling"])
    return PoolingStrategy.CLS


def cmd_prepare(args: argparse.Namespace) -> int:
    examples = load_nli_jsonl(args.nli)
    triples, stats = prepare_contrastive(examples)
    out = _out_dir(args)
    save_triples_jsonl(triples, out / "triples.jsonl")
    (out / "stats.json").write_text(stats.to_json() + "\n", encoding="utf-8")
    print(f"prepared {len(triples)} triples from {len(examples)} labeled pairs")
    if args.held_out:
        held = [s for _, obj in _load_jsonl(args.held_out) for s in _strings_in(obj)]
        violations = leakage_guard(triples, held)
        for v in violations:
            print(
                f"leakage: triple {v.triple_index} field {v.fieldname} appears in held-out data: {v.sentence!r}",
                file=sys.stderr,
            )
        if violations:
            return 1
    return 0


def cmd_build_vocab(args: argparse.Namespace) -> int:
    config = _resolve_config(args, keys=("min_count",))
    triples = load_triples_jsonl(args.triples)
    corpus = [text for t in triples for text in (t.sentence1, t.sentence2, t.hard_neg)]
    vocab = build_vocab(corpus, min_count=config.min_count)
    out = _out_dir(args)
    vocab.save(out / "vocab.txt")
    print(f"built vocabulary of {vocab.size} tokens (min_count={config.min_count})")
    return 0


def cmd_pretrain(args: argparse.Namespace) -> int:
    config = _resolve_config(args, keys=_ENCODER_KEYS + _PRETRAIN_KEYS)
    triples = load_triples_jsonl(args.triples)
    vocab = Vocabulary.load(args.vocab)
    encoder_config = config.encoder_config(vocab.size)
    init = None
    if args.init:
        base = load_checkpoint(args.init)
        if base.vocab_hash != vocab.content_hash():
            raise VocabularyError("warm-start checkpoint was built with a different vocabulary")
        if base.encoder_config != encoder_config:
            raise ConfigError("warm-start checkpoint has a different encoder architecture")
        init = _encoder_from_checkpoint(base)
    ckpt, records = train(triples, config.pretrain_config(), vocab, encoder_config, init)
    out = _out_dir(args)
    save_checkpoint(ckpt, out / "checkpoint.bin")
    write_loss_csv(records, out / "loss_log.csv")
    config.write(out / "run_config.txt")
    last_train = [r for r in records if r.split == "train"][-1]
    print(
        f"pretrained for {last_train.epoch} epochs ({ckpt.step} steps); "
        f"final train loss {last_train.combined:.6f}"
    )
    return 0


def cmd_finetune(args: argparse.Namespace) -> int:
    config = _resolve_config(args, keys=_FINETUNE_KEYS + ("task", "labels"))
    ckpt, vocab = _checkpoint_vocab(args)
    task = TaskSpec(kind=TaskKind.parse(config.task), labels=config.label_list())
    train_records = load_task_records(args.train, task)
    dev_records = load_task_records(args.dev, task)
    model, report = finetune_classifier(
        ckpt, task, train_records, dev_records, config.finetune_config(), vocab
    )
    out = _out_dir(args)
    save_model(model, ckpt.pretrain_config, out / "model.bin")
    (out / "dev_metrics.json").write_text(
        json.dumps(report.to_dict(), sort_keys=True, indent=2) + "\n", encoding="utf-8"
    )
    config.write(out / "run_config.txt")
    print(f"fine-tuned on {len(train_records)} records; dev accuracy {report.accuracy:.4f}")
    return 0


def cmd_evaluate(args: argparse.Namespace) -> int:
    model = load_model(args.model)
    vocab = Vocabulary.load(args.vocab)
    if model.vocab_hash != vocab.content_hash():
        raise VocabularyError("model was built with a different vocabulary")
    task = TaskSpec(kind=model.kind, labels=model.labels)
    records = load_task_records(args.data, task)
    if model.kind is TaskKind.MRC:
        predictions, report = evaluate_mrc(model, vocab, records)
    else:
        predictions, report = evaluate_classifier(model, vocab, records)
    out = _out_dir(args)
    lines = [json.dumps(p, sort_keys=True, ensure_ascii=False) for p in predictions]
    (out / "predictions.jsonl").write_text("\n".join(lines) + "\n", encoding="utf-8")
    (out / "metrics.json").write_text(
        json.dumps(report.to_dict(), sort_keys=True, indent=2) + "\n", encoding="utf-8"
    )
    print(f"evaluated {len(records)} records; accuracy {report.accuracy:.4f}")
    return 0


def _retrieval_cases(args, weights, ckpt, vocab, pooling):
    claims = []
    for lineno, obj in _load_jsonl(args.claims):
        if "claim" not in obj or "gold_index" not in obj:
            raise DataError(f"{args.claims}:{lineno}: expected fields 'claim' and 'gold_index'")
        claims.append((str(obj["claim"]), int(obj["gold_index"])))
    contexts = []
    for lineno, obj in _load_jsonl(args.contexts):
        if "text" not in obj:
            raise DataError(f"{args.contexts}:{lineno}: expected field 'text'")
        contexts.append(str(obj["text"]))
    if not contexts:
        raise DataError(f"{args.contexts}: no candidate contexts found")
    for i, (_, gold) in enumerate(claims):
        if not 0 <= gold < len(contexts):
            raise DataError(f"claim {i}: gold_index {gold} out of range for {len(contexts)} contexts")
    claim_vectors = embed_sentences(
        [c for c, _ in claims], weights, ckpt.encoder_config, vocab, pooling
    )
    context_vectors = embed_sentences(contexts, weights, ckpt.encoder_config, vocab, pooling)
    return [
        RetrievalCase(claim=claim_vectors[i], candidates=context_vectors, gold_index=claims[i][1])
        for i in range(len(claims))
    ]


def cmd_retrieve(args: argparse.Namespace) -> int:
    ckpt, vocab = _checkpoint_vocab(args)
    pooling = _pooling_for(args, ckpt)
    weights = _encoder_from_checkpoint(ckpt)
    cases = _retrieval_cases(args, weights, ckpt, vocab, pooling)
    accuracies = {str(k): accuracy_at_topk(cases, k) for k in TOPK_REPORT_VALUES}
    out = _out_dir(args)
    payload = {"accuracy_at_k": accuracies, "claims": len(cases), "pool_size": int(cases[0].candidates.shape[0])}
    (out / "retrieval.json").write_text(
        json.dumps(payload, sort_keys=True, indent=2) + "\n", encoding="utf-8"
    )
    summary = ", ".join(f"@{k}={accuracies[str(k)]:.4f}" for k in TOPK_REPORT_VALUES)
    print(f"retrieval accuracy over {len(cases)} claims: {summary}")
    return 0


def cmd_analyze(args: argparse.Namespace) -> int:
    ckpt, vocab = _checkpoint_vocab(args)
    pooling = _pooling_for(args, ckpt)
    weights = _encoder_from_checkpoint(ckpt)
    examples = load_nli_jsonl(args.pairs)
    sentences: list[str] = []
    seen = set()
    for ex in examples:
        for text in (ex.premise, ex.hypothesis):
            if text not in seen:
                seen.add(text)
                sentences.append(text)
    vectors = embed_sentences(sentences, weights, ckpt.encoder_config, vocab, pooling)
    row = {text: i for i, text in enumerate(sentences)}
    ent_pairs = [
        (vectors[row[ex.premise]], vectors[row[ex.hypothesis]])
        for ex in examples
        if ex.label == "entailment"
    ]
    con_pairs = [
        (vectors[row[ex.premise]], vectors[row[ex.hypothesis]])
        for ex in examples
        if ex.label == "contradiction"
    ]
    accuracy_at_k = None
    if bool(args.claims) != bool(args.contexts):
        raise ConfigError("--claims and --contexts must be given together")
    if args.claims:
        cases = _retrieval_cases(args, weights, ckpt, vocab, pooling)
        accuracy_at_k = {k: accuracy_at_topk(cases, k) for k in TOPK_REPORT_VALUES}
    report = AnalysisReport(
        alignment_entailment=alignment(ent_pairs),
        alignment_contradiction=alignment(con_pairs),
        uniformity=uniformity(vectors),
        accuracy_at_k=accuracy_at_k,
    )
    out = _out_dir(args)
    (out / "analysis.json").write_text(report.to_json() + "\n", encoding="utf-8")
    if bool(args.attention_a) != bool(args.attention_b):
        raise ConfigError("--attention-a and --attention-b must be given together")
    if args.attention_a:
        dump = export_attention(ckpt, vocab, args.attention_a, args.attention_b)
        (out / "attention.json").write_text(
            json.dumps(dump, sort_keys=True, indent=2) + "\n", encoding="utf-8"
        )
    if args.save_embeddings:
        save_embeddings(out / "embeddings.bin", EmbeddingSet(vectors=vectors, texts=sentences))
    print(
        f"analysis over {len(sentences)} sentences: "
        f"alignment(entailment)={report.alignment_entailment:.4f}, "
        f"alignment(contradiction)={report.alignment_contradiction:.4f}, "
        f"uniformity={report.uniformity:.4f}"
    )
    return 0


def _sweep_value(config: RunConfig, axis: str, raw: str) -> None:
    key = _AXIS_CONFIG_KEY.get(axis, axis)
    if raw == "w/o":
        # Table-style shorthand for turning the auxiliary objective off.
        config.update({key: 0.0})
    else:
        config.update({key: raw})


def cmd_sweep(args: argparse.Namespace) -> int:
    base = _resolve_config(args, keys=_ENCODER_KEYS + _PRETRAIN_KEYS + _FINETUNE_KEYS + ("task", "labels"))
    if args.axis not in SWEEP_GRIDS:
        raise ConfigError(f"unknown sweep axis {args.axis!r}; expected one of {sorted(SWEEP_GRIDS)}")
    values = [v.strip() for v in args.values.split(",")] if args.values else list(SWEEP_GRIDS[args.axis])
    triples_path = args.triples or base.triples
    vocab_path = args.vocab or base.vocab
    train_path = args.train or base.train_data
    dev_path = args.dev or base.dev_data
    for name, value in (
        ("triples", triples_path), ("vocab", vocab_path), ("train", train_path), ("dev", dev_path)
    ):
        if not value:
            raise ConfigError(f"sweep needs a {name} file (flag or configuration)")
    triples = load_triples_jsonl(triples_path)
    vocab = Vocabulary.load(vocab_path)
    task = TaskSpec(kind=TaskKind.parse(base.task), labels=base.label_list())
    train_records = load_task_records(train_path, task)
    dev_records = load_task_records(dev_path, task)

    out = _out_dir(args)
    legs_dir = out / "legs"
    legs_dir.mkdir(exist_ok=True)
    rows = []
    failed = False
    for raw in values:
        leg_config = _resolve_config(args, keys=_ENCODER_KEYS + _PRETRAIN_KEYS + _FINETUNE_KEYS + ("task", "labels"))
        leg_dir = legs_dir / f"{args.axis}={raw.replace('/', '_')}"
        leg_dir.mkdir(exist_ok=True)
        try:
            _sweep_value(leg_config, args.axis, raw)
            encoder_config = leg_config.encoder_config(vocab.size)
            ckpt, records = train(triples, leg_config.pretrain_config(), vocab, encoder_config)
            save_checkpoint(ckpt, leg_dir / "checkpoint.bin")
            write_loss_csv(records, leg_dir / "loss_log.csv")
            model, report = finetune_classifier(
                ckpt, task, train_records, dev_records, leg_config.finetune_config(), vocab
            )
            save_model(model, ckpt.pretrain_config, leg_dir / "model.bin")
            (leg_dir / "dev_metrics.json").write_text(
                json.dumps(report.to_dict(), sort_keys=True, indent=2) + "\n", encoding="utf-8"
            )
            rows.append([raw, f"{report.accuracy:.6f}", f"{report.macro_f1:.6f}", "ok"])
            print(f"sweep {args.axis}={raw}: dev accuracy {report.accuracy:.4f}")
        except ConsemError as exc:
            failed = True
            rows.append([raw, "", "", f"error: {type(exc).__name__}"])
            print(f"sweep {args.axis}={raw} failed: {exc}", file=sys.stderr)
    with open(out / "sweep.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["value", "dev_accuracy", "dev_macro_f1", "status"])
        writer.writerows(rows)
    base.write(out / "run_config.txt")
    return 1 if failed else 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="consem",
        description="Contrastive sentence embeddings at desk scale.",
    )
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    def common(sp, out=True):
        sp.add_argument("--config", default=None, metavar="PATH", help="key = value configuration file")
        sp.add_argument("--seed", type=int, default=None, metavar="N", help="override the run seed")
        if out:
            sp.add_argument("--out", required=True, metavar="DIR", help="artifact directory")

    p = sub.add_parser("prepare", help="mine contrastive triples from labeled NLI pairs")
    p.add_argument("--nli", required=True, metavar="PATH", help="JSONL with premise/hypothesis/label")
    p.add_argument("--held-out", default=None, metavar="PATH", help="JSONL whose strings must not leak into triples")
    common(p)
    p.set_defaults(handler=cmd_prepare)

    p = sub.add_parser("build-vocab", help="fit a vocabulary over a triples file")
    p.add_argument("--triples", required=True, metavar="PATH")
    _add_config_keys(p, ("min_count",))
    common(p)
    p.set_defaults(handler=cmd_build_vocab)

    p = sub.add_parser("pretrain", help="contrastive pretraining over triples")
    p.add_argument("--triples", required=True, metavar="PATH")
    p.add_argument("--vocab", required=True, metavar="PATH")
    p.add_argument("--init", default=None, metavar="PATH", help="warm-start from this checkpoint")
    _add_config_keys(p, _ENCODER_KEYS + _PRETRAIN_KEYS)
    common(p)
    p.set_defaults(handler=cmd_pretrain)

    p = sub.add_parser("finetune", help="fine-tune a classifier head on a task")
    p.add_argument("--checkpoint", required=True, metavar="PATH")
    p.add_argument("--vocab", required=True, metavar="PATH")
    p.add_argument("--train", required=True, metavar="PATH")
    p.add_argument("--dev", required=True, metavar="PATH")
    _add_config_keys(p, _FINETUNE_KEYS + ("task", "labels"))
    common(p)
    p.set_defaults(handler=cmd_finetune)

    p = sub.add_parser("evaluate", help="run a fine-tuned model over a dataset")
    p.add_argument("--model", required=True, metavar="PATH")
    p.add_argument("--vocab", required=True, metavar="PATH")
    p.add_argument("--data", required=True, metavar="PATH")
    common(p)
    p.set_defaults(handler=cmd_evaluate)

    p = sub.add_parser("analyze", help="alignment, uniformity, and attention diagnostics")
    p.add_argument("--checkpoint", required=True, metavar="PATH")
    p.add_argument("--vocab", required=True, metavar="PATH")
    p.add_argument("--pairs", required=True, metavar="PATH", help="labeled pairs for alignment statistics")
    p.add_argument("--claims", default=None, metavar="PATH")
    p.add_argument("--contexts", default=None, metavar="PATH")
    p.add_argument("--attention-a", default=None, metavar="TEXT")
    p.add_argument("--attention-b", default=None, metavar="TEXT")
    p.add_argument("--pooling", default=None, metavar="NAME")
    p.add_argument("--save-embeddings", action="store_true")
    common(p)
    p.set_defaults(handler=cmd_analyze)

    p = sub.add_parser("retrieve", help="evidence retrieval accuracy at top K")
    p.add_argument("--checkpoint", required=True, metavar="PATH")
    p.add_argument("--vocab", required=True, metavar="PATH")
    p.add_argument("--claims", required=True, metavar="PATH")
    p.add_argument("--contexts", required=True, metavar="PATH")
    p.add_argument("--pooling", default=None, metavar="NAME")
    common(p)
    p.set_defaults(handler=cmd_retrieve)

    p = sub.add_parser("sweep", help="grid over one hyperparameter, pretrain + finetune per value")
    p.add_argument("--axis", required=True, metavar="KEY")
    p.add_argument("--values", default=None, metavar="V1,V2,...")
    p.add_argument("--triples", default=None, metavar="PATH")
    p.add_argument("--vocab", default=None, metavar="PATH")
    p.add_argument("--train", default=None, metavar="PATH")
    p.add_argument("--dev", default=None, metavar="PATH")
    _add_config_keys(p, _ENCODER_KEYS + _PRETRAIN_KEYS + _FINETUNE_KEYS + ("task", "labels"))
    common(p)
    p.set_defaults(handler=cmd_sweep)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.handler(args)
    except ConsemError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def entrypoint() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entrypoint()
