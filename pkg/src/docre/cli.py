"""Command-line pipeline: prepare -> train-teacher -> distill -> finetune ->
evaluate / predict / error-report.

Every command reads one JSON run config (``--config``). Two environment
variables are honoured: ``DOCRE_OUTPUT_DIR`` overrides ``paths.output_dir``
and ``DOCRE_NUM_THREADS`` sets the torch thread count.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import random
import sys
from dataclasses import asdict
from pathlib import Path
from typing import Sequence

import torch

from ._io import atomic_write_text
from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .config import RunConfig, synthetic_preset
from .corpus import (
    Document, RelationSchema, build_fact_index, corpus_statistics, load_corpus, load_schema,
    save_corpus, schema_from_corpus,
)
from .distill import (
    FingerprintMismatchError, SoftLabelStore, finetune, generate_soft_labels, model_fingerprint,
    pretrain_student,
)
from .encoder import Vocab
from .evaluation import (
    categorize, error_categories, evaluate, gold_triples, ign_f1, load_predictions, micro_f1,
    save_predictions,
)
from .synthetic import noisy_distant_testbed
from .training import RelationExtractor, train_stage

log = logging.getLogger("docre")

OUTPUT_ENV = "DOCRE_OUTPUT_DIR"
THREADS_ENV = "DOCRE_NUM_THREADS"

TEACHER_CKPT = "teacher.ckpt.npz"
PRETRAINED_CKPT = "student_pretrained.ckpt.npz"
FINETUNED_CKPT = "finetuned.ckpt.npz"
SOFT_LABELS = "soft_labels.jsonl"


class CLIError(Exception):
    """A user-facing failure; reported without a traceback."""


# -- helpers -----------------------------------------------------------------

def _load_config(path: str | None) -> RunConfig:
    if path is None:
        config = RunConfig()
    else:
        _require_file(path, "config")
        config = RunConfig.load(path)
    override = os.environ.get(OUTPUT_ENV)
    if override:
        config.paths.output_dir = override
    return config


def _require_file(path: str | None, what: str) -> Path:
    if not path:
        raise CLIError(f"no {what} path configured")
    p = Path(path)
    if not p.is_file():
        raise CLIError(f"missing {what} file: {p}")
    return p


def _check_inputs(config: RunConfig, *required: str) -> None:
    """Resolve every required corpus path before any work starts."""
    for name in required:
        _require_file(getattr(config.paths, name), f"{name} corpus")


def _corpus(config: RunConfig, name: str) -> list[Document]:
    path = _require_file(getattr(config.paths, name), f"{name} corpus")
    return load_corpus(path, is_distant=True if name == "distant" else None)


def _optional_corpus(config: RunConfig, name: str) -> list[Document] | None:
    path = getattr(config.paths, name)
    return _corpus(config, name) if path else None


def _schema(config: RunConfig, train: Sequence[Document]) -> RelationSchema:
    if config.paths.schema:
        base = load_schema(_require_file(config.paths.schema, "schema"))
    else:
        base = schema_from_corpus(train)
    return base.with_frequent_set(train)


def _vocab(config: RunConfig) -> Vocab:
    docs: list[Document] = []
    for name in ("train", "dev", "test", "distant"):
        docs += _optional_corpus(config, name) or []
    return Vocab.from_documents(docs)


def _out(config: RunConfig) -> Path:
    out = Path(config.paths.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _check_classes(ckpt: Checkpoint, config: RunConfig, train: Sequence[Document] | None) -> None:
    if config.paths.schema:
        expected = load_schema(_require_file(config.paths.schema, "schema")).num_classes
    elif train is not None:
        expected = schema_from_corpus(train).num_classes
    else:
        return
    if expected != ckpt.num_classes:
        raise CLIError(f"class-count mismatch: checkpoint has {ckpt.num_classes} classes, "
                       f"config implies {expected}")


def _epoch_metrics(dev, train):
    if not dev:
        return None
    index = build_fact_index(train) if train else None
    by_id = {d.doc_id: d for d in dev}
    gold = gold_triples(dev)

    def on_epoch(epoch: int, ex: RelationExtractor) -> dict:
        pred = ex.predict(dev)
        f1 = micro_f1(pred, gold).f1
        ign = ign_f1(pred, gold, index, by_id).f1 if index is not None else f1
        log.info("epoch %d: dev F1 %.4f Ign_F1 %.4f", epoch, f1, ign)
        return {"dev_f1": f1, "dev_ign_f1": ign}

    return on_epoch


def _write_log(path: Path, records: list[dict]) -> None:
    atomic_write_text(path, "".join(json.dumps(r, sort_keys=True) + "\n" for r in records))


def _steps(records: list[dict]) -> int:
    return sum(1 for r in records if "re_loss" in r)


# -- commands ----------------------------------------------------------------

def cmd_prepare(args) -> int:
    if args.synthetic:
        out = Path(args.synthetic)
        bed = noisy_distant_testbed(n_train=200, n_distant=600, n_dev=200, seed=args.seed)
        save_corpus(bed.train, out / "train.json")
        save_corpus(bed.dev[:100], out / "dev.json")
        save_corpus(bed.dev[100:], out / "test.json")
        save_corpus(bed.distant, out / "distant.json")
        atomic_write_text(out / "schema.json", json.dumps(bed.schema.to_json(), indent=1))
        config = synthetic_preset(str(out), seed=args.seed)
        config.paths.schema = str(out / "schema.json")
        config.save(out / "config.json")
        print(f"wrote synthetic corpora and {out / 'config.json'}")
        return 0

    config = _load_config(args.config)
    _check_inputs(config, "train")
    train = _corpus(config, "train")
    schema = _schema(config, train)
    out = _out(config)
    stats = {}
    for name in ("train", "dev", "test", "distant"):
        docs = _optional_corpus(config, name)
        if docs:
            unknown = {r for d in docs for _, r, _ in d.facts} - set(schema.relation_ids)
            if unknown:
                raise CLIError(f"{name} corpus uses relations outside the schema: {sorted(unknown)[:5]}")
            stats[name] = asdict(corpus_statistics(docs))
    atomic_write_text(out / "schema.json", json.dumps(schema.to_json(), indent=1))
    atomic_write_text(out / "stats.json", json.dumps(stats, indent=1))
    for name, s in stats.items():
        print(f"{name:<8} docs={s['num_docs']} relations={s['num_relations']} "
              f"entities/doc={s['avg_entities_per_doc']:.2f} facts/doc={s['avg_relations_per_doc']:.2f}")
    return 0


def cmd_train_teacher(args) -> int:
    config = _load_config(args.config)
    _check_inputs(config, "train")
    train, dev = _corpus(config, "train"), _optional_corpus(config, "dev")
    schema, vocab = _schema(config, train), _vocab(config)
    out = _out(config)
    teacher = RelationExtractor.create(config.model, vocab, schema, config.seed)
    records = train_stage(teacher, train, config.teacher, config.loss, config.seed, "teacher",
                          on_epoch=_epoch_metrics(dev, train))
    path = save_checkpoint(out / TEACHER_CKPT, teacher, "teacher", _steps(records),
                           config.to_json())
    _write_log(out / "teacher_log.jsonl", records)
    print(path)
    return 0


def _soft_labels(config: RunConfig, teacher_path: Path, distant, class_count: int,
                 out: Path) -> SoftLabelStore:
    teacher = load_checkpoint(teacher_path)
    if teacher.num_classes != class_count:
        raise FingerprintMismatchError(
            f"teacher checkpoint has {teacher.num_classes} classes, config implies {class_count}")
    fingerprint = model_fingerprint(teacher.extractor)
    store_path = out / SOFT_LABELS
    digest_path = store_path.with_suffix(".sha256")
    if store_path.exists():
        store = SoftLabelStore.load(store_path)
        store.check_compatible(class_count, fingerprint)
        recorded = digest_path.read_text().strip() if digest_path.exists() else None
        if recorded != store.digest():
            raise FingerprintMismatchError(f"{store_path}: content hash does not match {digest_path}")
        missing = [d.doc_id for d in distant
                   if any((d.doc_id, s, o) not in store for s, o in d.candidate_pairs())]
        if missing:
            raise FingerprintMismatchError(f"{store_path}: no soft labels for document {missing[0]!r}")
        log.info("reusing soft-label store %s", store_path)
        return store
    store = generate_soft_labels(teacher.extractor, distant, fingerprint)
    store.save(store_path)
    atomic_write_text(digest_path, store.digest() + "\n")
    return store


def cmd_distill(args) -> int:
    config = _load_config(args.config)
    plan = config.adaptation
    _check_inputs(config, "train", "distant")
    teacher_path = None
    if plan.needs_soft_labels:
        teacher_path = Path(args.teacher or Path(config.paths.output_dir) / TEACHER_CKPT)
        _require_file(str(teacher_path), "teacher checkpoint")
    train, distant = _corpus(config, "train"), _corpus(config, "distant")
    out = _out(config)
    if teacher_path is not None:
        # the student shares the teacher's vocabulary and schema
        base = load_checkpoint(teacher_path).extractor
        vocab, schema = base.vocab, base.schema
        _check_classes(Checkpoint(base, "teacher"), config, train)
        store = _soft_labels(config, teacher_path, distant, schema.num_classes, out)
    else:
        vocab, schema, store = _vocab(config), _schema(config, train), None
    student, records = pretrain_student(distant, store, plan, config.model, config.loss, vocab,
                                        schema, config.seed)
    path = save_checkpoint(out / PRETRAINED_CKPT, student, "pretrained_student", _steps(records),
                           config.to_json(), {"strategy": plan.strategy})
    _write_log(out / "pretrain_log.jsonl", records)
    print(path)
    return 0


def cmd_finetune(args) -> int:
    config = _load_config(args.config)
    _check_inputs(config, "train")
    ckpt_path = _require_file(args.checkpoint or str(Path(config.paths.output_dir) / PRETRAINED_CKPT),
                              "checkpoint")
    train, dev = _corpus(config, "train"), _optional_corpus(config, "dev")
    ckpt = load_checkpoint(ckpt_path)
    _check_classes(ckpt, config, train)
    out = _out(config)
    student, records = finetune(ckpt.extractor, train, config.adaptation, config.loss, config.seed,
                                on_epoch=_epoch_metrics(dev, train))
    path = save_checkpoint(out / FINETUNED_CKPT, student, "finetuned",
                           ckpt.step + _steps(records), config.to_json(), ckpt.extra)
    _write_log(out / "finetune_log.jsonl", records)
    print(path)
    return 0


def _split_docs(config: RunConfig, split: str) -> tuple[str, list[Document]]:
    if split in ("train", "dev", "test", "distant"):
        return split, _corpus(config, split)
    return Path(split).stem, load_corpus(_require_file(split, "corpus"))


def cmd_evaluate(args) -> int:
    config = _load_config(args.config)
    ckpt = load_checkpoint(_require_file(args.checkpoint, "checkpoint"))
    name, docs = _split_docs(config, args.split)
    train = _optional_corpus(config, "train")
    _check_classes(ckpt, config, None)
    ex = ckpt.extractor
    unknown = {r for d in docs for _, r, _ in d.facts} - set(ex.schema.relation_ids)
    if unknown:
        raise CLIError(f"class-count mismatch: {name} uses relations unknown to the checkpoint: "
                       f"{sorted(unknown)[:5]}")
    pred = ex.predict(docs)
    index = build_fact_index(train) if train else None
    report = evaluate(pred, docs, ex.schema, index, binary=args.binary)
    out = Path(args.out) if args.out else _out(config)
    atomic_write_text(out / f"report_{name}.json", json.dumps(report.to_json(), indent=1, sort_keys=True))
    save_predictions(pred, out / f"predictions_{name}.json")
    print(report.table())
    return 0


def cmd_predict(args) -> int:
    ckpt = load_checkpoint(_require_file(args.checkpoint, "checkpoint"))
    docs = load_corpus(_require_file(args.input, "input corpus"))
    save_predictions(ckpt.extractor.predict(docs), args.output)
    print(args.output)
    return 0


def cmd_error_report(args) -> int:
    pred = load_predictions(_require_file(args.predictions, "predictions"))
    docs = load_corpus(_require_file(args.gold, "gold corpus"))
    known = {d.doc_id for d in docs}
    stray = sorted({t[0] for t in pred} - known)
    if stray:
        raise CLIError(f"doc_id mismatch: predictions mention {len(stray)} document(s) absent "
                       f"from the gold split, e.g. {stray[0]!r}")
    gold = gold_triples(docs)
    counts = error_categories(pred, gold)
    if counts.C + counts.W + counts.MR != len(pred):
        raise CLIError("conservation violated: C + W + MR != |pred|")
    pct = counts.percentages(args.base)
    lines = [f"{'category':<22}{'count':>8}{'%':>9}"]
    for key, value in counts.as_dict().items():
        share = f"{pct[key]:8.2f}" if key in pct else ""
        lines.append(f"{key:<22}{value:>8} {share}")
    lines.append(f"conservation: C + W + MR = {counts.C + counts.W + counts.MR} = |pred| ✓")
    print("\n".join(lines))
    rng = random.Random(args.seed)
    dump = {}
    for cat, triples in categorize(pred, gold).items():
        ordered = sorted(triples)
        dump[cat] = [list(t) for t in (rng.sample(ordered, args.samples)
                                       if len(ordered) > args.samples else ordered)]
    if args.out:
        atomic_write_text(Path(args.out), json.dumps({"counts": counts.as_dict(), "percent": pct,
                                                      "samples": dump}, indent=1))
    else:
        for cat, triples in dump.items():
            for t in triples:
                print(cat, *t, sep="\t")
    return 0


# -- entry point -------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="docre", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("prepare", help="validate corpora and write schema/statistics, "
                                       "or generate the synthetic corpora")
    p.add_argument("--config")
    p.add_argument("--synthetic", metavar="DIR", help="write synthetic corpora and a preset config")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_prepare)

    p = sub.add_parser("train-teacher", help="train on the annotated split")
    p.add_argument("--config", required=True)
    p.set_defaults(func=cmd_train_teacher)

    p = sub.add_parser("distill", help="pretrain a student on distant data (NA / KD_MSE / KD_KL)")
    p.add_argument("--config", required=True)
    p.add_argument("--teacher", help=f"teacher checkpoint (default: <output_dir>/{TEACHER_CKPT})")
    p.set_defaults(func=cmd_distill)

    p = sub.add_parser("finetune", help="fine-tune a checkpoint on the annotated split")
    p.add_argument("--config", required=True)
    p.add_argument("--checkpoint", help=f"default: <output_dir>/{PRETRAINED_CKPT}")
    p.set_defaults(func=cmd_finetune)

    p = sub.add_parser("evaluate", help="score a checkpoint on a split")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--split", default="dev", help="train/dev/test/distant or a corpus path")
    p.add_argument("--config")
    p.add_argument("--binary", action="store_true", help="also report binary (pair-level) F1")
    p.add_argument("--out", help="directory for the report and predictions")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("predict", help="write leaderboard-format predictions")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("error-report", help="C/W/MS/MR table for a prediction file")
    p.add_argument("--predictions", required=True)
    p.add_argument("--gold", required=True)
    p.add_argument("--base", choices=("union", "union_pair"), default="union")
    p.add_argument("--samples", type=int, default=5, help="triples dumped per category")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="write counts and samples as JSON")
    p.set_defaults(func=cmd_error_report)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    threads = os.environ.get(THREADS_ENV)
    if threads:
        torch.set_num_threads(int(threads))
    try:
        return args.func(args)
    except (CLIError, FingerprintMismatchError, FileNotFoundError, ValueError, KeyError) as err:
        print(f"docre {args.command}: error: {err}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
