"""Desk-scale synthetic experiments: two-hop benefit of axial attention,
long-tail behaviour of AFL against ATL, and distillation against naive
adaptation on noisy distant data.

Each function trains from scratch for one seed and returns the metrics it
compares, so callers can take medians over seeds.
"""

from __future__ import annotations

import statistics
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

from .distill import AdaptationPlan, generate_soft_labels, pretrain_student, finetune, train_teacher
from .encoder import Vocab
from .evaluation import gold_triples, infer_f1, micro_f1, split_f1
from .losses import LossConfig
from .model import ModelConfig
from .synthetic import composition_corpus, longtail_corpus, noisy_distant_testbed
from .training import RelationExtractor, StageConfig, train_stage


@dataclass
class TwoHopSettings:
    n_train: int = 200
    n_dev: int = 100
    stage: StageConfig = field(default_factory=lambda: StageConfig(epochs=40, lr=2e-3, batch_size=8))


def two_hop_run(seed: int, use_axial: bool, settings: TwoHopSettings | None = None) -> dict:
    settings = settings or TwoHopSettings()
    train, schema = composition_corpus(settings.n_train, seed=1000 + seed)
    dev, _ = composition_corpus(settings.n_dev, seed=2000 + seed)
    vocab = Vocab.from_documents(train + dev)
    ex = RelationExtractor.create(ModelConfig(use_axial=use_axial), vocab, schema, seed)
    train_stage(ex, train, settings.stage, LossConfig(), seed, "train")
    pred, gold = ex.predict(dev), gold_triples(dev)
    return {"seed": seed, "use_axial": use_axial,
            "infer_f1": infer_f1(pred, gold).f1, "f1": micro_f1(pred, gold).f1}


@dataclass
class LongTailSettings:
    n_train: int = 600
    n_dev: int = 200
    skew: float = 10.0
    stage: StageConfig = field(default_factory=lambda: StageConfig(epochs=30, lr=2e-3, batch_size=8))


def long_tail_run(seed: int, variant: str, settings: LongTailSettings | None = None) -> dict:
    settings = settings or LongTailSettings()
    train, schema = longtail_corpus(settings.n_train, skew=settings.skew, seed=1000 + seed)
    dev, _ = longtail_corpus(settings.n_dev, skew=settings.skew, seed=2000 + seed)
    vocab = Vocab.from_documents(train + dev)
    ex = RelationExtractor.create(ModelConfig(), vocab, schema, seed)
    train_stage(ex, train, settings.stage, LossConfig(variant=variant), seed, "train")
    pred, gold = ex.predict(dev), gold_triples(dev)
    freq, tail = split_f1(pred, gold, schema)
    return {"seed": seed, "variant": variant, "tail_f1": tail.f1, "frequent_f1": freq.f1,
            "f1": micro_f1(pred, gold).f1}


@dataclass
class DistillSettings:
    n_train: int = 200
    n_distant: int = 600
    n_dev: int = 100
    flip_rate: float = 0.3
    spurious_rate: float = 0.05
    teacher: StageConfig = field(default_factory=lambda: StageConfig(epochs=60, lr=2e-3, batch_size=8))
    plan: AdaptationPlan = field(default_factory=lambda: AdaptationPlan(
        pretrain=StageConfig(epochs=15, lr=2e-3, batch_size=8),
        finetune=StageConfig(epochs=10, lr=5e-4, batch_size=8)))


def distill_run(seed: int, strategies: Sequence[str] = ("NA", "KD_MSE"),
                settings: DistillSettings | None = None) -> dict:
    """Train one teacher, then one student per strategy on the same testbed."""
    settings = settings or DistillSettings()
    bed = noisy_distant_testbed(settings.n_train, settings.n_distant, settings.n_dev,
                                flip_rate=settings.flip_rate,
                                spurious_rate=settings.spurious_rate, seed=1000 + seed)
    vocab = Vocab.from_documents(bed.train + bed.distant + bed.dev)
    config, loss = ModelConfig(), LossConfig()
    gold = gold_triples(bed.dev)
    out: dict = {"seed": seed}
    store = None
    if any(s != "NA" for s in strategies):
        teacher, _ = train_teacher(bed.train, config, loss, settings.teacher, seed, vocab, bed.schema)
        out["teacher_f1"] = micro_f1(teacher.predict(bed.dev), gold).f1
        store = generate_soft_labels(teacher, bed.distant)
    for strategy in strategies:
        plan = replace(settings.plan, strategy=strategy)
        student, _ = pretrain_student(bed.distant, store if plan.needs_soft_labels else None,
                                      plan, config, loss, vocab, bed.schema, seed)
        student, _ = finetune(student, bed.train, plan, loss, seed)
        out[strategy] = micro_f1(student.predict(bed.dev), gold).f1
    return out


def median_over_seeds(run: Callable[[int], float], seeds: Sequence[int]) -> tuple[float, list[float]]:
    values = [run(s) for s in seeds]
    return statistics.median(values), values
