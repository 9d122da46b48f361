import math
from dataclasses import replace

import pytest
import torch

from docre.corpus import Document
from docre.distill import (
    AdaptationPlan, FingerprintMismatchError, SoftLabelStore, finetune, generate_soft_labels,
    kd_kl_loss, kd_mse_loss, model_fingerprint, pretrain_student, train_teacher,
)
from docre.encoder import Vocab
from docre.evaluation import gold_triples, micro_f1
from docre.losses import LossConfig, decide_tensor
from docre.model import ModelConfig
from docre.synthetic import corrupt_labels, noisy_distant_testbed, overfit_corpus
from docre.training import StageConfig


def test_mse_examples():
    t = torch.randn(5)
    assert kd_mse_loss(t, t).item() == 0
    assert kd_mse_loss(t + 1, t).item() == pytest.approx(1.0)
    assert kd_mse_loss(torch.tensor([0.0, 2.0]), torch.tensor([1.0, 0.0])).item() == pytest.approx(2.5)
    with pytest.raises(ValueError):
        kd_mse_loss(torch.zeros(3), torch.zeros(4))


def test_kl_examples():
    t = torch.randn(6, dtype=torch.float64)
    assert kd_kl_loss(t, t).item() == pytest.approx(0, abs=1e-12)
    teacher = torch.zeros(5, dtype=torch.float64)
    teacher[2] = 10
    student = torch.zeros(5, dtype=torch.float64)
    p = teacher.softmax(-1)
    q = student.softmax(-1)
    direct = sum(p[i] * math.log(p[i] / q[i]) for i in range(5))
    assert kd_kl_loss(student, teacher).item() == pytest.approx(float(direct), rel=1e-9)
    assert direct == pytest.approx(math.log(5), abs=0.01)
    g = torch.Generator().manual_seed(0)
    for _ in range(100):
        assert kd_kl_loss(torch.randn(7, generator=g), torch.randn(7, generator=g)).item() >= -1e-7
    with pytest.raises(ValueError):
        kd_kl_loss(torch.zeros(3), torch.zeros(4))


def test_store_round_trip(tmp_path):
    store = SoftLabelStore(4, "abc")
    g = torch.Generator().manual_seed(1)
    for s, o in [(0, 1), (1, 0)]:
        store.put("doc", s, o, torch.randn(4, generator=g).numpy() * 1e3)
    store.save(tmp_path / "s.jsonl")
    back = SoftLabelStore.load(tmp_path / "s.jsonl")
    assert back == store and back.digest() == store.digest()
    with pytest.raises(ValueError):
        store.put("doc", 0, 1, [1.0, 2.0])


def test_store_compatibility():
    store = SoftLabelStore(4, "abc")
    store.check_compatible(4, "abc")
    with pytest.raises(FingerprintMismatchError):
        store.check_compatible(5)
    with pytest.raises(FingerprintMismatchError):
        store.check_compatible(4, "xyz")


def test_empty_distant_gives_empty_store(memorized):
    ex, _, _ = memorized
    assert len(generate_soft_labels(ex, [])) == 0


def test_overfit_teacher_soft_labels(memorized):
    ex, docs, schema = memorized
    store = generate_soft_labels(ex, docs)
    assert len(store) == sum(len(d.candidate_pairs()) for d in docs)
    hit = total = 0
    for d in docs:
        gold_pairs = {(h, t) for h, _, t in d.facts}
        logits = store.doc_tensor(d)
        for h, t in gold_pairs:
            want = {schema.index(r) for hh, r, tt in d.facts if (hh, tt) == (h, t)}
            got = set(decide_tensor(logits[h, t]).nonzero().flatten().tolist())
            hit += got == want
            total += 1
    assert hit / total >= 0.95


def test_missing_soft_label_names_document(memorized):
    ex, docs, _ = memorized
    store = generate_soft_labels(ex, docs[:1])
    with pytest.raises(KeyError, match=docs[1].doc_id):
        store.doc_tensor(docs[1])


def _bed():
    bed = noisy_distant_testbed(n_train=6, n_distant=6, n_dev=4, seed=3)
    return bed, Vocab.from_documents(bed.train + bed.distant + bed.dev)


def _plan(strategy, kd_weight=1.0):
    return AdaptationPlan(strategy, kd_weight, StageConfig(epochs=2, lr=1e-3, batch_size=2),
                          StageConfig(epochs=1, lr=1e-3, batch_size=2))


def test_additivity_and_kd_weight_zero():
    bed, vocab = _bed()
    config, loss = ModelConfig(), LossConfig()
    teacher, _ = train_teacher(bed.train, config, loss, StageConfig(epochs=1, batch_size=2), 7,
                               vocab, bed.schema)
    store = generate_soft_labels(teacher, bed.distant)
    kd, log = pretrain_student(bed.distant, store, _plan("KD_MSE"), config, loss, vocab, bed.schema, 0)
    for r in log:
        assert r["loss"] == pytest.approx(r["kd_loss"] + r["re_loss"], abs=1e-6)
    zero, log0 = pretrain_student(bed.distant, store, _plan("KD_MSE", 0.0), config, loss, vocab,
                                  bed.schema, 0)
    na, log_na = pretrain_student(bed.distant, None, _plan("NA"), config, loss, vocab, bed.schema, 0)
    assert [r["re_loss"] for r in log0] == [r["re_loss"] for r in log_na]
    for (k, a), (_, b) in zip(zero.model.state_dict().items(), na.model.state_dict().items()):
        assert torch.equal(a, b), k


def test_kd_starts_at_zero_for_own_logits():
    bed, vocab = _bed()
    config = ModelConfig(dropout=0.0)
    from docre.training import RelationExtractor
    student = RelationExtractor.create(config, vocab, bed.schema, 0)
    store = generate_soft_labels(student, bed.distant)
    _, log = pretrain_student(bed.distant, store, _plan("KD_MSE"), config, LossConfig(), vocab,
                              bed.schema, 0, student=student)
    assert log[0]["kd_raw"] == pytest.approx(0.0, abs=1e-10)


def test_kd_requires_store_and_matching_classes():
    bed, vocab = _bed()
    with pytest.raises(ValueError):
        pretrain_student(bed.distant, None, _plan("KD_KL"), ModelConfig(), LossConfig(), vocab,
                         bed.schema, 0)
    with pytest.raises(FingerprintMismatchError):
        pretrain_student(bed.distant, SoftLabelStore(99), _plan("KD_MSE"), ModelConfig(),
                         LossConfig(), vocab, bed.schema, 0)


def test_plan_validation():
    with pytest.raises(ValueError):
        AdaptationPlan("KD")
    with pytest.raises(ValueError):
        AdaptationPlan(kd_weight=-1)
    assert not AdaptationPlan("NA").needs_soft_labels
    plan = AdaptationPlan()
    assert (plan.pretrain.lr, plan.pretrain.epochs) == (1e-5, 2)
    assert (plan.finetune.lr, plan.finetune.epochs) == (1e-6, 10)


def test_teacher_errors_and_determinism():
    with pytest.raises(ValueError):
        train_teacher([], ModelConfig(), LossConfig(), StageConfig(), 0)
    bed, vocab = _bed()
    stage = StageConfig(epochs=2, lr=1e-3, batch_size=2)
    a, log_a = train_teacher(bed.train, ModelConfig(), LossConfig(), stage, 0, vocab, bed.schema)
    b, log_b = train_teacher(bed.train, ModelConfig(), LossConfig(), stage, 0, vocab, bed.schema)
    assert log_a[-1]["loss"] == pytest.approx(log_b[-1]["loss"], abs=1e-6)
    assert model_fingerprint(a) == model_fingerprint(b)


def test_finetune_perfect_model_does_not_degrade(memorized):
    ex, docs, schema = memorized
    student = ex.clone()
    before = micro_f1(student.predict(docs), gold_triples(docs)).f1
    plan = AdaptationPlan(finetune=StageConfig(epochs=3, lr=1e-6, batch_size=4))
    finetune(student, docs, plan, LossConfig(), 0)
    assert micro_f1(student.predict(docs), gold_triples(docs)).f1 >= before


def test_corruption_rates():
    import random
    docs, schema = overfit_corpus(200, 5, seed=2)
    rng = random.Random(0)
    noisy = [corrupt_labels(d, schema, rng, flip_rate=0.3, spurious_rate=0.0) for d in docs]
    kept = sum(len(n.facts) for n in noisy) / sum(len(d.facts) for d in docs)
    assert 0.63 < kept < 0.77
    assert all(n.is_distant and n.facts <= d.facts for n, d in zip(noisy, docs))
