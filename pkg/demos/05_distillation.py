"""
Teacher, soft labels and a distilled student
============================================

A teacher trained on the small annotated split labels the large distant
split with logits. The student pretrains on distant data against both the
noisy hard labels and the teacher logits, then fine-tunes on annotated data.
Naive adaptation (NA) is the same pipeline without the teacher.

Sizes are somewhat below ``docre.experiments.distill_run`` so the script
finishes in a few minutes on one core.
"""

from dataclasses import replace

from docre.distill import AdaptationPlan, finetune, generate_soft_labels, pretrain_student, train_teacher
from docre.encoder import Vocab
from docre.evaluation import gold_triples, micro_f1
from docre.losses import LossConfig
from docre.model import ModelConfig
from docre.synthetic import noisy_distant_testbed
from docre.training import StageConfig

bed = noisy_distant_testbed(n_train=200, n_distant=300, n_dev=100, flip_rate=0.3,
                            spurious_rate=0.05, seed=0)
vocab = Vocab.from_documents(bed.train + bed.distant + bed.dev)
config, loss = ModelConfig(), LossConfig()
gold = gold_triples(bed.dev)

teacher, _ = train_teacher(bed.train, config, loss, StageConfig(epochs=50, lr=2e-3, batch_size=8),
                           0, vocab, bed.schema)
print("teacher dev F1", round(micro_f1(teacher.predict(bed.dev), gold).f1, 3))

# soft labels are generated once and frozen
store = generate_soft_labels(teacher, bed.distant)
print(len(store), "pair logits stored, digest", store.digest()[:12])

plan = AdaptationPlan(pretrain=StageConfig(epochs=15, lr=2e-3, batch_size=8),
                      finetune=StageConfig(epochs=10, lr=5e-4, batch_size=8))
for strategy in ("NA", "KD_MSE", "KD_KL"):
    p = replace(plan, strategy=strategy)
    student, log = pretrain_student(bed.distant, store if p.needs_soft_labels else None, p,
                                    config, loss, vocab, bed.schema, seed=0)
    last = log[-1]
    student, _ = finetune(student, bed.train, p, loss, seed=0)
    print(f"{strategy:<7} last pretrain step: re {last['re_loss']:.3f} kd {last.get('kd_loss', 0):.3f}"
          f"   dev F1 {micro_f1(student.predict(bed.dev), gold).f1:.3f}")
