"""Distant-supervision adaptation: naive pretraining, and knowledge
distillation from a teacher's logits with an MSE or KL objective."""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np
import torch
import torch.nn.functional as F

from ._io import atomic_write_text
from .corpus import Document, RelationSchema
from .encoder import Vocab
from .losses import LossConfig
from .model import ModelConfig
from .training import RelationExtractor, StageConfig, train_stage

STRATEGIES = ("NA", "KD_MSE", "KD_KL")
STORE_VERSION = 1


class FingerprintMismatchError(ValueError):
    pass


def _check_shapes(student, teacher):
    if student.shape != teacher.shape:
        raise ValueError(f"student logits {tuple(student.shape)} and teacher logits "
                         f"{tuple(teacher.shape)} differ in shape")


def kd_mse_loss(student: torch.Tensor, teacher: torch.Tensor) -> torch.Tensor:
    """Mean squared error over every logit (TH included), averaged over pairs."""
    _check_shapes(student, teacher)
    return ((student - teacher) ** 2).mean()


def kd_kl_loss(student: torch.Tensor, teacher: torch.Tensor) -> torch.Tensor:
    """KL(softmax(teacher) || softmax(student)) over all c classes, mean over pairs."""
    _check_shapes(student, teacher)
    log_p = F.log_softmax(teacher, dim=-1)
    log_q = F.log_softmax(student, dim=-1)
    kl = (log_p.exp() * (log_p - log_q)).sum(-1)
    return kl.mean()


KD_LOSSES = {"KD_MSE": kd_mse_loss, "KD_KL": kd_kl_loss}


class SoftLabelStore:
    """Teacher logits per (doc_id, subject, object), stored as float32.

    File layout (JSON lines): a header line
    ``{"version", "class_count", "teacher_fingerprint"}`` followed by one
    ``{"doc_id", "s", "o", "logits": [c floats]}`` record per pair.
    """

    def __init__(self, class_count: int, teacher_fingerprint: str = ""):
        self.class_count = class_count
        self.teacher_fingerprint = teacher_fingerprint
        self._logits: dict[tuple[str, int, int], np.ndarray] = {}

    def __len__(self) -> int:
        return len(self._logits)

    def __contains__(self, key) -> bool:
        return key in self._logits

    def __getitem__(self, key: tuple[str, int, int]) -> np.ndarray:
        return self._logits[key]

    def keys(self):
        return self._logits.keys()

    def put(self, doc_id: str, s: int, o: int, logits) -> None:
        arr = np.asarray(logits, dtype=np.float32).reshape(-1)
        if arr.shape[0] != self.class_count:
            raise ValueError(f"expected {self.class_count} logits, got {arr.shape[0]}")
        self._logits[(doc_id, int(s), int(o))] = arr

    def doc_tensor(self, doc: Document) -> torch.Tensor:
        """n x n x c teacher logits with a zero diagonal."""
        n = doc.n_entities
        out = torch.zeros(n, n, self.class_count)
        for s, o in doc.candidate_pairs():
            key = (doc.doc_id, s, o)
            if key not in self._logits:
                raise KeyError(f"no soft label for pair ({s}, {o}) of document {doc.doc_id!r}")
            out[s, o] = torch.from_numpy(self._logits[key])
        return out

    def check_compatible(self, class_count: int, fingerprint: str | None = None) -> None:
        if class_count != self.class_count:
            raise FingerprintMismatchError(
                f"soft labels carry {self.class_count} classes, model expects {class_count}")
        if fingerprint is not None and fingerprint != self.teacher_fingerprint:
            raise FingerprintMismatchError(
                f"teacher fingerprint mismatch: soft labels come from {self.teacher_fingerprint!r}, "
                f"expected {fingerprint!r}")

    def __eq__(self, other) -> bool:
        if not isinstance(other, SoftLabelStore):
            return NotImplemented
        return (self.class_count == other.class_count
                and self.teacher_fingerprint == other.teacher_fingerprint
                and self._logits.keys() == other._logits.keys()
                and all(np.array_equal(v, other._logits[k]) for k, v in self._logits.items()))

    def save(self, path: str | Path) -> None:
        path = Path(path)
        header = {"version": STORE_VERSION, "class_count": self.class_count,
                  "teacher_fingerprint": self.teacher_fingerprint}
        lines = [json.dumps(header)]
        for (doc_id, s, o), arr in sorted(self._logits.items()):
            # float32 -> python float is exact, and repr round-trips
            lines.append(json.dumps({"doc_id": doc_id, "s": s, "o": o,
                                     "logits": [float(x) for x in arr]}))
        atomic_write_text(path, "\n".join(lines) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "SoftLabelStore":
        with open(path, encoding="utf-8") as fh:
            header = json.loads(fh.readline())
            if header.get("version") != STORE_VERSION:
                raise ValueError(f"unsupported soft-label store version {header.get('version')!r}")
            store = cls(int(header["class_count"]), header.get("teacher_fingerprint", ""))
            for line in fh:
                if line.strip():
                    rec = json.loads(line)
                    store.put(rec["doc_id"], rec["s"], rec["o"], rec["logits"])
        return store

    def digest(self) -> str:
        h = hashlib.sha256()
        h.update(f"{self.class_count}|{self.teacher_fingerprint}".encode())
        for key, arr in sorted(self._logits.items()):
            h.update(repr(key).encode())
            h.update(arr.tobytes())
        return h.hexdigest()


def model_fingerprint(extractor: RelationExtractor, seed: int | None = None) -> str:
    h = hashlib.sha256()
    h.update(json.dumps(extractor.model.config.to_json(), sort_keys=True).encode())
    h.update(json.dumps(list(extractor.schema.relation_ids)).encode())
    h.update(str(seed).encode())
    for name, tensor in sorted(extractor.model.state_dict().items()):
        h.update(name.encode())
        h.update(tensor.detach().cpu().numpy().tobytes())
    return h.hexdigest()[:16]


def generate_soft_labels(teacher: RelationExtractor, distant: Sequence[Document],
                         fingerprint: str | None = None, batch_size: int = 8) -> SoftLabelStore:
    store = SoftLabelStore(teacher.num_classes, fingerprint or model_fingerprint(teacher))
    if not distant:
        return store
    logits = teacher.logits(distant, batch_size)
    for doc in distant:
        if doc.doc_id not in logits:
            raise KeyError(f"teacher produced no logits for document {doc.doc_id!r}")
        t = logits[doc.doc_id]
        for s, o in doc.candidate_pairs():
            store.put(doc.doc_id, s, o, t[s, o].numpy())
    return store


@dataclass
class AdaptationPlan:
    strategy: str = "KD_MSE"
    kd_weight: float = 1.0
    pretrain: StageConfig = field(default_factory=lambda: StageConfig(epochs=2, lr=1e-5))
    finetune: StageConfig = field(default_factory=lambda: StageConfig(epochs=10, lr=1e-6))

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise ValueError(f"unknown strategy {self.strategy!r}; expected one of {STRATEGIES}")
        if self.kd_weight < 0:
            raise ValueError("kd_weight must be nonnegative")

    @property
    def needs_soft_labels(self) -> bool:
        return self.strategy != "NA"

    def to_json(self) -> dict:
        return asdict(self)


def train_teacher(train_docs: Sequence[Document], model_config: ModelConfig,
                  loss_config: LossConfig, stage: StageConfig, seed: int,
                  vocab: Vocab | None = None, schema: RelationSchema | None = None,
                  on_epoch=None) -> tuple[RelationExtractor, list[dict]]:
    if not train_docs:
        raise ValueError("cannot train a teacher on an empty corpus")
    from .corpus import schema_from_corpus

    vocab = vocab or Vocab.from_documents(train_docs)
    schema = schema or schema_from_corpus(train_docs).with_frequent_set(train_docs)
    teacher = RelationExtractor.create(model_config, vocab, schema, seed)
    log = train_stage(teacher, train_docs, stage, loss_config, seed, "teacher", on_epoch=on_epoch)
    return teacher, log


def pretrain_student(distant_docs: Sequence[Document], soft_labels: SoftLabelStore | None,
                     plan: AdaptationPlan, model_config: ModelConfig, loss_config: LossConfig,
                     vocab: Vocab, schema: RelationSchema, seed: int,
                     student: RelationExtractor | None = None, on_epoch=None
                     ) -> tuple[RelationExtractor, list[dict]]:
    """Pretrain on distant data: L_RE on the distant hard labels, plus
    ``kd_weight * L_KD`` against the teacher logits for KD strategies."""
    student = student or RelationExtractor.create(model_config, vocab, schema, seed)
    kd_fn = teacher_logits = None
    if plan.needs_soft_labels:
        if soft_labels is None:
            raise ValueError(f"strategy {plan.strategy} requires soft labels")
        soft_labels.check_compatible(student.num_classes)
        teacher_logits = {d.doc_id: soft_labels.doc_tensor(d) for d in distant_docs}
        kd_fn = KD_LOSSES[plan.strategy]
    log = train_stage(student, distant_docs, plan.pretrain, loss_config, seed, "pretrain",
                      teacher_logits=teacher_logits, kd_loss=kd_fn, kd_weight=plan.kd_weight,
                      on_epoch=on_epoch)
    return student, log


def finetune(student: RelationExtractor, annotated_docs: Sequence[Document], plan: AdaptationPlan,
             loss_config: LossConfig, seed: int, on_epoch=None) -> tuple[RelationExtractor, list[dict]]:
    log = train_stage(student, annotated_docs, plan.finetune, loss_config, seed, "finetune",
                      on_epoch=on_epoch)
    return student, log


def run_adaptation(train_docs: Sequence[Document], distant_docs: Sequence[Document],
                   plan: AdaptationPlan, model_config: ModelConfig, loss_config: LossConfig,
                   teacher_stage: StageConfig, seed: int, vocab: Vocab, schema: RelationSchema,
                   teacher: RelationExtractor | None = None) -> dict:
    """Teacher (KD only) -> soft labels -> student pretraining -> fine-tuning."""
    result: dict = {}
    store = None
    if plan.needs_soft_labels:
        if teacher is None:
            teacher, result["teacher_log"] = train_teacher(
                train_docs, model_config, loss_config, teacher_stage, seed, vocab, schema)
        store = generate_soft_labels(teacher, distant_docs)
        result["teacher"] = teacher
        result["soft_labels"] = store
    student, result["pretrain_log"] = pretrain_student(
        distant_docs, store, plan, model_config, loss_config, vocab, schema, seed)
    result["pretrained"] = student.clone()
    student, result["finetune_log"] = finetune(student, train_docs, plan, loss_config, seed)
    result["student"] = student
    return result
