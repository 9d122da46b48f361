"""Optimization loop shared by the teacher, pretraining and fine-tuning stages."""

from __future__ import annotations

import hashlib
import logging
import math
from dataclasses import asdict, dataclass
from typing import Callable, Mapping, Sequence

import torch

from .corpus import Document, RelationSchema
from .encoder import Vocab
from .losses import LossConfig, batch_loss
from .model import (
    DocREModel, Features, ModelConfig, collate, featurize, logits_to_predictions, predict_logits,
)

log = logging.getLogger(__name__)


class TrainingDivergedError(RuntimeError):
    pass


def derive_seed(root: int, tag: str) -> int:
    """Sub-seed for one consumer (``init``, ``shuffle:<stage>``, ``dropout:<stage>``)."""
    digest = hashlib.sha256(f"{root}:{tag}".encode()).digest()
    return int.from_bytes(digest[:8], "little") & 0x7FFF_FFFF_FFFF_FFFF


@dataclass
class StageConfig:
    epochs: int = 10
    lr: float = 1e-5
    warmup: float = 0.06
    max_grad_norm: float = 1.0
    batch_size: int = 4
    weight_decay: float = 0.0

    def to_json(self) -> dict:
        return asdict(self)


class RelationExtractor:
    """A model bundled with the vocabulary and relation schema it was built for."""

    def __init__(self, model: DocREModel, vocab: Vocab, schema: RelationSchema):
        self.model = model
        self.vocab = vocab
        self.schema = schema

    @classmethod
    def create(cls, config: ModelConfig, vocab: Vocab, schema: RelationSchema, seed: int
               ) -> "RelationExtractor":
        with torch.random.fork_rng():
            torch.manual_seed(derive_seed(seed, "init"))
            model = DocREModel(config, len(vocab), schema.num_classes)
        return cls(model, vocab, schema)

    @property
    def num_classes(self) -> int:
        return self.schema.num_classes

    def featurize(self, docs: Sequence[Document], with_labels: bool = True) -> list[Features]:
        return [featurize(d, self.vocab, self.schema, with_labels) for d in docs]

    def logits(self, docs: Sequence[Document], batch_size: int = 8) -> dict[str, torch.Tensor]:
        return predict_logits(self.model, self.featurize(docs, with_labels=False), batch_size,
                              self.vocab.pad_id)

    def predict(self, docs: Sequence[Document], batch_size: int = 8) -> set[tuple[str, int, int, str]]:
        return logits_to_predictions(self.logits(docs, batch_size), self.schema)

    def clone(self) -> "RelationExtractor":
        with torch.random.fork_rng():
            model = DocREModel(self.model.config, len(self.vocab), self.num_classes)
        model.load_state_dict(self.model.state_dict())
        return RelationExtractor(model, self.vocab, self.schema)


def _linear_warmup(total_steps: int, warmup: float) -> Callable[[int], float]:
    warm = int(math.ceil(total_steps * warmup))

    def factor(step: int) -> float:
        if step < warm:
            return (step + 1) / warm
        return max(0.0, (total_steps - step) / max(1, total_steps - warm))

    return factor


KDLossFn = Callable[[torch.Tensor, torch.Tensor], torch.Tensor]


def train_stage(extractor: RelationExtractor, docs: Sequence[Document], stage: StageConfig,
                loss_config: LossConfig, seed: int, name: str = "train",
                teacher_logits: Mapping[str, torch.Tensor] | None = None,
                kd_loss: KDLossFn | None = None, kd_weight: float = 1.0,
                on_epoch: Callable[[int, RelationExtractor], dict] | None = None) -> list[dict]:
    """Run one training stage in place; returns one log record per step
    (plus per-epoch records from ``on_epoch``).

    With ``kd_loss`` the objective is ``kd_weight * L_KD + L_RE`` where L_KD
    compares the student logits to ``teacher_logits`` on every real pair.
    """
    if not docs:
        raise ValueError(f"{name}: training corpus is empty")
    model = extractor.model
    feats = extractor.featurize(docs)
    if kd_loss is not None:
        missing = [f.doc_id for f in feats if f.doc_id not in teacher_logits]
        if missing:
            raise KeyError(f"{name}: no soft labels for document {missing[0]!r}")

    steps_per_epoch = math.ceil(len(feats) / stage.batch_size)
    total = steps_per_epoch * stage.epochs
    records: list[dict] = []
    if total == 0:
        return records

    optimizer = torch.optim.AdamW(model.parameters(), lr=stage.lr, weight_decay=stage.weight_decay)
    scheduler = torch.optim.lr_scheduler.LambdaLR(optimizer, _linear_warmup(total, stage.warmup))
    shuffle = torch.Generator().manual_seed(derive_seed(seed, f"shuffle:{name}"))
    pad_id = extractor.vocab.pad_id
    step = 0
    model.train()
    with torch.random.fork_rng():
        torch.manual_seed(derive_seed(seed, f"dropout:{name}"))
        for epoch in range(stage.epochs):
            order = torch.randperm(len(feats), generator=shuffle).tolist()
            for i in range(0, len(order), stage.batch_size):
                batch = collate([feats[j] for j in order[i: i + stage.batch_size]], pad_id)
                if not batch.pair_mask.any():
                    continue
                logits = model(batch)
                re_loss = batch_loss(logits, batch.labels, batch.pair_mask, loss_config)
                record = {"stage": name, "epoch": epoch, "step": step, "re_loss": re_loss.item()}
                loss = re_loss
                if kd_loss is not None:
                    target = _teacher_tensor(batch, teacher_logits, logits)
                    raw = kd_loss(logits[batch.pair_mask], target[batch.pair_mask])
                    kd_term = kd_weight * raw
                    loss = kd_term + re_loss
                    record["kd_raw"] = raw.item()
                    record["kd_loss"] = kd_term.item()
                record["loss"] = loss.item()
                if not math.isfinite(record["loss"]):
                    raise TrainingDivergedError(
                        f"{name}: non-finite loss at epoch {epoch} step {step} "
                        f"(docs {batch.doc_ids}, lr {scheduler.get_last_lr()[0]:.3g})"
                    )
                optimizer.zero_grad()
                loss.backward()
                if stage.max_grad_norm:
                    torch.nn.utils.clip_grad_norm_(model.parameters(), stage.max_grad_norm)
                optimizer.step()
                scheduler.step()
                records.append(record)
                step += 1
            if on_epoch is not None:
                extra = on_epoch(epoch, extractor)
                if extra:
                    records.append({"stage": name, "epoch": epoch, "step": step, **extra})
                model.train()
    return records


def _teacher_tensor(batch, teacher_logits, like):
    out = torch.zeros_like(like)
    for b, doc_id in enumerate(batch.doc_ids):
        t = teacher_logits[doc_id]
        n = t.shape[0]
        out[b, :n, :n] = t.to(like)
    return out
