"""Adaptive focal loss over a learned threshold class, the adaptive
thresholding baseline, a BCE diagnostic, and the threshold decision rule.

Logit vectors have length c = |R| + 1 with the TH class at index 0; relation
``i`` of the schema sits at logit index ``i + 1``. Labels are multi-hot over
the |R| relations only, and an all-zero row is "no relation".
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable

import torch
import torch.nn.functional as F

VARIANTS = ("AFL", "ATL", "BCE")


@dataclass(frozen=True)
class PairTarget:
    positive_set: frozenset[int]
    num_relations: int

    def __post_init__(self):
        bad = [r for r in self.positive_set if not 0 <= r < self.num_relations]
        if bad:
            raise ValueError(f"relation indices {bad} outside [0, {self.num_relations})")

    @property
    def negative_set(self) -> frozenset[int]:
        return frozenset(range(self.num_relations)) - self.positive_set

    def multi_hot(self, like: torch.Tensor | None = None) -> torch.Tensor:
        out = torch.zeros(self.num_relations, dtype=like.dtype if like is not None else torch.float32)
        for r in self.positive_set:
            out[r] = 1.0
        return out


@dataclass(frozen=True)
class LossConfig:
    gamma: float = 0.5
    variant: str = "AFL"

    def __post_init__(self):
        if self.gamma < 0:
            raise ValueError("gamma must be nonnegative")
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown loss variant {self.variant!r}; expected one of {VARIANTS}")


def _as_labels(logits, target):
    if isinstance(target, PairTarget):
        if logits.shape[-1] != target.num_relations + 1:
            raise ValueError("logit length must be |R| + 1")
        return target.multi_hot(logits).to(logits)
    return target.to(logits)


def _negative_term(th, rel, labels):
    # -log P(TH) with the softmax over N_T and TH only
    masked = rel.masked_fill(labels > 0, float("-inf"))
    return torch.logsumexp(torch.cat([th[..., None], masked], dim=-1), dim=-1) - th


def _on_positives(term, labels):
    # where() rather than a product: -inf terms on negatives must not become nan
    return torch.where(labels > 0, term * labels, torch.zeros_like(term))


def afl_pair_losses(logits: torch.Tensor, labels: torch.Tensor, gamma: float) -> torch.Tensor:
    """Per-pair adaptive focal loss; logits (..., c), labels (..., c-1)."""
    th, rel = logits[..., 0], logits[..., 1:]
    margin = rel - th[..., None]
    log_p = F.logsigmoid(margin)
    # (1 - P)^gamma computed in log space so saturated pairs keep finite gradients
    focal = torch.exp(gamma * F.logsigmoid(-margin)) if gamma else torch.ones_like(margin)
    positive = -_on_positives(focal * log_p, labels).sum(-1)
    return positive + _negative_term(th, rel, labels)


def atl_pair_losses(logits: torch.Tensor, labels: torch.Tensor) -> torch.Tensor:
    th, rel = logits[..., 0], logits[..., 1:]
    pos_support = torch.cat([th[..., None], rel.masked_fill(labels <= 0, float("-inf"))], dim=-1)
    log_norm = torch.logsumexp(pos_support, dim=-1, keepdim=True)
    positive = -_on_positives(rel - log_norm, labels).sum(-1)
    return positive + _negative_term(th, rel, labels)


def bce_pair_losses(logits: torch.Tensor, labels: torch.Tensor) -> torch.Tensor:
    # margins against TH so the same decision rule applies
    margin = logits[..., 1:] - logits[..., :1]
    return F.binary_cross_entropy_with_logits(margin, labels, reduction="none").sum(-1)


def afl_loss(logits: torch.Tensor, target, gamma: float = 0.5) -> torch.Tensor:
    return afl_pair_losses(logits, _as_labels(logits, target), gamma)


def atl_loss(logits: torch.Tensor, target) -> torch.Tensor:
    return atl_pair_losses(logits, _as_labels(logits, target))


def pair_losses(logits, labels, config: LossConfig):
    if config.variant == "AFL":
        return afl_pair_losses(logits, labels, config.gamma)
    if config.variant == "ATL":
        return atl_pair_losses(logits, labels)
    return bce_pair_losses(logits, labels)


def batch_loss(logits: torch.Tensor, labels: torch.Tensor, mask: torch.Tensor,
               config: LossConfig = LossConfig()) -> torch.Tensor:
    """Mean per-pair loss over unmasked cells.

    logits (..., n, n, c), labels (..., n, n, c-1), mask (..., n, n) bool.
    """
    mask = mask.bool()
    if not mask.any():
        raise ValueError("every pair is masked; nothing to score")
    return pair_losses(logits[mask], labels[mask], config).mean()


def decide_tensor(logits: torch.Tensor) -> torch.Tensor:
    """Boolean (..., c-1): relation logits strictly above the TH logit."""
    return logits[..., 1:] > logits[..., :1]


def decide(logits) -> set[int]:
    if not torch.is_tensor(logits):
        logits = torch.as_tensor(logits, dtype=torch.float64)
    return {int(i) for i in decide_tensor(logits).nonzero().flatten()}


def positive_sets(logits: torch.Tensor) -> Iterable[set[int]]:
    for row in decide_tensor(logits.reshape(-1, logits.shape[-1])):
        yield {int(i) for i in row.nonzero().flatten()}
