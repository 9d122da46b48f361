"""Entity-pair matrix: grouped bilinear fusion, axial attention, classifier head."""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch
import torch.nn as nn

from .encoder import ConfigurationError


@dataclass
class PairMatrix:
    G: torch.Tensor  # (..., n, n, d)
    diagonal_mask: torch.Tensor  # (n, n) bool, False on the diagonal


class GroupedBilinear(nn.Module):
    """g_i = sum_j z_s^j' W[i, j] z_o^j + b_i over k equal-sized groups."""

    def __init__(self, d: int, k: int):
        super().__init__()
        if k <= 0 or d % k:
            raise ConfigurationError(f"group count {k} must divide hidden size {d}")
        self.d, self.k, self.block = d, k, d // k
        self.weight = nn.Parameter(torch.empty(d, k, self.block, self.block))
        self.bias = nn.Parameter(torch.zeros(d))
        bound = 1.0 / math.sqrt(k * self.block * self.block)
        nn.init.uniform_(self.weight, -bound, bound)

    def forward(self, z_s, z_o):
        zs = z_s.unflatten(-1, (self.k, self.block))
        zo = z_o.unflatten(-1, (self.k, self.block))
        outer = (zs[..., :, None] * zo[..., None, :]).flatten(-3)  # (..., k * b * b)
        return outer @ self.weight.flatten(1).T + self.bias


def grouped_bilinear(z_s: torch.Tensor, z_o: torch.Tensor, params: GroupedBilinear) -> torch.Tensor:
    return params(z_s, z_o)


def build_pair_matrix(z_s: torch.Tensor, z_o: torch.Tensor, params: GroupedBilinear) -> PairMatrix:
    """z_s[s, o], z_o[s, o]: context-enhanced embeddings for every ordered pair.

    Shapes (..., n, n, d). The diagonal is zero-filled and masked.
    """
    n = z_s.shape[-2]
    G = params(z_s, z_o)
    mask = ~torch.eye(n, dtype=torch.bool, device=G.device)
    G = G * mask[..., None].to(G)
    return PairMatrix(G, mask)


class AxialAttention(nn.Module):
    """One pass of single-head attention along each axis of the pair matrix.

    r_h(s,o) = g(s,o) + sum_p softmax_p(q(s,o).k(p,o)) v(p,o)
    r_w(s,o) = r_h(s,o) + sum_p softmax_p(q(s,o).k(s,p)) v(s,p)

    q, k, v project G for both axes unless ``stacked`` is set, in which case
    the second axis re-projects from r_h. Diagonal cells take part as keys
    unless ``mask_diagonal``.
    """

    def __init__(self, d: int, stacked: bool = False, mask_diagonal: bool = False):
        super().__init__()
        self.query = nn.Linear(d, d, bias=False)
        self.key = nn.Linear(d, d, bias=False)
        self.value = nn.Linear(d, d, bias=False)
        self.stacked = stacked
        self.mask_diagonal = mask_diagonal

    def forward(self, G: torch.Tensor, entity_mask: torch.Tensor | None = None) -> torch.Tensor:
        """G: (B, n, n, d) or (n, n, d); entity_mask: (B, n) bool of real entities."""
        single = G.dim() == 3
        if single:
            G = G[None]
            entity_mask = None if entity_mask is None else entity_mask[None]
        B, n = G.shape[:2]
        if entity_mask is None:
            entity_mask = torch.ones(B, n, dtype=torch.bool, device=G.device)
        eye = torch.eye(n, dtype=torch.bool, device=G.device)

        # height axis: cell (s, o) attends over (p, o); valid[b, s, o, p]
        valid_h = entity_mask[:, None, None, :].expand(B, n, n, n)
        # width axis: cell (s, o) attends over (s, p)
        valid_w = valid_h
        if self.mask_diagonal:
            valid_h = valid_h & ~eye[None, None, :, :]  # drop p == o
            valid_w = valid_w & ~eye[None, :, None, :]  # drop p == s

        q, k, v = self.query(G), self.key(G), self.value(G)
        scores = torch.einsum("bsod,bpod->bsop", q, k)
        r_h = G + torch.einsum("bsop,bpod->bsod", _masked_softmax(scores, valid_h), v)

        if self.stacked:
            q, k, v = self.query(r_h), self.key(r_h), self.value(r_h)
        scores = torch.einsum("bsod,bspd->bsop", q, k)
        r_w = r_h + torch.einsum("bsop,bspd->bsod", _masked_softmax(scores, valid_w), v)
        return r_w[0] if single else r_w


def _masked_softmax(scores, valid):
    scores = scores.masked_fill(~valid, float("-inf"))
    probs = scores.softmax(-1)
    # rows with no valid key (padding, or n == 1 with a masked diagonal)
    return torch.nan_to_num(probs, nan=0.0)


def axial_attention(G: torch.Tensor | PairMatrix, params: AxialAttention,
                    entity_mask: torch.Tensor | None = None) -> torch.Tensor:
    if isinstance(G, PairMatrix):
        G = G.G
    return params(G, entity_mask)


class ClassifierHead(nn.Linear):
    """Affine map to c = |R| + 1 logits per cell; logit 0 is the TH class."""

    def __init__(self, d: int, num_classes: int):
        super().__init__(d, num_classes)
        nn.init.zeros_(self.bias)


def classify(R: torch.Tensor, head: ClassifierHead) -> torch.Tensor:
    return head(R)
