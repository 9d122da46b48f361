"""The full relation extractor: encoder -> entity/context pooling -> pair
matrix -> axial attention -> per-pair logits."""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Sequence

import torch
import torch.nn as nn

from .corpus import Document, RelationSchema, build_label_tensor
from .encoder import (
    ContextFusion, EncoderBackend, ToyTransformer, Vocab, context_query, encode_chunked,
    insert_markers, pool_entity,
)
from .losses import decide_tensor
from .pairrep import AxialAttention, ClassifierHead, GroupedBilinear


@dataclass
class ModelConfig:
    hidden_dim: int = 32
    num_heads: int = 2
    num_layers: int = 2
    ffn_dim: int = 64
    groups: int = 4
    max_positions: int = 512
    dropout: float = 0.1
    use_axial: bool = True
    stacked_axial: bool = False
    axial_mask_diagonal: bool = False
    normalize_context_query: bool = True

    def to_json(self) -> dict:
        return asdict(self)


@dataclass
class Features:
    """One document, tokenized and aligned to the label space."""

    doc_id: str
    ids: list[int]
    entity_positions: list[list[int]]
    labels: torch.Tensor | None  # n x n x |R|

    @property
    def n_entities(self) -> int:
        return len(self.entity_positions)


def featurize(doc: Document, vocab: Vocab, schema: RelationSchema | None = None,
              with_labels: bool = True) -> Features:
    marked = insert_markers(doc, vocab)
    positions = marked.entity_positions(doc.n_entities)
    for e, pos in enumerate(positions):
        if not pos:
            raise ValueError(f"{doc.doc_id}: entity {e} lost all of its mention markers")
    labels = build_label_tensor(doc, schema).values if (with_labels and schema is not None) else None
    return Features(doc.doc_id, marked.ids, positions, labels)


@dataclass
class Batch:
    doc_ids: list[str]
    input_ids: torch.Tensor  # B x L
    token_mask: torch.Tensor  # B x L
    mention_pos: torch.Tensor  # B x N x M
    mention_mask: torch.Tensor  # B x N x M
    entity_mask: torch.Tensor  # B x N
    pair_mask: torch.Tensor  # B x N x N, real off-diagonal pairs
    labels: torch.Tensor | None  # B x N x N x |R|
    lengths: list[int]

    def __len__(self) -> int:
        return len(self.doc_ids)


def collate(feats: Sequence[Features], pad_id: int = 0) -> Batch:
    B = len(feats)
    L = max(len(f.ids) for f in feats)
    N = max(f.n_entities for f in feats)
    M = max((len(p) for f in feats for p in f.entity_positions), default=1)
    input_ids = torch.full((B, L), pad_id, dtype=torch.long)
    token_mask = torch.zeros(B, L, dtype=torch.bool)
    mention_pos = torch.zeros(B, N, M, dtype=torch.long)
    mention_mask = torch.zeros(B, N, M, dtype=torch.bool)
    entity_mask = torch.zeros(B, N, dtype=torch.bool)
    labels = None
    if all(f.labels is not None for f in feats):
        R = feats[0].labels.shape[-1]
        labels = torch.zeros(B, N, N, R)
    for b, f in enumerate(feats):
        input_ids[b, : len(f.ids)] = torch.tensor(f.ids, dtype=torch.long)
        token_mask[b, : len(f.ids)] = True
        entity_mask[b, : f.n_entities] = True
        for e, pos in enumerate(f.entity_positions):
            mention_pos[b, e, : len(pos)] = torch.tensor(pos, dtype=torch.long)
            mention_mask[b, e, : len(pos)] = True
        # padded entities pool a dummy mention at position 0; their pairs are masked
        mention_mask[b, f.n_entities:, 0] = True
        if labels is not None:
            n = f.n_entities
            labels[b, :n, :n] = f.labels
    eye = torch.eye(N, dtype=torch.bool)
    pair_mask = entity_mask[:, :, None] & entity_mask[:, None, :] & ~eye
    return Batch([f.doc_id for f in feats], input_ids, token_mask, mention_pos, mention_mask,
                 entity_mask, pair_mask, labels, [len(f.ids) for f in feats])


class DocREModel(nn.Module):
    def __init__(self, config: ModelConfig, vocab_size: int, num_classes: int,
                 backend: EncoderBackend | None = None):
        super().__init__()
        self.config = config
        self.num_classes = num_classes
        d = config.hidden_dim
        self.backend = backend if backend is not None else ToyTransformer(
            vocab_size, d, config.num_heads, config.num_layers, config.max_positions,
            config.ffn_dim, config.dropout,
        )
        self.subject_fusion = ContextFusion(d)
        self.object_fusion = ContextFusion(d)
        self.bilinear = GroupedBilinear(d, config.groups)
        self.axial = (AxialAttention(d, config.stacked_axial, config.axial_mask_diagonal)
                      if config.use_axial else None)
        self.classifier = ClassifierHead(d, num_classes)

    def encode(self, batch: Batch) -> tuple[torch.Tensor, torch.Tensor]:
        """Hidden states (B, L, d) and final-layer attention (B, H, L, L)."""
        max_pos = self.backend.max_positions
        if max(batch.lengths) <= max_pos:
            return self.backend.encode(batch.input_ids, batch.token_mask)
        B, L = batch.input_ids.shape
        hiddens, attns = [], []
        for b, l in enumerate(batch.lengths):
            h, a = encode_chunked(batch.input_ids[b, :l], self.backend, max_pos)
            hiddens.append(nn.functional.pad(h, (0, 0, 0, L - l)))
            attns.append(nn.functional.pad(a, (0, L - l, 0, L - l)))
        return torch.stack(hiddens), torch.stack(attns)

    def head(self, hidden: torch.Tensor, attention: torch.Tensor, batch: Batch) -> torch.Tensor:
        """Logits (B, N, N, c) from encoder outputs."""
        B, N, M = batch.mention_pos.shape
        d = hidden.shape[-1]
        H, L = attention.shape[1], attention.shape[-1]

        idx = batch.mention_pos.reshape(B, N * M)
        mention_h = hidden.gather(1, idx[..., None].expand(B, N * M, d)).view(B, N, M, d)
        h_e = pool_entity(mention_h, batch.mention_mask)  # B x N x d

        rows = attention.gather(2, idx[:, None, :, None].expand(B, H, N * M, L))
        rows = rows.view(B, H, N, M, L).permute(0, 2, 3, 1, 4)  # B x N x M x H x L
        w = batch.mention_mask.to(rows)[..., None, None]
        A_e = (rows * w).sum(2) / w.sum(2)  # B x N x H x L

        q = context_query(
            A_e[:, :, None], A_e[:, None, :], self.config.normalize_context_query,
            batch.token_mask[:, None, None, :],
        )  # B x N x N x L
        ctx = torch.bmm(q.reshape(B, N * N, L), hidden).view(B, N, N, d)
        z_s = self.subject_fusion(h_e[:, :, None].expand(B, N, N, d), ctx)
        z_o = self.object_fusion(h_e[:, None, :].expand(B, N, N, d), ctx)
        eye = torch.eye(N, dtype=torch.bool, device=hidden.device)
        G = self.bilinear(z_s, z_o).masked_fill(eye[None, :, :, None], 0.0)
        r = self.axial(G, batch.entity_mask) if self.axial is not None else G
        return self.classifier(r)

    def forward(self, batch: Batch) -> torch.Tensor:
        hidden, attention = self.encode(batch)
        return self.head(hidden, attention, batch)


def iter_batches(feats: Sequence[Features], batch_size: int, pad_id: int = 0,
                 order: Sequence[int] | None = None):
    order = range(len(feats)) if order is None else order
    order = list(order)
    for i in range(0, len(order), batch_size):
        yield collate([feats[j] for j in order[i: i + batch_size]], pad_id)


@torch.no_grad()
def predict_logits(model: DocREModel, feats: Sequence[Features], batch_size: int = 8,
                   pad_id: int = 0) -> dict[str, torch.Tensor]:
    """doc_id -> n x n x c logits (diagonal included, excluded downstream)."""
    was_training = model.training
    model.eval()
    out = {}
    try:
        for batch in iter_batches(feats, batch_size, pad_id):
            logits = model(batch)
            for b, doc_id in enumerate(batch.doc_ids):
                n = int(batch.entity_mask[b].sum())
                out[doc_id] = logits[b, :n, :n].clone()
    finally:
        model.train(was_training)
    return out


def logits_to_predictions(logits_by_doc: dict[str, torch.Tensor], schema: RelationSchema
                          ) -> set[tuple[str, int, int, str]]:
    preds = set()
    for doc_id, logits in logits_by_doc.items():
        n = logits.shape[0]
        hits = decide_tensor(logits) & ~torch.eye(n, dtype=torch.bool)[..., None]
        for s, o, r in hits.nonzero().tolist():
            preds.add((doc_id, s, o, schema.relation_ids[r]))
    return preds
