"""Document encoding: entity markers, a pluggable transformer backend,
chunked encoding, logsumexp entity pooling and localized context pooling."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Protocol, Sequence

import torch
import torch.nn as nn
import torch.nn.functional as F

from .corpus import Document

MARKER = "*"
PAD, UNK, CLS, SEP = "[PAD]", "[UNK]", "[CLS]", "[SEP]"


class ConfigurationError(ValueError):
    pass


class Vocab:
    """Whitespace token -> id map. Ids 0..4 are reserved for the special tokens."""

    specials = (PAD, UNK, CLS, SEP, MARKER)

    def __init__(self, tokens: Iterable[str] = (), include_specials: bool = True):
        self.itos: list[str] = list(self.specials) if include_specials else []
        self.stoi: dict[str, int] = {t: i for i, t in enumerate(self.itos)}
        for tok in tokens:
            if tok not in self.stoi:
                self.stoi[tok] = len(self.itos)
                self.itos.append(tok)

    @classmethod
    def from_documents(cls, docs: Iterable[Document]) -> "Vocab":
        words: dict[str, None] = {}
        for doc in docs:
            for w in doc.words:
                words.setdefault(w, None)
        return cls(words)

    def __len__(self) -> int:
        return len(self.itos)

    def __contains__(self, token: str) -> bool:
        return token in self.stoi

    def __getitem__(self, token: str) -> int:
        return self.stoi.get(token, self.stoi.get(UNK, 0))

    @property
    def pad_id(self) -> int:
        return self.stoi.get(PAD, 0)

    def to_list(self) -> list[str]:
        return list(self.itos)

    @classmethod
    def from_list(cls, tokens: Sequence[str]) -> "Vocab":
        return cls(tokens, include_specials=False)


@dataclass
class MarkedSequence:
    tokens: list[str]
    ids: list[int]
    # (entity index, mention ordinal) -> position of the opening marker
    mention_marker_index: dict[tuple[int, int], int]
    marker_positions: set[int]

    def __len__(self) -> int:
        return len(self.ids)

    def entity_positions(self, n_entities: int) -> list[list[int]]:
        out: list[list[int]] = [[] for _ in range(n_entities)]
        for (e, j), pos in sorted(self.mention_marker_index.items()):
            out[e].append(pos)
        return out

    def unmarked(self) -> list[str]:
        return [t for i, t in enumerate(self.tokens) if i not in self.marker_positions]


def insert_markers(doc: Document, vocab: Vocab) -> MarkedSequence:
    if MARKER not in vocab:
        raise ConfigurationError(f"vocabulary has no entity marker token {MARKER!r}")
    words = doc.words
    opens: dict[int, list[tuple[int, int, int]]] = {}
    closes: dict[int, list[tuple[int, int, int]]] = {}
    for e, mentions in enumerate(doc.entities):
        for j, m in enumerate(mentions):
            start, end = m.token_span
            opens.setdefault(start, []).append((end, e, j))
            closes.setdefault(end, []).append((start, e, j))

    tokens: list[str] = []
    marker_index: dict[tuple[int, int], int] = {}
    marker_positions: set[int] = set()

    def close_at(i):
        # innermost (latest-starting) mention closes first
        for _, e, j in sorted(closes.get(i, ()), key=lambda x: -x[0]):
            marker_positions.add(len(tokens))
            tokens.append(MARKER)

    for i, w in enumerate(words):
        close_at(i)
        # outermost (longest) mention opens first
        for _, e, j in sorted(opens.get(i, ()), key=lambda x: -x[0]):
            marker_index[(e, j)] = len(tokens)
            marker_positions.add(len(tokens))
            tokens.append(MARKER)
        tokens.append(w)
    close_at(len(words))
    return MarkedSequence(tokens, [vocab[t] for t in tokens], marker_index, marker_positions)


class EncoderBackend(Protocol):
    hidden_dim: int
    num_heads: int
    max_positions: int

    def encode(self, ids: torch.Tensor, attention_mask: torch.Tensor | None = None
               ) -> tuple[torch.Tensor, torch.Tensor]:
        """ids (l,) or (B, l) -> hidden (.., l, d), final-layer attention (.., H, l, l)."""
        ...


class _EncoderLayer(nn.Module):
    def __init__(self, d: int, heads: int, ffn: int, dropout: float):
        super().__init__()
        if d % heads:
            raise ConfigurationError(f"hidden size {d} not divisible by {heads} heads")
        self.heads = heads
        self.qkv = nn.Linear(d, 3 * d)
        self.out = nn.Linear(d, d)
        self.ln1 = nn.LayerNorm(d)
        self.ff = nn.Sequential(nn.Linear(d, ffn), nn.GELU(), nn.Linear(ffn, d))
        self.ln2 = nn.LayerNorm(d)
        self.drop = nn.Dropout(dropout)

    def forward(self, x, key_mask, position_bias=None):
        B, L, d = x.shape
        q, k, v = self.qkv(x).view(B, L, 3, self.heads, d // self.heads).permute(2, 0, 3, 1, 4)
        scores = q @ k.transpose(-1, -2) / math.sqrt(d // self.heads)
        if position_bias is not None:
            scores = scores + position_bias
        scores = scores.masked_fill(~key_mask[:, None, None, :], float("-inf"))
        attn = scores.softmax(-1)
        ctx = (self.drop(attn) @ v).transpose(1, 2).reshape(B, L, d)
        x = self.ln1(x + self.drop(self.out(ctx)))
        x = self.ln2(x + self.drop(self.ff(x)))
        return x, attn


class ToyTransformer(nn.Module):
    """Small post-LN transformer encoder that exposes final-layer attention.

    Stands in for a pretrained language model behind the same contract.
    Word order enters through absolute position embeddings and a learned
    per-head bias on the clipped relative offset between query and key.
    """

    def __init__(self, vocab_size: int, hidden_dim: int = 32, num_heads: int = 2,
                 num_layers: int = 2, max_positions: int = 512, ffn_dim: int | None = None,
                 dropout: float = 0.1, max_relative: int = 8):
        super().__init__()
        self.hidden_dim = hidden_dim
        self.num_heads = num_heads
        self.max_positions = max_positions
        self.max_relative = max_relative
        self.tok = nn.Embedding(vocab_size, hidden_dim)
        self.pos = nn.Embedding(max_positions, hidden_dim)
        self.rel_bias = nn.Parameter(torch.zeros(num_heads, 2 * max_relative + 1))
        self.ln = nn.LayerNorm(hidden_dim)
        self.drop = nn.Dropout(dropout)
        self.layers = nn.ModuleList(
            _EncoderLayer(hidden_dim, num_heads, ffn_dim or 2 * hidden_dim, dropout)
            for _ in range(num_layers)
        )

    def encode(self, ids, attention_mask=None):
        single = ids.dim() == 1
        if single:
            ids = ids[None]
        B, L = ids.shape
        if L > self.max_positions:
            raise ConfigurationError(f"sequence of length {L} exceeds {self.max_positions} positions")
        if attention_mask is None:
            attention_mask = torch.ones(B, L, dtype=torch.bool, device=ids.device)
        else:
            attention_mask = attention_mask.bool()
            if single:
                attention_mask = attention_mask[None]
        pos = torch.arange(L, device=ids.device)
        x = self.drop(self.ln(self.tok(ids) + self.pos(pos)[None]))
        offset = (pos[None, :] - pos[:, None]).clamp(-self.max_relative, self.max_relative)
        bias = self.rel_bias[:, offset + self.max_relative][None]  # 1 x H x L x L
        attn = None
        for layer in self.layers:
            x, attn = layer(x, attention_mask, bias)
        if single:
            return x[0], attn[0]
        return x, attn

    forward = encode


def chunk_bounds(length: int, max_len: int, stride: int) -> list[tuple[int, int]]:
    if length <= max_len:
        return [(0, length)]
    if stride <= 0:
        raise ConfigurationError("sequence exceeds max_len and stride is 0")
    if stride >= max_len:
        raise ConfigurationError(f"stride {stride} must be smaller than max_len {max_len}")
    bounds, start = [], 0
    while True:
        end = min(start + max_len, length)
        bounds.append((start, end))
        if end == length:
            return bounds
        start += stride


def encode_chunked(ids: torch.Tensor, backend: EncoderBackend, max_len: int | None = None,
                   stride: int | None = None) -> tuple[torch.Tensor, torch.Tensor]:
    """Encode a 1-D id sequence as overlapping chunks and average the overlaps.

    Hidden states are averaged over the chunks covering each position. For an
    attention row, entries outside a chunk count as zero, the row is averaged
    over the chunks covering its query position and then renormalized.
    """
    max_len = max_len or backend.max_positions
    stride = max_len // 2 if stride is None else stride
    l = ids.shape[0]
    bounds = chunk_bounds(l, max_len, stride)
    if len(bounds) == 1:
        return backend.encode(ids)

    hidden_sum = attn_sum = None
    count = torch.zeros(l)
    for start, end in bounds:
        h, a = backend.encode(ids[start:end])
        if hidden_sum is None:
            hidden_sum = h.new_zeros(l, h.shape[-1])
            attn_sum = a.new_zeros(a.shape[0], l, l)
        hidden_sum = hidden_sum + F.pad(h, (0, 0, start, l - end))
        attn_sum = attn_sum + F.pad(a, (start, l - end, start, l - end))
        count[start:end] += 1
    count = count.to(hidden_sum)
    hidden = hidden_sum / count[:, None]
    attn = attn_sum / count[None, :, None]
    attn = attn / attn.sum(-1, keepdim=True)
    return hidden, attn


def pool_entity(mention_embs: torch.Tensor, mask: torch.Tensor | None = None) -> torch.Tensor:
    """logsumexp over the mention axis (-2). ``mask`` marks valid mentions."""
    if mention_embs.shape[-2] == 0:
        raise ValueError("cannot pool an entity with no mentions")
    if mask is not None:
        mention_embs = mention_embs.masked_fill(~mask[..., None], float("-inf"))
    return torch.logsumexp(mention_embs, dim=-2)


def pool_entity_attention(attention: torch.Tensor, positions: Sequence[int]) -> torch.Tensor:
    """Mean of the final-layer attention rows at the mention marker positions."""
    if len(positions) == 0:
        raise ValueError("entity has no mention positions")
    return attention[:, list(positions), :].mean(dim=1)


def context_query(att_s: torch.Tensor, att_o: torch.Tensor, normalize: bool = True,
                  token_mask: torch.Tensor | None = None) -> torch.Tensor:
    """Head-pooled attention overlap (..., l) for an entity pair.

    With ``normalize`` the head-summed query is rescaled to a distribution; a
    query that is identically zero falls back to uniform over valid tokens.
    Without it the overlap is averaged over heads and left unscaled.
    """
    if not normalize:
        return (att_s * att_o).mean(-2)
    q = (att_s * att_o).sum(-2)
    total = q.sum(-1, keepdim=True)
    if token_mask is None:
        uniform = torch.full_like(q, 1.0 / q.shape[-1])
    else:
        m = token_mask.to(q)
        uniform = (m / m.sum(-1, keepdim=True)).expand_as(q)
    zero = total == 0
    return torch.where(zero, uniform, q / torch.where(zero, torch.ones_like(total), total))


def context_vector(att_s: torch.Tensor, att_o: torch.Tensor, hidden: torch.Tensor,
                   normalize: bool = True) -> torch.Tensor:
    """c = H^T q for one pair: att_s, att_o (H, l); hidden (l, d)."""
    return context_query(att_s, att_o, normalize) @ hidden


class ContextFusion(nn.Module):
    """z = tanh(W_s h + W_c c)."""

    def __init__(self, d: int):
        super().__init__()
        self.entity_proj = nn.Linear(d, d, bias=False)
        self.context_proj = nn.Linear(d, d, bias=False)

    def forward(self, h_e, c):
        return torch.tanh(self.entity_proj(h_e) + self.context_proj(c))


def fuse_context(h_e: torch.Tensor, c: torch.Tensor, params: ContextFusion) -> torch.Tensor:
    return params(h_e, c)
