"""DocRED-schema ingestion, label tensors and the training fact index."""

from __future__ import annotations

import json
import re
from collections import Counter
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import torch

from ._io import atomic_write_text


class SchemaError(ValueError):
    """Raised when a document or relation schema is malformed."""


class EmptyCorpusError(ValueError):
    pass


@dataclass(frozen=True)
class Mention:
    entity_index: int
    sentence_index: int
    token_span: tuple[int, int]  # document-level, half-open
    surface: str
    entity_type: str = ""


@dataclass(frozen=True)
class Document:
    doc_id: str
    tokens: tuple[tuple[str, ...], ...]
    entities: tuple[tuple[Mention, ...], ...]
    facts: frozenset[tuple[int, str, int]]
    is_distant: bool = False
    evidence: Mapping[tuple[int, str, int], tuple[int, ...]] = field(
        default_factory=dict, compare=False, repr=False
    )

    @property
    def n_entities(self) -> int:
        return len(self.entities)

    @property
    def words(self) -> list[str]:
        return [w for sent in self.tokens for w in sent]

    def sentence_offsets(self) -> list[int]:
        offsets, total = [], 0
        for sent in self.tokens:
            offsets.append(total)
            total += len(sent)
        return offsets

    def candidate_pairs(self) -> list[tuple[int, int]]:
        n = self.n_entities
        return [(s, o) for s in range(n) for o in range(n) if s != o]

    def to_docred(self) -> dict:
        """Serialize back to the DocRED JSON schema (sentence-relative spans)."""
        offsets = self.sentence_offsets()
        vertex_set = []
        for mentions in self.entities:
            vertex_set.append([
                {
                    "name": m.surface,
                    "sent_id": m.sentence_index,
                    "pos": [m.token_span[0] - offsets[m.sentence_index],
                            m.token_span[1] - offsets[m.sentence_index]],
                    "type": m.entity_type,
                }
                for m in mentions
            ])
        labels = [
            {"h": h, "t": t, "r": r, "evidence": list(self.evidence.get((h, r, t), ()))}
            for h, r, t in sorted(self.facts)
        ]
        out = {
            "title": self.doc_id,
            "sents": [list(s) for s in self.tokens],
            "vertexSet": vertex_set,
            "labels": labels,
        }
        if self.is_distant:
            out["is_distant"] = True
        return out


def parse_document(raw: Mapping, is_distant: bool | None = None) -> Document:
    for key in ("title", "sents", "vertexSet"):
        if key not in raw:
            raise SchemaError(f"document is missing required key {key!r}")
    doc_id = str(raw.get("doc_id", raw["title"]))
    sents = tuple(tuple(str(w) for w in s) for s in raw["sents"])
    offsets, total = [], 0
    for s in sents:
        offsets.append(total)
        total += len(s)

    entities = []
    for e_idx, vertex in enumerate(raw["vertexSet"]):
        if not vertex:
            raise SchemaError(f"{doc_id}: entity {e_idx} has no mentions")
        mentions = []
        for m_idx, m in enumerate(vertex):
            sid = m["sent_id"]
            start, end = m["pos"]
            where = f"{doc_id}: entity {e_idx} mention {m_idx} ({m.get('name', '')!r})"
            if not 0 <= sid < len(sents):
                raise SchemaError(f"{where}: sent_id {sid} out of range")
            if not 0 <= start < end <= len(sents[sid]):
                raise SchemaError(f"{where}: malformed span [{start}, {end})")
            mentions.append(Mention(
                entity_index=e_idx,
                sentence_index=sid,
                token_span=(offsets[sid] + start, offsets[sid] + end),
                surface=str(m.get("name", " ".join(sents[sid][start:end]))),
                entity_type=str(m.get("type", "")),
            ))
        entities.append(tuple(mentions))

    facts, evidence = set(), {}
    for lab in raw.get("labels", ()):
        h, t, r = int(lab["h"]), int(lab["t"]), str(lab["r"])
        if h == t:
            raise SchemaError(f"{doc_id}: fact ({h}, {r}, {t}) has head == tail")
        if not (0 <= h < len(entities) and 0 <= t < len(entities)):
            raise SchemaError(f"{doc_id}: fact ({h}, {r}, {t}) references a missing entity")
        facts.add((h, r, t))
        evidence.setdefault((h, r, t), tuple(lab.get("evidence", ())))

    if is_distant is None:
        is_distant = bool(raw.get("is_distant", False))
    return Document(doc_id, sents, tuple(entities), frozenset(facts), is_distant, evidence)


def load_corpus(path: str | Path, is_distant: bool | None = None) -> list[Document]:
    """Read a JSON array (or JSON-lines file) of DocRED documents."""
    text = Path(path).read_text(encoding="utf-8")
    stripped = text.lstrip()
    if stripped.startswith("["):
        raws = json.loads(text)
    else:
        raws = [json.loads(line) for line in text.splitlines() if line.strip()]
    return [parse_document(r, is_distant) for r in raws]


def save_corpus(docs: Iterable[Document], path: str | Path) -> None:
    atomic_write_text(path, json.dumps([d.to_docred() for d in docs]))


@dataclass(frozen=True)
class RelationSchema:
    """Ordered relation ids; logit index 0 is reserved for the TH class.

    Relation ``relation_ids[i]`` lives at logit index ``i + 1``.
    """

    relation_ids: tuple[str, ...]
    frequent_set: frozenset[str] = frozenset()
    th_index: int = 0

    def __post_init__(self):
        if len(set(self.relation_ids)) != len(self.relation_ids):
            raise SchemaError("duplicate relation ids in schema")

    @property
    def num_relations(self) -> int:
        return len(self.relation_ids)

    @property
    def num_classes(self) -> int:
        return len(self.relation_ids) + 1

    def index(self, relation_id: str) -> int:
        """0-based relation index (logit index minus one)."""
        try:
            return self._lookup[relation_id]
        except KeyError:
            raise SchemaError(f"unknown relation id {relation_id!r}") from None

    @cached_property
    def _lookup(self) -> dict[str, int]:
        return {r: i for i, r in enumerate(self.relation_ids)}

    def with_frequent_set(self, train_corpus: Sequence[Document], top_k: int = 10) -> "RelationSchema":
        counts = Counter(r for doc in train_corpus for _, r, _ in doc.facts)
        # ties broken by schema order so the split is deterministic
        ranked = sorted(self.relation_ids, key=lambda r: (-counts[r], self.index(r)))
        frequent = [r for r in ranked[:top_k] if counts[r] > 0]
        return RelationSchema(self.relation_ids, frozenset(frequent), self.th_index)

    def to_json(self) -> dict:
        return {"relation_ids": list(self.relation_ids), "frequent_set": sorted(self.frequent_set)}

    @classmethod
    def from_json(cls, obj: Mapping) -> "RelationSchema":
        return cls(tuple(obj["relation_ids"]), frozenset(obj.get("frequent_set", ())))


def load_schema(path: str | Path) -> RelationSchema:
    """Relation schema file: a JSON array of ids, a JSON object, or one id per line."""
    text = Path(path).read_text(encoding="utf-8").strip()
    if text.startswith("["):
        return RelationSchema(tuple(str(r) for r in json.loads(text)))
    if text.startswith("{"):
        obj = json.loads(text)
        if "relation_ids" in obj:
            return RelationSchema.from_json(obj)
        # DocRED rel2id.json style: {"Na": 0, "P17": 1, ...}
        ids = [r for r, _ in sorted(obj.items(), key=lambda kv: kv[1]) if r != "Na"]
        return RelationSchema(tuple(ids))
    return RelationSchema(tuple(line.strip() for line in text.splitlines() if line.strip()))


def schema_from_corpus(docs: Iterable[Document]) -> RelationSchema:
    return RelationSchema(tuple(sorted({r for d in docs for _, r, _ in d.facts})))


@dataclass
class LabelTensor:
    values: torch.Tensor  # n x n x |R|, float 0/1
    diagonal_mask: torch.Tensor  # n x n bool, False on the diagonal

    def to_facts(self, schema: RelationSchema) -> set[tuple[int, str, int]]:
        idx = self.values.nonzero().tolist()
        return {(s, schema.relation_ids[r], o) for s, o, r in idx}


def pair_mask(n: int) -> torch.Tensor:
    return ~torch.eye(n, dtype=torch.bool)


def build_label_tensor(doc: Document, schema: RelationSchema) -> LabelTensor:
    n = doc.n_entities
    values = torch.zeros(n, n, schema.num_relations)
    for h, r, t in doc.facts:
        values[h, t, schema.index(r)] = 1.0
    return LabelTensor(values, pair_mask(n))


def _normalize(surface: str) -> str:
    return re.sub(r"\s+", " ", surface).strip().casefold()


class FactIndex:
    """Set of training triples keyed by entity surface form.

    ``key="surface"`` keys an entity by its first mention's normalized surface
    (the leaderboard Ign_F1 convention); ``key="strict"`` uses the sorted tuple
    of all distinct normalized mention surfaces.
    """

    def __init__(self, keys: Iterable[tuple] = (), key: str = "surface"):
        if key not in ("surface", "strict"):
            raise ValueError(f"unknown entity key mode {key!r}")
        self.key_mode = key
        self._keys = set(keys)

    def entity_key(self, doc: Document, e: int):
        if self.key_mode == "surface":
            return _normalize(doc.entities[e][0].surface)
        return tuple(sorted({_normalize(m.surface) for m in doc.entities[e]}))

    def key_for(self, doc: Document, h: int, r: str, t: int) -> tuple:
        return (self.entity_key(doc, h), r, self.entity_key(doc, t))

    def add_document(self, doc: Document) -> None:
        for h, r, t in doc.facts:
            self._keys.add(self.key_for(doc, h, r, t))

    def __contains__(self, key) -> bool:
        return key in self._keys

    def __len__(self) -> int:
        return len(self._keys)

    def __iter__(self):
        return iter(self._keys)


def build_fact_index(train_corpus: Iterable[Document], key: str = "surface") -> FactIndex:
    index = FactIndex(key=key)
    for doc in train_corpus:
        if doc.is_distant:
            raise ValueError(f"{doc.doc_id}: fact index must be built from the annotated training split")
        index.add_document(doc)
    return index


@dataclass(frozen=True)
class CorpusStatistics:
    num_docs: int
    num_relations: int
    avg_entities_per_doc: float
    avg_mentions_per_entity: float
    avg_relations_per_doc: float


def corpus_statistics(corpus: Sequence[Document]) -> CorpusStatistics:
    if not corpus:
        raise EmptyCorpusError("corpus is empty")
    n_ent = sum(d.n_entities for d in corpus)
    n_men = sum(len(e) for d in corpus for e in d.entities)
    n_fact = sum(len(d.facts) for d in corpus)
    return CorpusStatistics(
        num_docs=len(corpus),
        num_relations=len({r for d in corpus for _, r, _ in d.facts}),
        avg_entities_per_doc=n_ent / len(corpus),
        avg_mentions_per_entity=n_men / n_ent if n_ent else 0.0,
        avg_relations_per_doc=n_fact / len(corpus),
    )
