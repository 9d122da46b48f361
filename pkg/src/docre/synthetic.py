"""Synthetic DocRED-schema corpora for desk-scale experiments.

Every generator is a pure function of its seed. Relations are expressed in
text by trigger tokens placed between the two mentions ("H trig T ."); some
generators also add labels that are never expressed locally (two-hop facts)
or corrupt labels the way distant supervision does.
"""

from __future__ import annotations

import random
from dataclasses import dataclass
from typing import Sequence

from .corpus import Document, Mention, RelationSchema

FILLERS = tuple(f"w{i}" for i in range(24))
NAMES = tuple(f"n{i}" for i in range(80))


def _triggers(rel: str, count: int = 2) -> tuple[str, ...]:
    return tuple(f"t_{rel}_{i}" for i in range(count))


@dataclass(frozen=True)
class _Sentence:
    words: tuple[str, ...]
    slots: tuple[tuple[int, int, int], ...]  # (entity, start, end) within the sentence


def _fillers(rng: random.Random, lo: int, hi: int) -> list[str]:
    return [rng.choice(FILLERS) for _ in range(rng.randint(lo, hi))]


def _fact_sentence(rng, h, t, rels, names) -> _Sentence:
    words = _fillers(rng, 0, 2)
    slots = []
    start = len(words)
    words += names[h]
    slots.append((h, start, len(words)))
    words += _fillers(rng, 0, 1)
    for r in rels:
        words.append(rng.choice(_triggers(r)))
    words += _fillers(rng, 0, 1)
    start = len(words)
    words += names[t]
    slots.append((t, start, len(words)))
    words += _fillers(rng, 0, 2) + ["."]
    return _Sentence(tuple(words), tuple(slots))


def _mention_sentence(rng, e, names) -> _Sentence:
    words = _fillers(rng, 0, 2)
    start = len(words)
    words += names[e]
    slot = (e, start, len(words))
    words += _fillers(rng, 1, 3) + ["."]
    return _Sentence(tuple(words), (slot,))


class _Names:
    """Surface forms; with ``aliases`` every mention of an entity gets a fresh name."""

    def __init__(self, rng: random.Random, aliases: bool):
        self.rng, self.aliases = rng, aliases
        self.pool = list(NAMES)
        rng.shuffle(self.pool)
        self.fixed: dict[int, list[str]] = {}

    def _draw(self) -> list[str]:
        if not self.pool:
            self.pool = list(NAMES)
            self.rng.shuffle(self.pool)
        first = self.pool.pop()
        return [first] if self.rng.random() < 0.7 else [first, self.rng.choice(NAMES)]

    def __getitem__(self, e: int) -> list[str]:
        if self.aliases:
            return self._draw()
        if e not in self.fixed:
            self.fixed[e] = self._draw()
        return self.fixed[e]


def render(doc_id: str, n_entities: int, expressed: dict[tuple[int, int], Sequence[str]],
           labels: set[tuple[int, str, int]], rng: random.Random, is_distant: bool = False,
           shuffle: bool = True, aliases: bool = False) -> Document:
    """Build a document whose sentences express ``expressed`` pair -> relations,
    labeled with ``labels`` (which may include facts not expressed)."""
    names = _Names(rng, aliases)
    sentences = [_fact_sentence(rng, h, t, rels, names) for (h, t), rels in expressed.items()]
    covered = {e for s in sentences for e, _, _ in s.slots}
    sentences += [_mention_sentence(rng, e, names) for e in range(n_entities) if e not in covered]
    if shuffle:
        rng.shuffle(sentences)

    mentions: list[list[Mention]] = [[] for _ in range(n_entities)]
    offset = 0
    for sid, sent in enumerate(sentences):
        for e, start, end in sent.slots:
            mentions[e].append(Mention(e, sid, (offset + start, offset + end),
                                       " ".join(sent.words[start:end]), "ENT"))
        offset += len(sent.words)
    return Document(doc_id, tuple(s.words for s in sentences),
                    tuple(tuple(m) for m in mentions), frozenset(labels), is_distant)


def _random_pairs(rng, n, k, exclude=()):
    pairs = [(s, o) for s in range(n) for o in range(n) if s != o and (s, o) not in exclude]
    rng.shuffle(pairs)
    return pairs[:k]


def overfit_corpus(n_docs: int = 20, n_relations: int = 5, seed: int = 0
                   ) -> tuple[list[Document], RelationSchema]:
    """Small corpus of locally expressed facts, including a few multi-label pairs."""
    rng = random.Random(seed)
    rels = [f"R{i}" for i in range(n_relations)]
    docs = []
    for i in range(n_docs):
        n = rng.randint(4, 6)
        expressed = {}
        for s, o in _random_pairs(rng, n, rng.randint(2, 4)):
            if (o, s) in expressed:
                continue
            k = 2 if rng.random() < 0.15 else 1
            expressed[(s, o)] = rng.sample(rels, k)
        labels = {(s, r, o) for (s, o), rs in expressed.items() for r in rs}
        docs.append(render(f"overfit-{i}", n, expressed, labels, rng))
    return docs, RelationSchema(tuple(rels))


def composition_corpus(n_docs: int = 200, seed: int = 0) -> tuple[list[Document], RelationSchema]:
    """r3(a, c) holds iff r1(a, b) and r2(b, c); r3 is never written down.

    Each document holds one full chain a -r1-> b -r2-> c, a dead-end r1 edge
    x -> y (y has no r2 edge), a dangling r2 edge z -> w (z has no incoming
    r1 edge), and sometimes an unrelated r4/r5 fact. Every mention carries its
    own alias, so the only link between the bridge's two sentences is the
    entity grouping itself. Deciding r3(a, c) against the decoys (a, w),
    (x, c) and (x, w) therefore needs the partner's other facts.
    """
    rng = random.Random(seed)
    schema = RelationSchema(("r1", "r2", "r3", "r4", "r5"))
    docs = []
    for i in range(n_docs):
        n = rng.randint(7, 9)
        ents = list(range(n))
        rng.shuffle(ents)
        a, b, c, x, y, z, w = (ents.pop() for _ in range(7))
        expressed: dict[tuple[int, int], list[str]] = {
            (a, b): ["r1"], (b, c): ["r2"], (x, y): ["r1"], (z, w): ["r2"],
        }
        labels = {(a, "r1", b), (b, "r2", c), (a, "r3", c), (x, "r1", y), (z, "r2", w)}
        if len(ents) >= 2:
            s, o = ents[0], ents[1]
            r = rng.choice(("r4", "r5"))
            expressed[(s, o)] = [r]
            labels.add((s, r, o))
        docs.append(render(f"comp-{seed}-{i}", n, expressed, labels, rng, aliases=True))
    return docs, schema


def longtail_corpus(n_docs: int = 200, n_head: int = 4, n_tail: int = 4, skew: float = 10.0,
                    seed: int = 0, cooccur: float = 0.5) -> tuple[list[Document], RelationSchema]:
    """Head relations are ``skew`` times more frequent than tail relations.

    A tail fact shares its entity pair with a head fact with probability
    ``cooccur`` (multi-label pairs), otherwise it stands alone.
    """
    rng = random.Random(seed)
    head = [f"H{i}" for i in range(n_head)]
    tail = [f"T{i}" for i in range(n_tail)]
    schema = RelationSchema(tuple(head + tail))
    weights = [skew] * n_head + [1.0] * n_tail
    docs = []
    for i in range(n_docs):
        n = rng.randint(5, 8)
        expressed: dict[tuple[int, int], list[str]] = {}
        for s, o in _random_pairs(rng, n, rng.randint(2, 4)):
            if (o, s) in expressed:
                continue
            r = rng.choices(head + tail, weights)[0]
            rels = [r]
            if r in tail and rng.random() < cooccur:
                rels = [rng.choice(head), r]
            expressed[(s, o)] = rels
        labels = {(s, r, o) for (s, o), rs in expressed.items() for r in rs}
        docs.append(render(f"tail-{seed}-{i}", n, expressed, labels, rng))
    return docs, schema.with_frequent_set(docs, top_k=n_head)


def corrupt_labels(doc: Document, schema: RelationSchema, rng: random.Random,
                   flip_rate: float = 0.3, spurious_rate: float = 0.05) -> Document:
    """Distant-supervision style noise: drop each positive with ``flip_rate``
    and add a random relation to each candidate pair with ``spurious_rate``."""
    facts = {f for f in sorted(doc.facts) if rng.random() >= flip_rate}
    for s, o in doc.candidate_pairs():
        if rng.random() < spurious_rate:
            facts.add((s, rng.choice(schema.relation_ids), o))
    return Document(f"{doc.doc_id}", doc.tokens, doc.entities, frozenset(facts), True)


@dataclass
class DistantTestbed:
    train: list[Document]
    distant: list[Document]
    distant_gold: list[Document]
    dev: list[Document]
    schema: RelationSchema


def noisy_distant_testbed(n_train: int = 40, n_distant: int = 300, n_dev: int = 100,
                          n_relations: int = 6, flip_rate: float = 0.3,
                          spurious_rate: float = 0.05, seed: int = 0) -> DistantTestbed:
    """Gold corpora from one generator; the distant split gets corrupted labels."""
    rng = random.Random(seed)
    rels = [f"R{i}" for i in range(n_relations)]
    schema = RelationSchema(tuple(rels))

    def make(prefix, count):
        docs = []
        for i in range(count):
            n = rng.randint(4, 7)
            expressed = {}
            for s, o in _random_pairs(rng, n, rng.randint(2, 4)):
                if (o, s) not in expressed:
                    expressed[(s, o)] = [rng.choice(rels)]
            labels = {(s, r, o) for (s, o), rs in expressed.items() for r in rs}
            docs.append(render(f"{prefix}-{seed}-{i}", n, expressed, labels, rng))
        return docs

    train, gold_distant, dev = make("train", n_train), make("distant", n_distant), make("dev", n_dev)
    distant = [corrupt_labels(d, schema, rng, flip_rate, spurious_rate) for d in gold_distant]
    return DistantTestbed(train, distant, gold_distant, dev, schema.with_frequent_set(train))
