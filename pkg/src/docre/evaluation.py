"""Micro P/R/F1 family and error analysis over relation triples.

A prediction (or gold) set holds ``(doc_id, head, tail, relation_id)`` tuples.
"""

from __future__ import annotations

import json
from collections import defaultdict
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from ._io import atomic_write_text
from .corpus import Document, FactIndex, RelationSchema

Triple = tuple[str, int, int, str]


@dataclass(frozen=True)
class PRF:
    precision: float
    recall: float
    f1: float
    n_pred: int = 0
    n_gold: int = 0
    n_correct: int = 0

    @property
    def empty_gold(self) -> bool:
        return self.n_gold == 0

    def __iter__(self):
        return iter((self.precision, self.recall, self.f1))


def validate(triples: Iterable[Triple], schema: RelationSchema | None = None) -> set[Triple]:
    out = set()
    for doc_id, s, o, r in triples:
        if s == o:
            raise ValueError(f"{doc_id}: triple ({s}, {r}, {o}) has head == tail")
        if schema is not None and r not in schema.relation_ids:
            raise ValueError(f"{doc_id}: relation {r!r} is not in the schema")
        out.add((doc_id, s, o, r))
    return out


def micro_f1(pred: Iterable[Triple], gold: Iterable[Triple]) -> PRF:
    pred, gold = set(pred), set(gold)
    tp = len(pred & gold)
    p = tp / len(pred) if pred else 0.0
    r = tp / len(gold) if gold else 0.0
    f = 2 * p * r / (p + r) if p + r else 0.0
    return PRF(p, r, f, len(pred), len(gold), tp)


def gold_triples(docs: Iterable[Document]) -> set[Triple]:
    return {(d.doc_id, h, t, r) for d in docs for h, r, t in d.facts}


def ign_f1(pred: Iterable[Triple], gold: Iterable[Triple], fact_index: FactIndex,
           documents: Mapping[str, Document]) -> PRF:
    """micro F1 after dropping every triple whose surface key is a training fact."""
    if len(fact_index) == 0:
        return micro_f1(pred, gold)

    def keep(t):
        doc_id, s, o, r = t
        return fact_index.key_for(documents[doc_id], s, r, o) not in fact_index

    return micro_f1({t for t in pred if keep(t)}, {t for t in gold if keep(t)})


def two_hop_subset(gold: Iterable[Triple]) -> set[Triple]:
    """Gold triples (s, r, o) with a bridge b, b not in {s, o}, such that
    (s, *, b) and (b, *, o) are gold in the same document."""
    out_edges: dict[tuple[str, int], set[int]] = defaultdict(set)
    gold = set(gold)
    for doc_id, s, o, _ in gold:
        out_edges[(doc_id, s)].add(o)
    subset = set()
    for t in gold:
        doc_id, s, o, _ = t
        for b in out_edges[(doc_id, s)]:
            if b != o and o in out_edges.get((doc_id, b), ()):
                subset.add(t)
                break
    return subset


def infer_f1(pred: Iterable[Triple], gold: Iterable[Triple]) -> PRF:
    subset = two_hop_subset(gold)
    pairs = {(d, s, o) for d, s, o, _ in subset}
    return micro_f1({t for t in pred if t[:3] in pairs}, subset)


def split_f1(pred: Iterable[Triple], gold: Iterable[Triple], schema: RelationSchema
             ) -> tuple[PRF, PRF]:
    """(frequent, long-tail) micro F1 by relation membership in the frequent set."""
    pred, gold = set(pred), set(gold)
    freq = schema.frequent_set

    def part(ts, inside):
        return {t for t in ts if (t[3] in freq) == inside}

    return micro_f1(part(pred, True), part(gold, True)), micro_f1(part(pred, False), part(gold, False))


def binary_f1(pred: Iterable[Triple], gold: Iterable[Triple]) -> PRF:
    return micro_f1({t[:3] for t in pred}, {t[:3] for t in gold})


@dataclass(frozen=True)
class ErrorCounts:
    """C/W/MR partition the predictions; the gold side splits into matched (C),
    unmatched on a predicted pair, and unmatched on an unpredicted pair.

    ``MS`` counts every unmatched gold triple; ``MS_pair`` only those on pairs
    that received no prediction (the pair-level reading of "missed").
    """

    C: int
    W: int
    MS: int
    MR: int
    MS_pair: int
    MS_on_predicted_pair: int
    MS_pairs: int  # number of distinct gold pairs with no prediction

    def as_dict(self) -> dict:
        return asdict(self)

    def percentages(self, base: str = "union") -> dict[str, float]:
        """Percent view; ``base="union"`` divides by C + W + MS + MR."""
        if base == "union":
            denom = self.C + self.W + self.MS + self.MR
        elif base == "union_pair":
            denom = self.C + self.W + self.MS_pair + self.MR
        else:
            raise ValueError(f"unknown percentage base {base!r}")
        keys = ("C", "W", "MS", "MR") if base == "union" else ("C", "W", "MS_pair", "MR")
        return {k: (100.0 * getattr(self, k) / denom if denom else 0.0) for k in keys}


def categorize(pred: Iterable[Triple], gold: Iterable[Triple]) -> dict[str, set[Triple]]:
    pred, gold = set(pred), set(gold)
    gold_pairs = {t[:3] for t in gold}
    pred_pairs = {t[:3] for t in pred}
    cats = {"C": set(), "W": set(), "MR": set(), "MS": set(), "MS_pair": set()}
    for t in pred:
        if t in gold:
            cats["C"].add(t)
        elif t[:3] in gold_pairs:
            cats["W"].add(t)
        else:
            cats["MR"].add(t)
    for t in gold - pred:
        cats["MS"].add(t)
        if t[:3] not in pred_pairs:
            cats["MS_pair"].add(t)
    return cats


def error_categories(pred: Iterable[Triple], gold: Iterable[Triple]) -> ErrorCounts:
    pred, gold = set(pred), set(gold)
    cats = categorize(pred, gold)
    return ErrorCounts(
        C=len(cats["C"]), W=len(cats["W"]), MS=len(cats["MS"]), MR=len(cats["MR"]),
        MS_pair=len(cats["MS_pair"]),
        MS_on_predicted_pair=len(cats["MS"]) - len(cats["MS_pair"]),
        MS_pairs=len({t[:3] for t in cats["MS_pair"]}),
    )


@dataclass
class EvalReport:
    precision: float
    recall: float
    f1: float
    ign_f1: float
    infer_f1: float
    frequent_f1: float
    longtail_f1: float
    binary_f1: float | None  # None unless requested
    error_counts: dict = field(default_factory=dict)
    details: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        return asdict(self)

    def table(self) -> str:
        rows = [("P", self.precision), ("R", self.recall), ("F1", self.f1),
                ("Ign_F1", self.ign_f1), ("Infer_F1", self.infer_f1),
                ("Frequent_F1", self.frequent_f1), ("LongTail_F1", self.longtail_f1)]
        if self.binary_f1 is not None:
            rows.append(("Binary_F1", self.binary_f1))
        width = max(len(k) for k in [name for name, _ in rows] + list(self.error_counts))
        lines = [f"{name:<{width}} {100 * v:6.2f}" for name, v in rows]
        lines += [f"{k:<{width}} {v:6d}" for k, v in self.error_counts.items()]
        return "\n".join(lines)


REPORT_SCHEMA = {
    "type": "object",
    "required": ["precision", "recall", "f1", "ign_f1", "infer_f1", "frequent_f1",
                 "longtail_f1", "binary_f1", "error_counts"],
    "properties": {
        **{k: {"type": "number", "minimum": 0, "maximum": 1}
           for k in ("precision", "recall", "f1", "ign_f1", "infer_f1", "frequent_f1",
                     "longtail_f1")},
        "binary_f1": {"type": ["number", "null"], "minimum": 0, "maximum": 1},
        "error_counts": {
            "type": "object",
            "required": ["C", "W", "MS", "MR"],
            "additionalProperties": {"type": "integer", "minimum": 0},
        },
        "details": {"type": "object"},
    },
}


def evaluate(pred: Iterable[Triple], docs: Sequence[Document], schema: RelationSchema,
             fact_index: FactIndex | None = None, binary: bool = True) -> EvalReport:
    pred = set(pred)
    gold = gold_triples(docs)
    by_id = {d.doc_id: d for d in docs}
    overall = micro_f1(pred, gold)
    ign = ign_f1(pred, gold, fact_index, by_id) if fact_index is not None else overall
    infer = infer_f1(pred, gold)
    freq, tail = split_f1(pred, gold, schema)
    scores = [("overall", overall), ("ign", ign), ("infer", infer),
              ("frequent", freq), ("longtail", tail)]
    if binary:
        scores.append(("binary", binary_f1(pred, gold)))
    errors = error_categories(pred, gold)
    details = {
        name: {"precision": m.precision, "recall": m.recall, "f1": m.f1, "n_pred": m.n_pred,
               "n_gold": m.n_gold, "n_correct": m.n_correct, "empty_gold": m.empty_gold}
        for name, m in scores
    }
    return EvalReport(overall.precision, overall.recall, overall.f1, ign.f1, infer.f1,
                      freq.f1, tail.f1, details["binary"]["f1"] if binary else None,
                      errors.as_dict(), details)


def to_leaderboard(pred: Iterable[Triple], documents: Mapping[str, Document] | None = None) -> list[dict]:
    """Leaderboard rows: {title, h_idx, t_idx, r}, sorted for stable output."""
    rows = []
    for doc_id, s, o, r in sorted(pred):
        title = documents[doc_id].doc_id if documents else doc_id
        rows.append({"title": title, "h_idx": s, "t_idx": o, "r": r})
    return rows


def from_leaderboard(rows: Iterable[Mapping]) -> set[Triple]:
    return {(str(x["title"]), int(x["h_idx"]), int(x["t_idx"]), str(x["r"])) for x in rows}


def save_predictions(pred: Iterable[Triple], path: str | Path) -> None:
    atomic_write_text(path, json.dumps(to_leaderboard(pred), indent=1))


def load_predictions(path: str | Path) -> set[Triple]:
    return from_leaderboard(json.loads(Path(path).read_text(encoding="utf-8")))
