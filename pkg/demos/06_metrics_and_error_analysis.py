"""
Metrics and error categories
============================

Triples are (doc_id, subject, object, relation). Everything below is plain
set arithmetic, so small hand-made examples are easy to check.
"""

from docre.corpus import RelationSchema
from docre.evaluation import (
    binary_f1, categorize, error_categories, infer_f1, micro_f1, split_f1, two_hop_subset,
)

gold = {
    ("d", 0, 1, "r1"), ("d", 1, 2, "r2"), ("d", 0, 2, "r3"),   # r3 has bridge 1
    ("d", 3, 4, "r1"),
}
pred = {
    ("d", 0, 1, "r1"),          # correct
    ("d", 1, 2, "r1"),          # wrong relation on a related pair
    ("d", 2, 4, "r2"),          # more: pair has no gold relation
    ("d", 0, 2, "r3"),          # correct, two-hop
}

print("micro ", micro_f1(pred, gold))
print("binary", binary_f1(pred, gold))
print("two-hop gold subset:", two_hop_subset(gold))
print("infer ", infer_f1(pred, gold))

schema = RelationSchema(("r1", "r2", "r3"), frozenset({"r1"}))
frequent, tail = split_f1(pred, gold, schema)
print("frequent", frequent.f1, "tail", tail.f1)

counts = error_categories(pred, gold)
print(counts.as_dict())
assert counts.C + counts.W + counts.MR == len(pred)
for name, triples in categorize(pred, gold).items():
    print(f"{name:<8}", sorted(triples))
