"""
Focal exponent grid
===================

Train the long-tail synthetic corpus once per gamma and report frequent and
tail F1 per setting. This is the only tuning helper shipped; it is a plain
loop, not a search framework.

    python3 demos/gamma_grid.py --gammas 0 0.5 1 2 --seeds 0 1
"""

import argparse
import json
import statistics

from docre.encoder import Vocab
from docre.evaluation import gold_triples, micro_f1, split_f1
from docre.losses import LossConfig
from docre.model import ModelConfig
from docre.synthetic import longtail_corpus
from docre.training import RelationExtractor, StageConfig, train_stage

parser = argparse.ArgumentParser(description=__doc__.strip().splitlines()[0])
parser.add_argument("--gammas", type=float, nargs="+", default=[0.0, 0.5, 1.0, 2.0])
parser.add_argument("--seeds", type=int, nargs="+", default=[0])
parser.add_argument("--docs", type=int, default=600)
parser.add_argument("--epochs", type=int, default=30)
parser.add_argument("--out", help="optional JSON file for the raw results")
args = parser.parse_args()

rows = []
for gamma in args.gammas:
    for seed in args.seeds:
        train, schema = longtail_corpus(args.docs, seed=1000 + seed)
        dev, _ = longtail_corpus(args.docs // 3, seed=2000 + seed)
        ex = RelationExtractor.create(ModelConfig(), Vocab.from_documents(train + dev), schema, seed)
        train_stage(ex, train, StageConfig(epochs=args.epochs, lr=2e-3, batch_size=8),
                    LossConfig(gamma=gamma), seed)
        pred, gold = ex.predict(dev), gold_triples(dev)
        freq, tail = split_f1(pred, gold, schema)
        rows.append({"gamma": gamma, "seed": seed, "f1": micro_f1(pred, gold).f1,
                     "frequent_f1": freq.f1, "tail_f1": tail.f1})

print(f"{'gamma':>6} {'F1':>7} {'freq':>7} {'tail':>7}")
for gamma in args.gammas:
    sel = [r for r in rows if r["gamma"] == gamma]
    med = {k: statistics.median(r[k] for r in sel) for k in ("f1", "frequent_f1", "tail_f1")}
    print(f"{gamma:6.2f} {med['f1']:7.3f} {med['frequent_f1']:7.3f} {med['tail_f1']:7.3f}")
if args.out:
    with open(args.out, "w") as fh:
        json.dump(rows, fh, indent=1)
