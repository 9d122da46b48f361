"""
Training on a synthetic corpus and reading the report
=====================================================

Memorize a 20-document corpus with the toy encoder, then score it with the
full metric suite.
"""

from docre import RelationExtractor, StageConfig, evaluate, train_stage
from docre.corpus import build_fact_index
from docre.encoder import Vocab
from docre.evaluation import gold_triples, micro_f1
from docre.losses import LossConfig
from docre.model import ModelConfig
from docre.synthetic import overfit_corpus

docs, schema = overfit_corpus(20, 5, seed=0)
schema = schema.with_frequent_set(docs, top_k=2)   # two most common relations are "frequent"
print(len(docs), "documents;", schema.num_relations, "relations:", schema.relation_ids)
print(" ".join(docs[0].words[:30]), "...")

ex = RelationExtractor.create(ModelConfig(), Vocab.from_documents(docs), schema, seed=0)
gold = gold_triples(docs)


def progress(epoch, model):
    if epoch % 20 == 19:
        print(f"epoch {epoch + 1:3d}  train F1 {micro_f1(model.predict(docs), gold).f1:.3f}")
    return {}


train_stage(ex, docs, StageConfig(epochs=80, lr=2e-3, batch_size=4), LossConfig(), seed=0,
            on_epoch=progress)

report = evaluate(ex.predict(docs), docs, schema, build_fact_index(docs[:10]))
print(report.table())
