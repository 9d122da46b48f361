"""
From tokens to entity pair features
===================================

Mentions are wrapped in marker tokens, the encoder runs over the marked
sequence, and each entity is pooled from its mention markers.
"""

import torch

from docre.corpus import parse_document
from docre.encoder import (
    ContextFusion, ToyTransformer, Vocab, context_vector, fuse_context, insert_markers,
    pool_entity, pool_entity_attention,
)

raw = {
    "title": "demo",
    "sents": [["Ada", "works", "at", "Acme", "."], ["Acme", "hired", "her", "in", "May", "."]],
    "vertexSet": [
        [{"name": "Ada", "sent_id": 0, "pos": [0, 1], "type": "PER"}],
        [{"name": "Acme", "sent_id": 0, "pos": [3, 4], "type": "ORG"},
         {"name": "Acme", "sent_id": 1, "pos": [0, 1], "type": "ORG"}],
    ],
    "labels": [{"h": 0, "t": 1, "r": "employer", "evidence": [0]}],
}
doc = parse_document(raw)
vocab = Vocab.from_documents([doc])

marked = insert_markers(doc, vocab)
print(" ".join(marked.tokens))
positions = marked.entity_positions(doc.n_entities)
print("marker positions per entity:", positions)

torch.manual_seed(0)
encoder = ToyTransformer(len(vocab)).eval()
with torch.no_grad():
    hidden, attn = encoder.encode(torch.tensor([marked.ids]))
hidden, attn = hidden[0], attn[0]   # (l, d), (heads, l, l)

# logsumexp pooling: a smooth max over mentions
h_ada = pool_entity(hidden[positions[0]])
h_acme = pool_entity(hidden[positions[1]])
print("Acme pooled - max mention:", (h_acme - hidden[positions[1]].max(0).values).max().item())

# identical mentions add exactly ln 2
print(pool_entity(torch.stack([h_ada, h_ada]))[:3] - h_ada[:3])

# pair-specific context from the overlap of the two entities' attention
a_s = pool_entity_attention(attn, positions[0])
a_o = pool_entity_attention(attn, positions[1])
c = context_vector(a_s, a_o, hidden)
z_s = fuse_context(h_ada, c, ContextFusion(hidden.shape[-1]))
print("fused subject feature:", z_s.shape, float(z_s.detach().abs().max()))
