"""
The entity-pair matrix and axial attention
==========================================

A grouped bilinear layer scores every ordered pair into a d-dimensional
cell. Axial attention then lets cell (s, o) read its own column (every
(p, o)) and its own row (every (s, p)). Those are exactly the one-hop
neighbours on a two-hop path s -> p -> o.
"""

import torch

from docre.pairrep import AxialAttention, GroupedBilinear, axial_attention, build_pair_matrix

torch.manual_seed(0)
n, d = 4, 8
z = torch.randn(n, n, d)                      # z[s, o]: fused subject feature for pair (s, o)
pm = build_pair_matrix(z, z.transpose(0, 1), GroupedBilinear(d, 4))
print("pair matrix", tuple(pm.G.shape), "diagonal zeroed:", pm.G.diagonal().abs().sum().item() == 0)

layer = AxialAttention(d)
R = axial_attention(pm, layer)

# with zero query/key projections attention is uniform, so the update is
# the column mean plus the row mean of the value projection
with torch.no_grad():
    layer.query.weight.zero_()
    layer.key.weight.zero_()
G = pm.G
V = layer.value(G)
expected = G + V.mean(0, keepdim=True) + V.mean(1, keepdim=True)
print("uniform check:", torch.allclose(layer(G), expected, atol=1e-6))

# relabelling entities permutes the output the same way
perm = torch.tensor([2, 0, 3, 1])
print("equivariant:", torch.allclose(layer(G[perm][:, perm]), layer(G)[perm][:, perm], atol=1e-5))

# a perturbation at (0, 1) reaches (0, 3) through the row and (2, 1) through the column, not (2, 3)
bumped = G.clone()
bumped[0, 1] += 1
delta = (layer(bumped) - layer(G)).detach().norm(dim=-1)
print(delta)
