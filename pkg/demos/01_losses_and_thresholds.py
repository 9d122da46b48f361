"""
Losses over a learned threshold class
=====================================

Every entity pair gets c = |R| + 1 logits. Index 0 is the TH class; a
relation is predicted when its logit is strictly above TH.
"""

import torch

from docre import LossConfig, afl_loss, atl_loss, decide

# three relations, pair labelled with relations 0 and 2
logits = torch.tensor([0.5, 2.0, -1.0, 0.4], requires_grad=True)
labels = torch.tensor([1.0, 0.0, 1.0])

print("predicted relations:", decide(logits.detach()))   # {0}: relation 2 sits below TH

# AFL ranks each positive against TH on its own, scaled by a focal weight.
# ATL puts all positives in one softmax with TH, so they compete.
for gamma in (0.0, 0.5, 2.0):
    print(f"AFL gamma={gamma}: {afl_loss(logits, labels, gamma).item():.4f}")
print(f"ATL:           {atl_loss(logits, labels).item():.4f}")

# with gamma = 0 and a single positive the two losses agree
one = torch.tensor([1.0, 0.0, 0.0])
print(afl_loss(logits, one, 0.0).item(), atl_loss(logits, one).item())

# the focal weight shrinks the gradient on positives that already clear TH
loss = afl_loss(logits, labels, 0.5)
loss.backward()
print("gradient:", logits.grad)

# "no relation" is an all-zero label row; only the TH-vs-negatives term remains
print("NR loss:", afl_loss(torch.tensor([1.0, -2.0, -2.0, -2.0]), torch.zeros(3)).item())
print(LossConfig())
