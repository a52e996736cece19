"""The two attention forms, side by side.

Additive attention scores every position pair through a small feed-forward
network; multi-head attention splits the feature space into subspaces and
uses scaled dot products.  Neither knows about positions, so permuting a
sequence permutes the output identically, and attention weights over real
tokens always form a distribution while padding gets exactly zero weight.
"""

import numpy as np

from argseg.layers import AdditiveSelfAttention, MultiHeadSelfAttention, choose_heads
from argseg.numeric import BatchTensor

rng = np.random.default_rng(7)

print("== head-count rule ==")
for dim in (300, 3072, 4196):
    print(f"feature dim {dim:5d} -> {choose_heads(dim)} heads "
          f"(largest divisor capped at 6)")
print()

dim = 6
values = rng.standard_normal((1, 5, dim))
mask = np.ones((1, 5), dtype=bool)
mask[0, -1] = False  # last position is padding
values[0, -1] = 0.0
x = BatchTensor(values, mask)

additive = AdditiveSelfAttention(dim, rng, attn_dim=8)
multihead = MultiHeadSelfAttention(dim, heads=2, rng=rng)

out_add, cache_add = additive.forward(x)
out_mha, cache_mha = multihead.forward(x)
alpha_add = cache_add[4]
alpha_mha = cache_mha[5]

print("== additive attention weights (rows: query, cols: key) ==")
print(np.round(alpha_add[0, :4], 3))
print("rows sum to", alpha_add[0, :4].sum(axis=1))
print("padded key column:", alpha_add[0, :4, 4], "\n")

print("== one multi-head head, same contract ==")
print(np.round(alpha_mha[0, 0, :4], 3))
print()

print("== permutation equivariance ==")
perm = rng.permutation(4)
values_perm = values.copy()
values_perm[0, :4] = values[0, perm]
out_perm, _ = additive.forward(BatchTensor(values_perm, mask))
drift = np.abs(out_perm.values[0, :4] - out_add.values[0, perm]).max()
print(f"permuted input vs permuted output: max deviation {drift:.2e}")
