"""Instance recognition and local aggregation losses, with gradients checked numerically.

Run: python3 demos/02_losses_and_gradients.py
"""

import numpy as np

from vie import autodiff as ad
from vie.embedding import MemoryBank, SoftmaxParams, bank_init
from vie.losses import LossConfig, ir_loss, la_loss, regularizer
from vie.neighbors import NeighborSets, background_neighbors, close_neighbors, kmeans_fit

bank = MemoryBank(np.array([[1.0, 0.0], [0.0, 1.0], [-1.0, 0.0]]))
e = np.array([1.0, 0.0])
ir = ir_loss(0, e, bank, LossConfig("IR", softmax=SoftmaxParams(1.0), exact=True))
print(f"IR loss for instance 0: {ir.item():.5f}")

# LA pulls e toward its close neighbors C relative to its background B.
sets = NeighborSets(close=frozenset({0, 2}), background=frozenset({0, 1}))
la = la_loss(0, e, bank, LossConfig("LA", softmax=SoftmaxParams(1.0), la_neighbors=sets))
print(f"LA loss with C={{0,2}}, B={{0,1}}: {la.item():.5f}")

# With C = {i} and B = everything, LA is IR.
only_self = NeighborSets(frozenset({0}), frozenset(range(3)))
print("LA == IR when C={i}, B=all:",
      la_loss(0, e, bank, LossConfig("LA", softmax=SoftmaxParams(1.0), la_neighbors=only_self)).item() == ir.item())

# Neighbor sets come from the bank itself: k-means for C, kNN for B.
big = bank_init(40, 4, seed=3)
assign = kmeans_fit(big, 5, seed=0)
print("close neighbors of 0:", sorted(close_neighbors(assign, 0)))
print("8 background neighbors of 0:", sorted(background_neighbors(big, 0, 8)))

# Gradients through a small linear map, checked against central differences.
x = np.random.default_rng(0).standard_normal(3)
cfg = LossConfig("LA", lam=1e-3, softmax=SoftmaxParams(0.1),
                 la_neighbors=NeighborSets(close_neighbors(assign, 0), background_neighbors(big, 0, 8)))


def loss(tape, p):
    emb = ad.l2_normalize(ad.matmul(x, p["w"]))
    return la_loss(0, emb, big, cfg, regularizer(p))


w0 = {"w": np.random.default_rng(1).standard_normal((3, 4))}
print(f"worst relative gradient error: {ad.finite_diff_check(loss, w0):.1e}")

# A few plain gradient steps lower the loss.
w = w0["w"]
for step in range(5):
    tape = ad.Tape()
    value = loss(tape, {"w": tape.parameter("w", w)})
    g = ad.backward(tape, value)["w"]
    print(f"step {step}: loss {value.item():.4f}")
    w = w - 0.05 * g
