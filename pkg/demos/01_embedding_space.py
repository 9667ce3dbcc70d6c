"""Instance probabilities on the unit sphere, and the memory bank that feeds them.

Run: python3 demos/01_embedding_space.py
"""

import numpy as np

from vie.embedding import MemoryBank, SoftmaxParams, bank_init, instance_probability, normalize, set_probability

# Three bank rows on a circle; the query sits on the first one.
bank = MemoryBank(np.array([[1.0, 0.0], [0.0, 1.0], [-1.0, 0.0]]))
e = np.array([1.0, 0.0])
for tau in (1.0, 0.5, 0.07):
    probs = [instance_probability(i, e, bank, SoftmaxParams(tau)) for i in range(3)]
    print(f"tau={tau:<5} P(i|e) = {np.round(probs, 5)}")
# lower temperature concentrates mass on the nearest row

# A set probability is the sum over its members.
print("P({0,1}|e) at tau=1:", round(set_probability([0, 1], e, bank, SoftmaxParams(1.0)), 5))

# With a big bank the denominator is estimated from a random subset of Q rows, rescaled by N/Q.
big = bank_init(2000, 16, seed=0)
q = normalize(np.random.default_rng(1).standard_normal(16))
exact = instance_probability(7, q, big, SoftmaxParams(0.5))
rng = np.random.default_rng(2)
est = [instance_probability(7, q, big, SoftmaxParams(0.5, subset_size=64), exact=False, rng=rng) for _ in range(2000)]
print(f"exact {exact:.3e}  mean of Q=64 estimates {np.mean(est):.3e}")

# Bank rows are running averages kept on the sphere.
row = MemoryBank(np.array([[1.0, 0.0, 0.0]]), momentum=0.5)
target = normalize([0.0, 1.0, 1.0])
for step in range(1, 31):
    row.update(0, target)
    if step in (1, 5, 10, 30):
        print(f"after {step:2d} updates: distance to target {np.linalg.norm(row.rows[0] - target):.2e}")
