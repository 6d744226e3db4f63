"""Latent relation graphs from multi-head attention, masked by the face structure.

Run: python3 demos/attention_relations.py
"""
import numpy as np

from lragnn.attention import attention_scores, generate_head_set, init_head
from lragnn.graph import build_initial_graph

rng = np.random.default_rng(2)
x = rng.normal(size=(6, 8))
g = build_initial_graph(x, threshold=0.2)
heads = [init_head(rng, 8, 4) for _ in range(3)]

s = attention_scores(x, heads[0])
print("head 0 scores, row sums:", np.round(s.sum(axis=1), 12))
rel = generate_head_set(g, heads)
for m, a in enumerate(rel.adjacencies):
    print(f"head {m}: nonzero {np.count_nonzero(a)} of {a.size}, max {a.max():.3f}")

perm = rng.permutation(6)
moved = generate_head_set(g.__class__(x[perm], g.adjacency[np.ix_(perm, perm)]), heads)
diff = max(np.abs(a[np.ix_(perm, perm)] - b).max() for a, b in zip(rel.adjacencies, moved.adjacencies))
print(f"permutation equivariance error {diff:.2e}")
