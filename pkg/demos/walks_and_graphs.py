"""Face graph construction followed by biased random-walk edge enrichment.

Run: python3 demos/walks_and_graphs.py
"""
import numpy as np

from lragnn.graph import FaceGraph, build_initial_graph
from lragnn.walks import WalkConfig, cooccurrence_profiles, enrich_graph, next_step_distribution, sample_walks

# a triangle with a tail: 0-1-2-0 and 2-3
adj = np.zeros((4, 4))
for i, j in [(0, 1), (1, 2), (0, 2), (2, 3)]:
    adj[i, j] = adj[j, i] = 1
tri = FaceGraph(np.eye(4), adj)
for p, q in [(1.0, 1.0), (0.5, 2.0), (2.0, 0.5)]:
    nbrs, probs = next_step_distribution(tri, 0, 2, WalkConfig(p=p, q=q))
    print(f"p={p} q={q}: from 0 at 2 ->", dict(zip(nbrs.tolist(), np.round(probs, 4).tolist())))

rng = np.random.default_rng(1)
x = rng.normal(size=(12, 8))
g = build_initial_graph(x, threshold=0.3)
cfg = WalkConfig(walks_per_node=10, walk_length=20, window=4, tau=0.824)
walks = sample_walks(g, cfg, seed=7)
print(f"\n{len(walks)} walks, first: {walks.walks[0][:10]}")
profiles = cooccurrence_profiles(walks, cfg.window, g.n_nodes)
enriched = enrich_graph(g, cfg, seed=7)
print(f"edges before {int(g.adjacency.sum() // 2)}, after {int(enriched.adjacency.sum() // 2)}")
assert np.all(enriched.adjacency >= g.adjacency)
