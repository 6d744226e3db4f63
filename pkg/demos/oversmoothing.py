"""Depth sweep: node embeddings collapse under plain GCN layers but not with gated residuals.

Run: python3 demos/oversmoothing.py
"""
import numpy as np

from lragnn.attention import generate_head_set, init_head
from lragnn.gcn import LayerParams, forward_stack, init_layer_params, mean_pairwise_distance
from lragnn.graph import build_initial_graph
from lragnn.walks import WalkConfig, enrich_graph

rng = np.random.default_rng(3)
x = rng.normal(size=(30, 16))
g = enrich_graph(build_initial_graph(x, 0.3), WalkConfig(), 3)
rel = generate_head_set(g, [init_head(rng, 16, 8) for _ in range(2)])
params = init_layer_params(rng, 16, 16, 32)

print("depth  lra        resgcn     gcn")
for depth in (2, 4, 8, 16, 32):
    sub = LayerParams(params.input_proj, params.W[:depth], params.gate_beta[:depth], params.gate_alpha[:depth])
    row = [mean_pairwise_distance(forward_stack(rel, sub, mode=m).fused_nodes)
           for m in ("lra", "resgcn", "gcn")]
    print(f"{depth:5d}  " + "  ".join(f"{d:9.3g}" for d in row))

out = forward_stack(rel, params, mode="lra")
print("\nmean beta per layer :", np.round(out.diagnostics["beta_mean"][:8], 3), "...")
print("mean alpha per layer:", np.round(out.diagnostics["alpha_mean"][:8], 3), "...")
