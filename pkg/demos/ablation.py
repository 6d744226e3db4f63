"""Small ablation table over architecture and reward variants.

Run: python3 demos/ablation.py   (about two minutes; four validation samples sit in the minority decade,
so its column is coarse)
"""
from lragnn import pipeline
from lragnn.config import PipelineConfig
from lragnn.dataset import SyntheticSpec, generate_synthetic

weights = [0.0] * 10
weights[2], weights[5] = 9.0, 1.0
samples = generate_synthetic(SyntheticSpec(n_samples=150, distribution="imbalanced",
                                           group_weights=weights, seed=0))
cfg = PipelineConfig().replace(**{"optimizer.epochs": 15, "rl.epochs": 120,
                                  "gcn.depth": 4, "gcn.width": 32})
rows = pipeline.run_ablation(cfg, ["no-LRC", "no-DFE", "no-imbalance"], samples)
print(pipeline.ablation_table(rows))
