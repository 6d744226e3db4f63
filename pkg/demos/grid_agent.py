"""The 10x10 age grid: imbalance-weighted rewards and a Double-DQN agent on toy embeddings.

Run: python3 demos/grid_agent.py
"""
import numpy as np

from lragnn import numerics as nx
from lragnn import rl

table = rl.ImbalanceTable.from_ages([25] * 90 + [55] * 10)
target = rl.encode_age(57)
print("reward map towards age 57 (ratio 9 for decade 5):")
for r in range(10):
    print(" ".join(f"{rl.reward(rl.GridPosition(r, c), target, table):6.1f}" for c in range(10)))

rng = np.random.default_rng(4)
ages = np.concatenate([rng.integers(20, 30, 180), rng.integers(50, 60, 20)])
emb = np.stack([np.sin(ages / 99 * np.pi * k + k) for k in range(1, 9)], axis=1)
store = nx.ParamStore()
rl.init_q_params(store, rng, 8, 32)
before = np.abs(rl.predict_ages(store, emb) - ages).mean()
log = rl.train_prlae(emb, ages, store, rl.RLConfig(epochs=20, lr=3e-3), np.random.default_rng(5))
after = rl.predict_ages(store, emb)
print(f"\nMAE before {before:.2f}, after {np.abs(after - ages).mean():.2f} "
      f"({log.steps} transitions)")
print(f"minority decade MAE {np.abs(after - ages)[ages >= 50].mean():.2f}")
