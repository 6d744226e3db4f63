"""Reverse-mode gradients on a tiny two-layer net, checked by central differences.

Run: python3 demos/autodiff_gradcheck.py
"""
import numpy as np

from lragnn import numerics as nx
from lragnn.pipeline import run_gradcheck

rng = np.random.default_rng(0)
store = nx.ParamStore()
store.add("W1", rng.normal(size=(4, 6)))
store.add("W2", rng.normal(size=(6, 3)))
x = rng.normal(size=(5, 4))
labels = np.eye(3)[rng.integers(0, 3, size=5)]


def loss(tape):
    h = nx.relu(nx.matmul(x, tape.param("W1")))
    p = nx.row_softmax(nx.matmul(h, tape.param("W2")))
    return nx.neg(nx.mean(nx.sum(nx.mul(labels, nx.log(p)), axis=-1)))


tape = nx.Tape(store)
out = loss(tape)
tape.backward(out)
print(f"loss {float(nx.value(out)):.6f}")
print("analytic dL/dW2[0]:", np.round(store["W2"].grad[0], 6))
tape.release()

report = nx.grad_check(loss, store, epsilon=1e-5, tolerance=1e-6)
print(report.summary())

# the same check over the whole feature extractor and Q network
print(run_gradcheck().summary())
