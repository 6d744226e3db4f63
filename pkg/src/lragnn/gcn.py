"""Deep residual graph convolution over the attention relation graphs.

Three layer rules are available:

``"lra"``
    adaptive initial residual followed by the dynamic developmental gate
    (the default);
``"gcn"``
    plain ``ReLU(Â H W)``;
``"resgcn"``
    ``ReLU((1-α) Â H W + α H_prev)`` with a fixed ``α``.

All functions accept arrays or tape variables and broadcast over leading
batch/head axes, so the same code serves evaluation and training.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import numerics as nx
from .attention import RelationGraphSet
from .errors import DimensionError, DomainError

DEFAULT_DEPTH = 12
DEFAULT_WIDTH = 64
BETA_MIN = 0.05
_COS_EPS = 1e-24


@dataclass
class BetaGate:
    weight: object  # (2d, 1); first d rows act on H0, last d on the current layer
    bias: object    # (1, 1)


@dataclass
class LayerParams:
    input_proj: object                 # (n_features, d)
    W: list                            # L x (d, d)
    gate_beta: list                    # L x BetaGate
    gate_alpha: list                   # L x (1, 2): scale a_l, shift b_l

    @property
    def depth(self) -> int:
        return len(self.W)

    @property
    def width(self) -> int:
        return nx.value(self.input_proj).shape[-1]


@dataclass
class StackOutput:
    node_embeddings: object   # (..., M, N, d)
    fused_nodes: object       # (..., N, d)
    graph_embedding: object   # (..., d)
    diagnostics: dict = field(default_factory=dict)


def init_layer_params(rng: np.random.Generator, n_features: int, width: int, depth: int,
                      alpha_init=(0.0, 0.0)) -> LayerParams:
    return LayerParams(
        input_proj=nx.glorot_uniform(rng, n_features, width),
        W=[nx.glorot_uniform(rng, width, width) for _ in range(depth)],
        gate_beta=[BetaGate(nx.glorot_uniform(rng, 2 * width, 1), np.zeros((1, 1)))
                   for _ in range(depth)],
        gate_alpha=[np.array([list(alpha_init)], dtype=np.float64) for _ in range(depth)],
    )


def normalize_adjacency(a):
    """``D^-1/2 (A + I) D^-1/2`` with degrees taken as row sums of ``A + I``."""
    av = nx.value(a)
    if av.shape[-1] != av.shape[-2]:
        raise DimensionError(f"adjacency must be square, got {av.shape}")
    if np.any(av < 0):
        raise DomainError("adjacency has negative entries")
    a_tilde = nx.add(a, np.eye(av.shape[-1]))
    d_inv_sqrt = nx.power(nx.sum(a_tilde, axis=-1, keepdims=True), -0.5)
    return nx.mul(nx.mul(d_inv_sqrt, a_tilde), nx.transpose(d_inv_sqrt))


def gcn_layer(h, a_norm, w):
    return nx.relu(nx.matmul(nx.matmul(a_norm, h), w))


def res_gcn_layer(h_l, h_prev, a_norm, w, alpha: float):
    if not 0.0 <= alpha <= 1.0:
        raise DomainError(f"alpha={alpha} outside [0, 1]")
    return nx.relu(nx.add(nx.mul(1.0 - alpha, nx.matmul(nx.matmul(a_norm, h_l), w)),
                          nx.mul(alpha, h_prev)))


def beta_gate_values(h_l, h0, gate: BetaGate, beta_min: float = BETA_MIN):
    d = nx.value(h0).shape[-1]
    w = gate.weight
    logits = nx.add(nx.add(nx.matmul(h0, nx.getitem(w, slice(0, d))),
                           nx.matmul(h_l, nx.getitem(w, slice(d, 2 * d)))), gate.bias)
    return nx.maximum(nx.sigmoid(logits), beta_min)


def adaptive_initial_residual(h_l, h0, gate_beta: Optional[BetaGate], a_norm,
                              beta_min: float = BETA_MIN, beta=None):
    """Per-node blend of the propagated state with the initial embedding.

    ``beta`` pins the gate (scalar or per-node array) and bypasses both the
    learned gate and the floor.  Returns ``(h_tilde, beta)`` with ``beta`` of
    shape ``(..., N, 1)``.
    """
    if nx.value(h_l).shape[-1] != nx.value(h0).shape[-1]:
        raise DimensionError(f"h_l {nx.value(h_l).shape} and h0 {nx.value(h0).shape} differ in width")
    if beta is None:
        beta = beta_gate_values(h_l, h0, gate_beta, beta_min)
    propagated = nx.matmul(a_norm, h_l)
    h_tilde = nx.add(nx.mul(nx.sub(1.0, beta), propagated), nx.mul(beta, h0))
    return h_tilde, beta


def mean_row_cosine(a, b):
    """Mean over rows of the cosine between matching rows, shape (..., 1, 1)."""
    num = nx.sum(nx.mul(a, b), axis=-1, keepdims=True)
    den = nx.mul(nx.sqrt(nx.add(nx.sum(nx.mul(a, a), axis=-1, keepdims=True), _COS_EPS)),
                 nx.sqrt(nx.add(nx.sum(nx.mul(b, b), axis=-1, keepdims=True), _COS_EPS)))
    return nx.mean(nx.div(num, den), axis=-2, keepdims=True)


def developmental_factor(h_tilde_l, h_tilde_prev, gate_alpha):
    """``sigmoid(a_l + b_l * mean_cos(H~_l, H~_prev))``."""
    scale = nx.getitem(gate_alpha, (slice(None), slice(0, 1)))
    shift = nx.getitem(gate_alpha, (slice(None), slice(1, 2)))
    return nx.sigmoid(nx.add(scale, nx.mul(shift, mean_row_cosine(h_tilde_l, h_tilde_prev))))


def dynamic_developmental_layer(h_tilde_l, h_tilde_prev, w, gate_alpha, a_norm, alpha=None):
    """``ReLU((1-α) Â H~_l W + α H~_prev)`` with ``α`` from the developmental gate.

    Pass ``a_norm=None`` when ``h_tilde_l`` has already been propagated (the
    stack does this: the initial-residual step owns the single hop per layer).
    """
    if alpha is None:
        alpha = developmental_factor(h_tilde_l, h_tilde_prev, gate_alpha)
    prop = h_tilde_l if a_norm is None else nx.matmul(a_norm, h_tilde_l)
    h_next = nx.relu(nx.add(nx.mul(nx.sub(1.0, alpha), nx.matmul(prop, w)),
                            nx.mul(alpha, h_tilde_prev)))
    return h_next, alpha


def _node_variance(h) -> float:
    hv = nx.value(h)
    return float(np.mean(np.var(hv, axis=-2)))


def run_layers(h0, a_norm, params: LayerParams, mode: str = "lra", beta_min: float = BETA_MIN,
               resgcn_alpha: float = 0.2, pin_beta=None, pin_alpha=None):
    """Apply the layer stack to an already projected ``h0``.

    ``h0`` is ``(..., 1, N, d)`` (broadcast over heads) and ``a_norm`` is
    ``(..., M, N, N)``.  Returns the final node states and per-layer
    diagnostics.
    """
    diag = {"beta_mean": [], "alpha_mean": [], "node_variance": []}
    h = h0
    if mode == "lra":
        ht_prev = h0
        for l in range(params.depth):
            ht, beta = adaptive_initial_residual(h, h0, params.gate_beta[l], a_norm,
                                                 beta_min, beta=pin_beta)
            h, alpha = dynamic_developmental_layer(ht, ht_prev, params.W[l], params.gate_alpha[l],
                                                   None, alpha=pin_alpha)
            ht_prev = ht
            diag["beta_mean"].append(float(np.mean(nx.value(beta))))
            diag["alpha_mean"].append(float(np.mean(nx.value(alpha))))
            diag["node_variance"].append(_node_variance(h))
    elif mode == "gcn":
        for l in range(params.depth):
            h = gcn_layer(h, a_norm, params.W[l])
            diag["node_variance"].append(_node_variance(h))
    elif mode == "resgcn":
        h_prev = h0
        for l in range(params.depth):
            h, h_prev = res_gcn_layer(h, h_prev, a_norm, params.W[l], resgcn_alpha), h
            diag["node_variance"].append(_node_variance(h))
    else:
        raise DomainError(f"unknown layer mode {mode!r}")
    return h, diag


def readout(h):
    """Head mean, then node mean."""
    fused = nx.mean(h, axis=-3)
    return fused, nx.mean(fused, axis=-2)


def forward_stack(rel: RelationGraphSet, params: LayerParams, depth: Optional[int] = None,
                  mode: str = "lra", beta_min: float = BETA_MIN, resgcn_alpha: float = 0.2,
                  pin_beta=None, pin_alpha=None) -> StackOutput:
    """Project node features once, then run every relation graph through the stack."""
    if depth is not None and depth != params.depth:
        raise DimensionError(f"depth {depth} but {params.depth} layers of parameters")
    if params.depth < 1:
        raise DomainError("stack depth must be >= 1")
    x = rel.node_features
    h0 = nx.reshape(nx.matmul(x, params.input_proj), (1,) + (np.shape(x)[0], params.width))
    a_norm = normalize_adjacency(nx.stack(rel.adjacencies, axis=0))
    h, diag = run_layers(h0, a_norm, params, mode, beta_min, resgcn_alpha, pin_beta, pin_alpha)
    fused, graph_emb = readout(h)
    return StackOutput(h, fused, graph_emb, diag)


def mean_pairwise_distance(h) -> float:
    """Mean Euclidean distance over distinct node pairs (rows of ``h``)."""
    hv = np.asarray(nx.value(h))
    diff = hv[:, None, :] - hv[None, :, :]
    dist = np.sqrt(np.sum(diff * diff, axis=-1))
    n = hv.shape[0]
    return float(dist[np.triu_indices(n, 1)].mean()) if n > 1 else 0.0
