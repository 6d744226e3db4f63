"""Multi-head attention that turns one enriched graph into M dense relation graphs."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import numerics as nx
from .errors import DimensionError, DomainError
from .graph import FaceGraph

DEFAULT_HEADS = 8


@dataclass
class AttentionHeadParams:
    W_query: object  # (n_features, d_k) array or Var
    W_key: object

    @property
    def d_k(self) -> int:
        return nx.value(self.W_query).shape[-1]


@dataclass
class RelationGraphSet:
    node_features: np.ndarray
    adjacencies: list
    head_params: list
    scores: list = field(default_factory=list)  # pre-combination softmax rows, kept for audit

    @property
    def n_heads(self) -> int:
        return len(self.adjacencies)


def default_d_k(n_features: int, heads: int) -> int:
    return max(1, n_features // heads)


def init_head(rng: np.random.Generator, n_features: int, d_k: int) -> AttentionHeadParams:
    return AttentionHeadParams(nx.glorot_uniform(rng, n_features, d_k),
                               nx.glorot_uniform(rng, n_features, d_k))


def attention_scores(features, head: AttentionHeadParams):
    """Row-softmax of scaled query-key products, shape (..., N, N)."""
    fv = nx.value(features)
    wq = nx.value(head.W_query)
    if fv.shape[-1] != wq.shape[-2] or nx.value(head.W_key).shape != wq.shape:
        raise DimensionError(
            f"feature width {fv.shape[-1]} incompatible with head shapes "
            f"{wq.shape} / {nx.value(head.W_key).shape}")
    q = nx.matmul(features, head.W_query)
    k = nx.matmul(features, head.W_key)
    return nx.row_softmax(nx.matmul(q, nx.transpose(k)) * (1.0 / math.sqrt(head.d_k)))


def with_self_loops(a0):
    a0 = np.asarray(a0, dtype=np.float64)
    return a0 + np.eye(a0.shape[-1])


def combine_with_structure(scores, a0, combine: str = "product"):
    """Blend attention rows with the self-loop-augmented structural adjacency.

    ``"product"`` is the matrix product ``S @ (A0 + I)``, which keeps the
    graph dense; ``"hadamard"`` masks ``S`` elementwise (ablation only).
    """
    a0_bar = with_self_loops(a0)
    if combine == "product":
        return nx.matmul(scores, a0_bar)
    if combine == "hadamard":
        return nx.mul(scores, a0_bar)
    raise DomainError(f"unknown combine mode {combine!r}")


def attention_adjacency(features, a0, head: AttentionHeadParams, combine: str = "product"):
    fv, av = nx.value(features), np.asarray(a0)
    n = fv.shape[-2]
    if av.shape[-2:] != (n, n):
        raise DimensionError(f"adjacency shape {av.shape} incompatible with {n} nodes")
    return combine_with_structure(attention_scores(features, head), a0, combine)


def generate_head_set(graph: FaceGraph, params: Sequence[AttentionHeadParams],
                      combine: str = "product") -> RelationGraphSet:
    if not params:
        raise DomainError("at least one attention head is required")
    scores, adjs = [], []
    for head in params:
        s = attention_scores(graph.node_features, head)
        scores.append(s)
        adjs.append(combine_with_structure(s, graph.adjacency, combine))
    return RelationGraphSet(graph.node_features, adjs, list(params), scores)


def stacked_heads(params: Sequence[AttentionHeadParams]) -> AttentionHeadParams:
    """Fold per-head matrices into one (M, F, d_k) head for batched evaluation."""
    return AttentionHeadParams(nx.stack([h.W_query for h in params], axis=0),
                               nx.stack([h.W_key for h in params], axis=0))
