"""The feature extractor as one object: attention heads + residual GCN stack.

Parameters live in a shared :class:`~lragnn.numerics.ParamStore` under the
``attn.`` and ``gcn.`` prefixes.  Forward passes run on batches of graphs
with a common node count: ``x`` is ``(B, N, F)`` and ``a0`` ``(B, N, N)``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import numerics as nx
from .attention import AttentionHeadParams, attention_scores, combine_with_structure, stacked_heads
from .gcn import BetaGate, LayerParams, StackOutput, normalize_adjacency, readout, run_layers


@dataclass(frozen=True)
class ModelShape:
    n_features: int
    width: int = 64
    depth: int = 12
    heads: int = 8
    d_k: Optional[int] = None
    beta_min: float = 0.05
    mode: str = "lra"
    attention: bool = True
    combine: str = "product"
    resgcn_alpha: float = 0.2

    @property
    def key_dim(self) -> int:
        return self.d_k if self.d_k else max(1, self.n_features // self.heads)


class LRAGNN:
    def __init__(self, shape: ModelShape, store: nx.ParamStore, rng: Optional[np.random.Generator] = None):
        self.shape = shape
        self.store = store
        if rng is not None:
            self._init(rng)

    def _init(self, rng):
        s = self.shape
        add = self.store.add
        if s.attention:
            for m in range(s.heads):
                add(f"attn.{m}.W_query", nx.glorot_uniform(rng, s.n_features, s.key_dim))
                add(f"attn.{m}.W_key", nx.glorot_uniform(rng, s.n_features, s.key_dim))
        add("gcn.W_in", nx.glorot_uniform(rng, s.n_features, s.width))
        for l in range(s.depth):
            add(f"gcn.{l}.W", nx.glorot_uniform(rng, s.width, s.width))
            add(f"gcn.{l}.beta_w", nx.glorot_uniform(rng, 2 * s.width, 1))
            add(f"gcn.{l}.beta_b", np.zeros((1, 1)))
            add(f"gcn.{l}.alpha", np.zeros((1, 2)))

    def param_names(self) -> list[str]:
        return self.store.names("attn.") + self.store.names("gcn.")

    def _getter(self, tape):
        return (lambda n: tape.param(n, self.store)) if tape is not None else self.store.value

    def head_params(self, tape=None) -> list[AttentionHeadParams]:
        get = self._getter(tape)
        return [AttentionHeadParams(get(f"attn.{m}.W_query"), get(f"attn.{m}.W_key"))
                for m in range(self.shape.heads)]

    def layer_params(self, tape=None) -> LayerParams:
        get = self._getter(tape)
        L = self.shape.depth
        return LayerParams(
            input_proj=get("gcn.W_in"),
            W=[get(f"gcn.{l}.W") for l in range(L)],
            gate_beta=[BetaGate(get(f"gcn.{l}.beta_w"), get(f"gcn.{l}.beta_b")) for l in range(L)],
            gate_alpha=[get(f"gcn.{l}.alpha") for l in range(L)],
        )

    def relation_graphs(self, x, a0, tape=None):
        """Dense relation adjacencies, shape (B, M, N, N) (M = 1 without attention)."""
        a0 = np.asarray(a0, dtype=np.float64)
        if not self.shape.attention:
            return a0[:, None]
        head = stacked_heads(self.head_params(tape))
        scores = attention_scores(np.asarray(x)[:, None], head)
        return combine_with_structure(scores, a0[:, None], self.shape.combine)

    def forward(self, x, a0, tape=None, pin_beta=None, pin_alpha=None) -> StackOutput:
        x = np.asarray(x, dtype=np.float64)
        s = self.shape
        lp = self.layer_params(tape)
        a_norm = normalize_adjacency(self.relation_graphs(x, a0, tape))
        h0 = nx.reshape(nx.matmul(x, lp.input_proj), (x.shape[0], 1, x.shape[1], s.width))
        h, diag = run_layers(h0, a_norm, lp, s.mode, s.beta_min, s.resgcn_alpha, pin_beta, pin_alpha)
        fused, graph_emb = readout(h)
        return StackOutput(h, fused, graph_emb, diag)

    def embed(self, x, a0, tape=None):
        return self.forward(x, a0, tape).graph_embedding
