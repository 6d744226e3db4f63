"""Initial face-graph construction from keypoint-indexed node features."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import BoundsError, DimensionError, DomainError, InputError

INITIAL_THRESHOLD = 0.936
_ZERO_NORM = 1e-12


@dataclass(frozen=True)
class Keypoint:
    x: float
    y: float


@dataclass
class FaceGraph:
    """Node features plus a symmetric 0-1 adjacency with empty diagonal.

    ``edge_features`` is carried along for completeness; nothing downstream
    reads it.
    """

    node_features: np.ndarray
    adjacency: np.ndarray
    keypoint_index: Optional[list[int]] = None
    edge_features: Optional[np.ndarray] = None

    def __post_init__(self):
        n = self.node_features.shape[0]
        if self.adjacency.shape != (n, n):
            raise DimensionError(
                f"adjacency shape {self.adjacency.shape} does not match {n} nodes")

    @property
    def n_nodes(self) -> int:
        return self.node_features.shape[0]

    def neighbors(self, node: int) -> np.ndarray:
        return np.flatnonzero(self.adjacency[node] > 0)

    def with_adjacency(self, adjacency: np.ndarray) -> "FaceGraph":
        return FaceGraph(self.node_features, adjacency, self.keypoint_index, self.edge_features)


@dataclass
class LabeledSample:
    id: str
    node_features: np.ndarray
    age: int
    sigma: Optional[float] = None
    keypoints: Optional[list[Keypoint]] = None
    group: int = field(init=False)
    within: int = field(init=False)

    def __post_init__(self):
        if self.age < 0:
            raise DomainError(f"sample {self.id!r}: negative age {self.age}")
        self.age = min(int(self.age), 99)
        self.group, self.within = divmod(self.age, 10)


def assign_patches(keypoints: Sequence[Keypoint], image_size: tuple[int, int],
                   patches_per_side: int) -> list[int]:
    """Row-major index of the equal-size patch containing each keypoint."""
    if patches_per_side < 1:
        raise DomainError("patches_per_side must be >= 1")
    w, h = image_size
    pw, ph = w / patches_per_side, h / patches_per_side
    out = []
    for kp in keypoints:
        if not (0 <= kp.x < w and 0 <= kp.y < h):
            raise BoundsError(f"keypoint ({kp.x}, {kp.y}) outside {w}x{h} image")
        col = min(int(math.floor(kp.x / pw)), patches_per_side - 1)
        row = min(int(math.floor(kp.y / ph)), patches_per_side - 1)
        out.append(row * patches_per_side + col)
    return out


def distinct_patches(patch_index: Sequence[int]) -> list[int]:
    """Positions of the first keypoint landing in each distinct patch, in keypoint order."""
    seen, keep = set(), []
    for i, p in enumerate(patch_index):
        if p not in seen:
            seen.add(p)
            keep.append(i)
    return keep


def cosine_similarity(u, v) -> float:
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if u.shape != v.shape:
        raise DimensionError(f"cosine_similarity length mismatch: {u.shape} vs {v.shape}")
    nu, nv = np.linalg.norm(u), np.linalg.norm(v)
    if nu < _ZERO_NORM or nv < _ZERO_NORM:
        return 0.0
    return float(np.clip(u @ v / (nu * nv), -1.0, 1.0))


def cosine_matrix(rows: np.ndarray) -> np.ndarray:
    """All-pairs cosine similarity of matrix rows; zero-norm rows give 0."""
    rows = np.asarray(rows, dtype=np.float64)
    norms = np.linalg.norm(rows, axis=1)
    ok = norms >= _ZERO_NORM
    unit = np.zeros_like(rows)
    unit[ok] = rows[ok] / norms[ok, None]
    return np.clip(unit @ unit.T, -1.0, 1.0)


def threshold_adjacency(similarity: np.ndarray, threshold: float) -> np.ndarray:
    adj = (similarity >= threshold).astype(np.float64)
    adj = np.maximum(adj, adj.T)  # guard against asymmetric rounding
    np.fill_diagonal(adj, 0.0)
    return adj


def build_initial_graph(node_features, threshold: float = INITIAL_THRESHOLD,
                        keypoint_index: Optional[list[int]] = None) -> FaceGraph:
    x = np.asarray(node_features, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] == 0 or x.shape[1] == 0:
        raise InputError(f"node feature matrix must be non-empty 2-D, got shape {x.shape}")
    if not -1.0 <= threshold <= 1.0:
        raise DomainError(f"threshold {threshold} outside [-1, 1]")
    adj = threshold_adjacency(cosine_matrix(x), threshold)
    return FaceGraph(x, adj, keypoint_index=keypoint_index)
