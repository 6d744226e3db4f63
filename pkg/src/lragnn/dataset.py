"""Sample ingestion files and the synthetic face-feature generator.

Ingestion format: JSON Lines, one sample per line::

    {"id": "s0001", "age": 34, "sigma": 2.5, "n_nodes": 12,
     "features": [[f_00, f_01, ...], ...], "keypoints": [[x, y], ...]}

``sigma`` and ``keypoints`` are optional.  ``features`` holds ``n_nodes``
rows of equal length.  When keypoints are present, rows whose keypoint falls
into an already used patch are dropped (first keypoint per patch wins).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import ConfigError, IngestionError
from .graph import Keypoint, LabeledSample, assign_patches, distinct_patches


def sample_to_record(s: LabeledSample) -> dict:
    rec = {"id": s.id, "age": int(s.age)}
    if s.sigma is not None:
        rec["sigma"] = float(s.sigma)
    rec["n_nodes"] = int(s.node_features.shape[0])
    rec["features"] = [[float(v) for v in row] for row in s.node_features]
    if s.keypoints is not None:
        rec["keypoints"] = [[float(k.x), float(k.y)] for k in s.keypoints]
    return rec


def write_samples(path, samples: Sequence[LabeledSample]):
    with open(path, "w") as fh:
        for s in samples:
            fh.write(json.dumps(sample_to_record(s), separators=(",", ":")) + "\n")


def _parse_record(rec, lineno) -> LabeledSample:
    rid = rec.get("id") if isinstance(rec, dict) else None
    if not isinstance(rec, dict):
        raise IngestionError(f"line {lineno}: record is not an object")
    for key in ("id", "age", "n_nodes", "features"):
        if key not in rec:
            raise IngestionError(f"missing field {key!r}", rid)
    unknown = set(rec) - {"id", "age", "sigma", "n_nodes", "features", "keypoints"}
    if unknown:
        raise IngestionError(f"unknown fields {sorted(unknown)}", rid)
    age = rec["age"]
    if isinstance(age, bool) or not isinstance(age, int) or age < 0:
        raise IngestionError(f"age must be a non-negative integer, got {age!r}", rid)
    sigma = rec.get("sigma")
    if sigma is not None and (not isinstance(sigma, (int, float)) or not sigma > 0):
        raise IngestionError(f"sigma must be positive, got {sigma!r}", rid)
    rows = rec["features"]
    n = rec["n_nodes"]
    if not isinstance(rows, list) or not isinstance(n, int) or len(rows) != n or n < 1:
        raise IngestionError(f"n_nodes={n!r} does not match {len(rows) if isinstance(rows, list) else '?'} feature rows", rid)
    try:
        x = np.array(rows, dtype=np.float64)
    except (TypeError, ValueError) as exc:
        raise IngestionError(f"feature rows are not numeric lists of equal length ({exc})", rid) from exc
    if x.ndim != 2 or x.shape[1] == 0:
        raise IngestionError("feature rows must be non-empty lists of equal length", rid)
    if not np.all(np.isfinite(x)):
        raise IngestionError("non-finite feature value", rid)
    kps = None
    if rec.get("keypoints") is not None:
        try:
            kps = [Keypoint(float(a), float(b)) for a, b in rec["keypoints"]]
        except (TypeError, ValueError) as exc:
            raise IngestionError("keypoints must be [x, y] pairs", rid) from exc
        if len(kps) != n:
            raise IngestionError(f"{len(kps)} keypoints for {n} nodes", rid)
    return LabeledSample(str(rec["id"]), x, age, None if sigma is None else float(sigma), kps)


def read_samples(path) -> list[LabeledSample]:
    out = []
    seen = set()
    try:
        fh = open(path)
    except OSError as exc:
        raise IngestionError(f"cannot open dataset {path}: {exc}") from exc
    with fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise IngestionError(f"line {lineno}: invalid JSON ({exc.msg})") from exc
            s = _parse_record(rec, lineno)
            if s.id in seen:
                raise IngestionError("duplicate id", s.id)
            seen.add(s.id)
            out.append(s)
    if not out:
        raise IngestionError(f"dataset {path} contains no records")
    return out


def patch_nodes(sample: LabeledSample, image_size=(224, 224), patches_per_side: int = 14):
    """Node features and patch ids after keypoint-to-patch assignment."""
    if sample.keypoints is None:
        return sample.node_features, None
    try:
        patches = assign_patches(sample.keypoints, image_size, patches_per_side)
    except ValueError as exc:
        raise IngestionError(str(exc), sample.id) from exc
    keep = distinct_patches(patches)
    return sample.node_features[keep], [patches[i] for i in keep]


# ---------------------------------------------------------------------------
# synthetic data
# ---------------------------------------------------------------------------

@dataclass
class SyntheticSpec:
    n_samples: int = 1000
    n_nodes: int = 12
    n_features: int = 16
    distribution: str = "uniform"            # "uniform" or "imbalanced"
    group_weights: Optional[list] = None     # 10 non-negative weights for "imbalanced"
    noise: float = 0.05
    sigma: Optional[float] = None            # mean annotation std; None omits sigma
    nodes_per_cluster: int = 3
    seed: int = 0

    def validate(self):
        if self.n_samples < 1:
            raise ConfigError("n_samples must be >= 1")
        if self.n_nodes < 1 or self.n_features < 1 or self.nodes_per_cluster < 1:
            raise ConfigError("n_nodes, n_features and nodes_per_cluster must be >= 1")
        if self.noise < 0:
            raise ConfigError("noise must be >= 0")
        if self.distribution == "imbalanced":
            w = self.group_weights
            if w is None or len(w) != 10:
                raise ConfigError("imbalanced distribution needs 10 group weights")
            if any((not isinstance(v, (int, float))) or v < 0 or math.isnan(v) for v in w) or sum(w) <= 0:
                raise ConfigError("group weights must be non-negative with a positive sum")
        elif self.distribution != "uniform":
            raise ConfigError(f"unknown distribution {self.distribution!r}")


def allocate_counts(n: int, weights: Sequence[float]) -> np.ndarray:
    """Largest-remainder split of ``n`` items proportional to ``weights``."""
    w = np.asarray(weights, dtype=np.float64)
    exact = n * w / w.sum()
    counts = np.floor(exact).astype(np.int64)
    remainder = n - counts.sum()
    order = np.argsort(-(exact - counts), kind="stable")
    counts[order[:remainder]] += 1
    return counts


def synthetic_basis(spec: SyntheticSpec, rng: np.random.Generator):
    """Per-node sinusoid frequencies and phases; nodes in a cluster share a base."""
    n_clusters = math.ceil(spec.n_nodes / spec.nodes_per_cluster)
    base_freq = rng.uniform(0.3, 1.5, size=(n_clusters, spec.n_features))
    base_phase = rng.uniform(0.0, 2 * math.pi, size=(n_clusters, spec.n_features))
    cluster = np.arange(spec.n_nodes) // spec.nodes_per_cluster
    freq = base_freq[cluster] + rng.normal(0.0, 0.05, size=(spec.n_nodes, spec.n_features))
    phase = base_phase[cluster] + rng.normal(0.0, 0.15, size=(spec.n_nodes, spec.n_features))
    return freq, phase


def synthetic_features(age: float, freq: np.ndarray, phase: np.ndarray) -> np.ndarray:
    return np.sin(2 * math.pi * freq * (age / 99.0) + phase)


def generate_synthetic(spec: SyntheticSpec) -> list[LabeledSample]:
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    freq, phase = synthetic_basis(spec, rng)
    if spec.distribution == "uniform":
        ages = rng.integers(0, 100, size=spec.n_samples)
    else:
        counts = allocate_counts(spec.n_samples, spec.group_weights)
        ages = np.concatenate([10 * g + rng.integers(0, 10, size=c) for g, c in enumerate(counts)])
        ages = ages[rng.permutation(ages.size)]
    width = max(4, len(str(spec.n_samples - 1)))
    out = []
    for i, age in enumerate(ages):
        x = synthetic_features(float(age), freq, phase)
        if spec.noise > 0:
            x = x + rng.normal(0.0, spec.noise, size=x.shape)
        sigma = None
        if spec.sigma is not None:
            sigma = float(spec.sigma * rng.uniform(0.5, 1.5))
        out.append(LabeledSample(f"s{i:0{width}d}", x, int(age), sigma))
    return out
