"""Pipeline configuration: nested dataclasses serialised as a JSON tree.

Config files may be partial; missing keys take the defaults below and
unknown keys are rejected.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from typing import Optional

from .errors import ConfigError
from .rl import RLConfig
from .walks import WalkConfig


@dataclass
class GraphSettings:
    threshold: float = 0.936
    patches_per_side: int = 14
    image_width: int = 224
    image_height: int = 224


@dataclass
class WalkSettings:
    enabled: bool = True
    p: float = 1.0
    q: float = 1.0
    walks_per_node: int = 10
    walk_length: int = 20
    window: int = 4
    tau: float = 0.824
    similarity_source: str = "profiles"

    def walk_config(self) -> WalkConfig:
        return WalkConfig(self.p, self.q, self.walks_per_node, self.walk_length, self.window,
                          self.tau, self.similarity_source)


@dataclass
class AttentionSettings:
    enabled: bool = True
    heads: int = 8
    d_k: Optional[int] = None
    combine: str = "product"


@dataclass
class GCNSettings:
    depth: int = 12
    width: int = 64
    beta_min: float = 0.05
    mode: str = "lra"
    resgcn_alpha: float = 0.2


@dataclass
class RLSettings:
    gamma: float = 0.9
    epsilon_start: float = 1.0
    epsilon_end: float = 0.05
    epsilon_decay_fraction: float = 0.5
    horizon: int = 20
    sync_interval: int = 500
    lam: float = 1.0
    eta: float = 0.5
    focal_tau: float = 1.3
    capacity: int = 10_000
    batch: int = 32
    n_envs: int = 32
    updates_per_step: int = 4
    epochs: Optional[int] = None  # None: same as optimizer.epochs
    q_hidden: int = 64
    huber_delta: float = 1.0
    start_col: int = 4
    one_shot: bool = False
    use_imbalance: bool = True
    use_distance: bool = True
    cotrain: bool = False


@dataclass
class OptimizerSettings:
    lr: float = 0.001
    weight_decay: float = 0.0005
    beta1: float = 0.9
    beta2: float = 0.999
    epochs: int = 120
    batch: int = 32
    lr_floor: float = 1e-6


@dataclass
class PipelineConfig:
    graph: GraphSettings = field(default_factory=GraphSettings)
    walk: WalkSettings = field(default_factory=WalkSettings)
    attention: AttentionSettings = field(default_factory=AttentionSettings)
    gcn: GCNSettings = field(default_factory=GCNSettings)
    rl: RLSettings = field(default_factory=RLSettings)
    optimizer: OptimizerSettings = field(default_factory=OptimizerSettings)
    val_fraction: float = 0.2
    seed: int = 0

    def __post_init__(self):
        self.validate()

    def validate(self):
        try:
            self.walk.walk_config()
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        checks = [
            (-1.0 <= self.graph.threshold <= 1.0, "graph.threshold must lie in [-1, 1]"),
            (self.attention.heads >= 1, "attention.heads must be >= 1"),
            (self.attention.combine in ("product", "hadamard"), "attention.combine must be product|hadamard"),
            (self.gcn.depth >= 1 and self.gcn.width >= 1, "gcn.depth and gcn.width must be >= 1"),
            (self.gcn.mode in ("lra", "gcn", "resgcn"), "gcn.mode must be lra|gcn|resgcn"),
            (0.0 <= self.gcn.beta_min <= 1.0, "gcn.beta_min must lie in [0, 1]"),
            (0.0 <= self.gcn.resgcn_alpha <= 1.0, "gcn.resgcn_alpha must lie in [0, 1]"),
            (0.0 < self.rl.gamma < 1.0, "rl.gamma must lie in (0, 1)"),
            (0.0 <= self.rl.eta <= 1.0, "rl.eta must lie in [0, 1]"),
            (self.rl.horizon >= 1 and self.rl.batch >= 1, "rl.horizon and rl.batch must be >= 1"),
            (self.rl.sync_interval >= 1, "rl.sync_interval must be >= 1"),
            (self.rl.n_envs >= 1 and self.rl.updates_per_step >= 0, "rl.n_envs >= 1 and rl.updates_per_step >= 0"),
            (0 <= self.rl.start_col <= 9, "rl.start_col must lie in 0..9"),
            (self.optimizer.lr > 0 and self.optimizer.batch >= 1, "optimizer.lr > 0 and batch >= 1"),
            (self.optimizer.epochs >= 0, "optimizer.epochs must be >= 0"),
            (self.rl.epochs is None or self.rl.epochs >= 0, "rl.epochs must be >= 0"),
            (0.0 <= self.val_fraction < 1.0, "val_fraction must lie in [0, 1)"),
        ]
        for ok, msg in checks:
            if not ok:
                raise ConfigError(msg)

    @property
    def rl_epochs(self) -> int:
        return self.optimizer.epochs if self.rl.epochs is None else self.rl.epochs

    def rl_config(self) -> RLConfig:
        r, o = self.rl, self.optimizer
        return RLConfig(
            gamma=r.gamma, epsilon_start=r.epsilon_start, epsilon_end=r.epsilon_end,
            epsilon_decay_fraction=r.epsilon_decay_fraction, horizon=r.horizon,
            sync_interval=r.sync_interval, lam=r.lam, eta=r.eta, focal_tau=r.focal_tau,
            capacity=r.capacity, batch=r.batch, n_envs=r.n_envs,
            updates_per_step=r.updates_per_step, epochs=self.rl_epochs, q_hidden=r.q_hidden,
            huber_delta=r.huber_delta, start_col=r.start_col, one_shot=r.one_shot,
            use_imbalance=r.use_imbalance, use_distance=r.use_distance, cotrain=r.cotrain,
            lr=o.lr, lr_floor=o.lr_floor, weight_decay=o.weight_decay, beta1=o.beta1, beta2=o.beta2)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def save(self, path):
        with open(path, "w") as fh:
            fh.write(self.dumps() + "\n")

    @classmethod
    def from_dict(cls, data: dict) -> "PipelineConfig":
        return _build(cls, data, "")

    @classmethod
    def load(cls, path) -> "PipelineConfig":
        try:
            with open(path) as fh:
                data = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        return cls.from_dict(data)

    def replace(self, **overrides) -> "PipelineConfig":
        """Copy with dotted-key overrides, e.g. ``replace(**{"gcn.depth": 4})``."""
        data = self.to_dict()
        for key, val in overrides.items():
            node = data
            *parents, leaf = key.split(".")
            for p in parents:
                if p not in node or not isinstance(node[p], dict):
                    raise ConfigError(f"unknown config key {key!r}")
                node = node[p]
            if leaf not in node:
                raise ConfigError(f"unknown config key {key!r}")
            node[leaf] = val
        return PipelineConfig.from_dict(data)


def _build(cls, data, path):
    if not isinstance(data, dict):
        raise ConfigError(f"config section {path or '<root>'} must be an object")
    fields = {f.name: f for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - set(fields))
    if unknown:
        raise ConfigError(f"unknown config keys at {path or '<root>'}: {unknown}")
    kwargs = {}
    for name, val in data.items():
        f = fields[name]
        default = f.default_factory() if f.default_factory is not dataclasses.MISSING else None
        if dataclasses.is_dataclass(default):
            kwargs[name] = _build(type(default), val, f"{path}{name}.")
        else:
            kwargs[name] = val
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc
