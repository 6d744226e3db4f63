"""End-to-end runs: graph preparation, training, evaluation, gradient check, ablation.

A run directory holds ``config.json`` (the exact config used), ``model.ckpt``,
``train_metrics.{json,txt}``, ``val_metrics.{json,txt}``, ``cs_curve.tsv``,
``train_log.json`` and ``split.json``.  Re-running from that config and the
same dataset reproduces every file bit for bit.
"""

from __future__ import annotations

import json
import os
import zlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import numerics as nx
from . import rl
from .checkpoint import load_arrays, save_store
from .config import PipelineConfig
from .dataset import patch_nodes, read_samples
from .errors import CompatibilityError, ConfigError, NumericError
from .graph import LabeledSample, build_initial_graph
from .metrics import EvalRecord, MetricsReport, build_report, dumps_json
from .model import LRAGNN, ModelShape
from .walks import enrich_graph

WARM_FROZEN = ("q.Wq", "q.bq")


@dataclass
class PreparedSample:
    id: str
    x: np.ndarray
    a0: np.ndarray
    age: int
    sigma: Optional[float]


@dataclass
class TrainResult:
    store: nx.ParamStore
    model: LRAGNN
    train_report: MetricsReport
    val_report: Optional[MetricsReport]
    log: dict = field(default_factory=dict)


def walk_seed(sample_id: str, seed: int) -> int:
    return zlib.crc32(sample_id.encode()) ^ (seed & 0xFFFFFFFF)


def prepare_sample(s: LabeledSample, cfg: PipelineConfig) -> PreparedSample:
    g = cfg.graph
    x, patches = patch_nodes(s, (g.image_width, g.image_height), g.patches_per_side)
    graph = build_initial_graph(x, g.threshold, patches)
    if cfg.walk.enabled:
        graph = enrich_graph(graph, cfg.walk.walk_config(), walk_seed(s.id, cfg.seed))
    return PreparedSample(s.id, graph.node_features, graph.adjacency, s.age, s.sigma)


def prepare_samples(samples: Sequence[LabeledSample], cfg: PipelineConfig) -> list[PreparedSample]:
    return [prepare_sample(s, cfg) for s in samples]


def model_shape(cfg: PipelineConfig, n_features: int) -> ModelShape:
    return ModelShape(n_features, width=cfg.gcn.width, depth=cfg.gcn.depth,
                      heads=cfg.attention.heads, d_k=cfg.attention.d_k,
                      beta_min=cfg.gcn.beta_min, mode=cfg.gcn.mode,
                      attention=cfg.attention.enabled, combine=cfg.attention.combine,
                      resgcn_alpha=cfg.gcn.resgcn_alpha)


def build_model(cfg: PipelineConfig, n_features: int, init: bool = True):
    store = nx.ParamStore()
    rng = np.random.default_rng([cfg.seed, 0]) if init else None
    model = LRAGNN(model_shape(cfg, n_features), store, rng)
    if init:
        rl.init_q_params(store, rng, cfg.gcn.width, cfg.rl.q_hidden)
    return model, store


def split_indices(n: int, val_fraction: float, seed: int):
    perm = np.random.default_rng([seed, 1]).permutation(n)
    n_val = int(round(n * val_fraction))
    if n_val >= n:
        n_val = n - 1
    return np.sort(perm[n_val:]), np.sort(perm[:n_val])


def _buckets(prepared: Sequence[PreparedSample], idx) -> dict:
    out: dict[int, list[int]] = {}
    for i in idx:
        out.setdefault(prepared[i].x.shape[0], []).append(int(i))
    return out


def make_batches(prepared, idx, batch: int, rng: Optional[np.random.Generator]):
    """Minibatches of equal node count; shuffled when ``rng`` is given."""
    chunks = []
    for n_nodes in sorted(_buckets(prepared, idx)):
        members = np.array(_buckets(prepared, idx)[n_nodes])
        if rng is not None:
            members = members[rng.permutation(members.size)]
        chunks.extend(members[k:k + batch] for k in range(0, members.size, batch))
    if rng is not None:
        chunks = [chunks[j] for j in rng.permutation(len(chunks))]
    return chunks


def stack_batch(prepared, members):
    return (np.stack([prepared[i].x for i in members]),
            np.stack([prepared[i].a0 for i in members]))


def embed_all(model: LRAGNN, prepared, idx=None, batch: int = 64) -> np.ndarray:
    idx = np.arange(len(prepared)) if idx is None else np.asarray(idx)
    out = np.zeros((len(prepared), model.shape.width))
    for members in make_batches(prepared, idx, batch, None):
        x, a0 = stack_batch(prepared, members)
        out[members] = model.embed(x, a0)
    return out[idx]


def warm_phase(model: LRAGNN, store: nx.ParamStore, prepared, idx, cfg: PipelineConfig,
               rng: np.random.Generator) -> list[float]:
    """Supervised pre-training of the extractor through the auxiliary heads."""
    o = cfg.optimizer
    names = [n for n in store.names() if n not in WARM_FROZEN]
    ages = np.array([p.age for p in prepared], dtype=np.float64)
    epoch_losses = []
    for epoch in range(o.epochs):
        lr = nx.cosine_lr(o.lr, epoch, o.epochs, o.lr_floor)
        losses = []
        for members in make_batches(prepared, idx, o.batch, rng):
            x, a0 = stack_batch(prepared, members)
            tape = nx.Tape(store)
            emb = model.embed(x, a0, tape)
            out = rl.q_forward_batch(store, emb, tape=tape)
            loss = rl.prlae_loss(out, ages[members], cfg.rl.eta, cfg.rl.focal_tau)
            store.zero_grad()
            tape.backward(loss)
            tape.release()
            nx.adam_step(store, lr, o.beta1, o.beta2, o.weight_decay, names=names)
            losses.append(float(nx.value(loss)))
        epoch_losses.append(float(np.mean(losses)))
    return epoch_losses


def predict(store: nx.ParamStore, emb: np.ndarray, cfg: PipelineConfig) -> np.ndarray:
    horizon = 1 if cfg.rl.one_shot else cfg.rl.horizon
    return rl.predict_ages(store, emb, horizon, cfg.rl.start_col)


def evaluate(store, model, prepared, idx, cfg, diagnostics=None) -> MetricsReport:
    emb = embed_all(model, prepared, idx)
    preds = predict(store, emb, cfg)
    records = [EvalRecord(float(p), float(prepared[i].age), prepared[i].sigma)
               for p, i in zip(preds, idx)]
    diag = {"config": cfg.to_dict()}
    diag.update(diagnostics or {})
    return build_report(records, diagnostics=diag)


def _write_report(out: Path, stem: str, report: MetricsReport, title: str, cfg: PipelineConfig):
    (out / f"{stem}.json").write_text(dumps_json(report.to_dict()) + "\n")
    (out / f"{stem}.txt").write_text(report.to_text(title) + "[config]\n" + cfg.dumps() + "\n")


def _dump_numeric(out: Path, store: nx.ParamStore, stage: str, exc: Exception):
    info = {"stage": stage, "error": str(exc), "params": {}}
    for name, p in store.items():
        v = p.value
        finite = np.isfinite(v)
        info["params"][name] = {
            "shape": list(v.shape),
            "non_finite": int(v.size - np.count_nonzero(finite)),
            "max_abs": float(np.max(np.abs(v[finite]))) if finite.any() else None,
        }
    (out / "numeric_dump.json").write_text(json.dumps(info, indent=2, sort_keys=True) + "\n")


def smooth(values: Sequence[float], window: int = 5) -> list[float]:
    """Trailing moving average."""
    v = np.asarray(values, dtype=np.float64)
    if v.size == 0:
        return []
    c = np.cumsum(np.insert(v, 0, 0.0))
    lo = np.maximum(np.arange(1, v.size + 1) - window, 0)
    return [float(m) for m in (c[1:] - c[lo]) / (np.arange(1, v.size + 1) - lo)]


def train(samples: Sequence[LabeledSample], cfg: PipelineConfig,
          out_dir=None) -> TrainResult:
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        cfg.save(out / "config.json")
    prepared = prepare_samples(samples, cfg)
    model, store = build_model(cfg, prepared[0].x.shape[1])
    tr_idx, val_idx = split_indices(len(prepared), cfg.val_fraction, cfg.seed)
    ages = np.array([p.age for p in prepared])
    stage = "warm"
    try:
        warm_losses = warm_phase(model, store, prepared, tr_idx, cfg, np.random.default_rng([cfg.seed, 2]))
        stage = "rl"
        rcfg = cfg.rl_config()
        extra = ()
        embed_fn = None
        emb = embed_all(model, prepared, tr_idx)
        if cfg.rl.cotrain:
            extra = tuple(model.param_names())

            def embed_fn(rows, tape):
                members = tr_idx[np.asarray(rows)]
                x, a0 = stack_batch(prepared, members)
                return model.embed(x, a0, tape)
        log = rl.train_prlae(emb, ages[tr_idx], store, rcfg, np.random.default_rng([cfg.seed, 3]),
                             embed_fn=embed_fn, extra_names=extra)
    except NumericError as exc:
        if out is not None:
            _dump_numeric(out, store, stage, exc)
        raise
    split_info = {"train": [prepared[i].id for i in tr_idx], "val": [prepared[i].id for i in val_idx],
                  "val_fraction": cfg.val_fraction, "seed": cfg.seed}
    train_report = evaluate(store, model, prepared, tr_idx, cfg, {"split": "train", "n_train": len(tr_idx)})
    val_report = None
    if len(val_idx):
        val_report = evaluate(store, model, prepared, val_idx, cfg, {"split": "val", "n_val": len(val_idx)})
    train_log = {
        "warm_epoch_loss": warm_losses,
        "warm_epoch_loss_smoothed": smooth(warm_losses),
        "rl_epoch_mean_return": log.epoch_mean_return,
        "rl_steps": log.steps,
        "rl_loss_per_epoch": _per_epoch(log.losses, rcfg.epochs),
    }
    if out is not None:
        save_store(out / "model.ckpt", store)
        _write_report(out, "train_metrics", train_report, "train", cfg)
        primary = train_report
        if val_report is not None:
            _write_report(out, "val_metrics", val_report, "validation", cfg)
            primary = val_report
        (out / "cs_curve.tsv").write_text(primary.cs_table())
        (out / "train_log.json").write_text(dumps_json(train_log) + "\n")
        (out / "split.json").write_text(json.dumps(split_info, indent=2) + "\n")
    return TrainResult(store, model, train_report, val_report, train_log)


def _per_epoch(losses, epochs):
    if not losses or not epochs:
        return []
    return [float(np.mean(c)) for c in np.array_split(np.asarray(losses), epochs) if c.size]


def run_train(config: PipelineConfig, dataset_path, out_dir) -> TrainResult:
    return train(read_samples(dataset_path), config, out_dir)


def load_model(checkpoint_path, cfg: PipelineConfig, n_features: int):
    model, store = build_model(cfg, n_features)
    arrays = load_arrays(checkpoint_path)
    store.load_values(arrays, strict=True)
    return model, store


def run_eval(checkpoint_path, dataset_path, config: Optional[PipelineConfig] = None,
             out_dir=None) -> MetricsReport:
    ckpt = Path(checkpoint_path)
    if config is None:
        sibling = ckpt.parent / "config.json"
        if not sibling.exists():
            raise ConfigError(f"no config given and {sibling} does not exist")
        config = PipelineConfig.load(sibling)
    samples = read_samples(dataset_path)
    prepared = prepare_samples(samples, config)
    model, store = load_model(ckpt, config, prepared[0].x.shape[1])
    report = evaluate(store, model, prepared, np.arange(len(prepared)), config,
                      {"split": "eval", "checkpoint": ckpt.name})
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        _write_report(out, "eval_metrics", report, "eval", config)
        (out / "eval_cs_curve.tsv").write_text(report.cs_table())
    return report


# ---------------------------------------------------------------------------
# gradient check
# ---------------------------------------------------------------------------

GRADCHECK_PRESET = {"n_nodes": 12, "n_features": 8, "width": 8, "depth": 4, "heads": 2,
                    "d_k": 4, "q_hidden": 8, "batch": 2, "threshold": 0.3}


def run_gradcheck(config: Optional[PipelineConfig] = None, seed: int = 0,
                  tolerance: float = 1e-4, epsilon: float = 1e-5) -> nx.GradReport:
    """Finite-difference check of every parameter on the small preset.

    Gate biases are randomised so that neither gate sits at a symmetric
    point where errors could cancel.
    """
    cfg = config or PipelineConfig()
    p = GRADCHECK_PRESET
    rng = np.random.default_rng([seed, 7])
    x = rng.normal(size=(p["batch"], p["n_nodes"], p["n_features"]))
    wc = cfg.walk.walk_config()
    a0 = np.stack([enrich_graph(build_initial_graph(xi, p["threshold"]), wc, seed + k).adjacency
                   for k, xi in enumerate(x)])
    store = nx.ParamStore()
    shape = ModelShape(p["n_features"], width=p["width"], depth=p["depth"], heads=p["heads"],
                       d_k=p["d_k"], beta_min=cfg.gcn.beta_min, mode=cfg.gcn.mode,
                       attention=cfg.attention.enabled, combine=cfg.attention.combine,
                       resgcn_alpha=cfg.gcn.resgcn_alpha)
    model = LRAGNN(shape, store, rng)
    for name in model.param_names():
        if name.endswith(".alpha") or name.endswith(".beta_b"):
            store[name].value[...] = rng.normal(size=store[name].value.shape)
    rl.init_q_params(store, rng, p["width"], p["q_hidden"])
    ages = rng.integers(0, 100, size=p["batch"])
    y = rng.normal(size=(p["batch"], 1))

    def loss_fn(tape):
        emb = model.embed(x, a0, tape)
        out = rl.q_forward_batch(store, emb, rows=[3] * p["batch"], cols=[4] * p["batch"], tape=tape)
        td = nx.mean(nx.huber(nx.sub(nx.take_along(out.values, np.ones((p["batch"], 1), dtype=int), -1), y)))
        return nx.add(td, rl.prlae_loss(out, ages, cfg.rl.eta, cfg.rl.focal_tau))

    return nx.grad_check(loss_fn, store, epsilon=epsilon, tolerance=tolerance)


# ---------------------------------------------------------------------------
# ablation
# ---------------------------------------------------------------------------

ABLATIONS = {
    "full": {},
    "no-LRC": {"attention.enabled": False},
    "no-DFE": {"gcn.mode": "gcn"},
    "ResGCN": {"gcn.mode": "resgcn"},
    "no-RW": {"walk.enabled": False},
    "BFS-only": {"walk.p": 0.5, "walk.q": 2.0},
    "DFS-only": {"walk.p": 2.0, "walk.q": 0.5},
    "no-imbalance": {"rl.use_imbalance": False},
    "no-distance": {"rl.use_distance": False},
    "one_shot": {"rl.one_shot": True},
}


@dataclass
class AblationRow:
    variant: str
    mae: float
    cs5: float
    minority_mae: Optional[float]
    report: MetricsReport


def minority_mae(report: MetricsReport, ages: Sequence[int]) -> Optional[float]:
    """MAE over the least populated non-empty decade of ``ages``.

    ``None`` when the evaluated split holds no sample from that decade.
    """
    counts = np.bincount(np.minimum(np.asarray(ages), 99) // 10, minlength=10)
    present = [g for g in range(10) if counts[g] > 0]
    if not present:
        return None
    g = min(present, key=lambda k: (counts[k], k))
    return report.group_mae[g]


def run_ablation(config: PipelineConfig, variants: Sequence[str], samples: Sequence[LabeledSample],
                 out_dir=None) -> list[AblationRow]:
    unknown = [v for v in variants if v not in ABLATIONS]
    if unknown:
        raise ConfigError(f"unknown ablation variants {unknown}; choose from {sorted(ABLATIONS)}")
    names = ["full"] + [v for v in variants if v != "full"]
    ages = [s.age for s in samples]
    rows = []
    for name in names:
        cfg = config.replace(**ABLATIONS[name])
        sub = None if out_dir is None else Path(out_dir) / name
        res = train(samples, cfg, sub)
        rep = res.val_report or res.train_report
        rows.append(AblationRow(name, rep.mae, rep.cs_curve[5], minority_mae(rep, ages), rep))
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "ablation.tsv").write_text(ablation_table(rows))
        (out / "ablation.json").write_text(dumps_json([
            {"variant": r.variant, "mae": r.mae, "cs5": r.cs5, "minority_mae": r.minority_mae}
            for r in rows]) + "\n")
    return rows


def ablation_table(rows: Sequence[AblationRow]) -> str:
    lines = ["variant\tmae\tcs5\tminority_mae"]
    for r in rows:
        mm = "-" if r.minority_mae is None else f"{r.minority_mae:.6f}"
        lines.append(f"{r.variant}\t{r.mae:.6f}\t{r.cs5:.6f}\t{mm}")
    return "\n".join(lines) + "\n"
