"""Command line entry point: ``lragnn synth|train|eval|gradcheck|ablate``."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import pipeline
from .config import PipelineConfig
from .dataset import SyntheticSpec, generate_synthetic, read_samples, write_samples
from .errors import CompatibilityError, ConfigError, IngestionError, LRAGNNError, NumericError
from .metrics import dumps_json

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_INGESTION = 3
EXIT_NUMERIC = 4
EXIT_CHECK = 5
EXIT_COMPAT = 6


def _load_config(args) -> PipelineConfig:
    cfg = PipelineConfig.load(args.config) if args.config else PipelineConfig()
    overrides = {}
    for item in args.set or []:
        key, sep, raw = item.partition("=")
        if not sep:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        try:
            overrides[key] = json.loads(raw)
        except json.JSONDecodeError:
            overrides[key] = raw
    if args.seed is not None:
        overrides["seed"] = args.seed
    return cfg.replace(**overrides) if overrides else cfg


def _synth_spec(args) -> SyntheticSpec:
    data = {}
    if args.spec:
        try:
            data = json.loads(Path(args.spec).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read synthetic spec {args.spec}: {exc}") from exc
    if args.n is not None:
        data["n_samples"] = args.n
    if args.seed is not None:
        data["seed"] = args.seed
    try:
        return SyntheticSpec(**data)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc


def cmd_synth(args) -> int:
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    samples = generate_synthetic(_synth_spec(args))
    write_samples(out, samples)
    print(f"wrote {len(samples)} samples to {out}")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = _load_config(args)
    res = pipeline.run_train(cfg, args.data, args.out)
    rep = res.val_report or res.train_report
    print(rep.to_text("validation" if res.val_report else "train"), end="")
    return EXIT_OK


def cmd_eval(args) -> int:
    cfg = _load_config(args) if (args.config or args.seed is not None or args.set) else None
    rep = pipeline.run_eval(args.checkpoint, args.data, cfg, args.out)
    print(rep.to_text("eval"), end="")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    cfg = _load_config(args)
    report = pipeline.run_gradcheck(cfg, cfg.seed, args.tolerance, args.epsilon)
    print(report.summary())
    return EXIT_OK if report.passed else EXIT_CHECK


def cmd_ablate(args) -> int:
    cfg = _load_config(args)
    samples = read_samples(args.data)
    rows = pipeline.run_ablation(cfg, args.variants, samples, args.out)
    print(pipeline.ablation_table(rows), end="")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="lragnn")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, out_required=False):
        p.add_argument("--config", help="JSON config file (partial trees allowed)")
        p.add_argument("--seed", type=int, help="override the config seed")
        p.add_argument("--set", action="append", metavar="KEY=VALUE",
                       help="dotted config override, e.g. gcn.depth=4 (repeatable)")
        p.add_argument("--out", required=out_required, help="output directory")

    p = sub.add_parser("synth", help="write a synthetic dataset")
    p.add_argument("--spec", help="JSON file with SyntheticSpec fields")
    p.add_argument("--n", type=int, help="number of samples")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True, help="output JSONL path")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train on a dataset")
    p.add_argument("data")
    common(p, out_required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    p.add_argument("checkpoint")
    p.add_argument("data")
    common(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("gradcheck", help="finite-difference check on the small preset")
    common(p)
    p.add_argument("--tolerance", type=float, default=1e-4)
    p.add_argument("--epsilon", type=float, default=1e-5)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("ablate", help="train ablation variants and compare")
    p.add_argument("data")
    p.add_argument("variants", nargs="*", help=f"any of {', '.join(pipeline.ABLATIONS)}")
    common(p)
    p.set_defaults(func=cmd_ablate)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        code, msg = EXIT_CONFIG, f"config error: {exc}"
    except IngestionError as exc:
        code, msg = EXIT_INGESTION, f"ingestion error: {exc}"
    except NumericError as exc:
        code, msg = EXIT_NUMERIC, f"numeric error: {exc}"
    except CompatibilityError as exc:
        code, msg = EXIT_COMPAT, f"compatibility error: {exc}"
    except LRAGNNError as exc:
        code, msg = EXIT_CONFIG, f"error: {exc}"
    print(msg, file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())
