"""Command-line entry point.

Subcommands: datagen, train, eval, baseline, ablation, report, regret-audit.
All take a JSON experiment config via --config plus optional --seed,
--threads, and --out-dir overrides. Exit codes: 0 success, 2 config error,
3 numeric failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .datagen import Dataset, save_jsonl
from .errors import AuctionError, ConfigError, DomainError, NumericError, ParseError, SchemaError
from .experiment import (
    ExperimentConfig,
    build_datasets,
    regret_audit,
    run_ablation,
    run_experiment,
    variant_model_config,
)
from .network import AuctionNetwork
from .training import TrainConfig, estimate_regret, train

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERIC = 3


def _load_config(args) -> ExperimentConfig:
    if not args.config:
        raise ConfigError("--config <file> is required")
    try:
        obj = json.loads(Path(args.config).read_text(encoding="utf-8"))
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {args.config}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from exc
    cfg = ExperimentConfig.from_dict(obj)
    if args.seed is not None:
        cfg.seed = args.seed
    if args.threads is not None:
        cfg.threads = args.threads
    if args.out_dir is not None:
        cfg.out_dir = args.out_dir
    return cfg


def _out_dir(cfg: ExperimentConfig) -> Path:
    out = Path(cfg.out_dir or "out")
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_datagen(cfg: ExperimentConfig) -> int:
    train_set, test_set = build_datasets(cfg)
    out = _out_dir(cfg)
    save_jsonl(train_set, out / "train.jsonl")
    save_jsonl(test_set, out / "test.jsonl")
    print(f"wrote {len(train_set)} train / {len(test_set)} test instances to {out}")
    return EXIT_OK


def _train_network(cfg: ExperimentConfig, variant: str, out: Path):
    train_set, test_set = build_datasets(cfg)
    model_cfg = variant_model_config(cfg.model, variant)
    train_cfg = TrainConfig.from_dict({"seed": cfg.seed, "gamma": cfg.gamma, **cfg.train})
    tag = variant.replace(":", "_").replace("+", "_")
    result = train(
        model_cfg, train_cfg, train_set, eval_set=test_set,
        log_path=out / f"{tag}_train_log.jsonl",
        checkpoint_path=out / f"{tag}.ckpt",
    )
    return result, test_set


def cmd_train(cfg: ExperimentConfig) -> int:
    out = _out_dir(cfg)
    result, _ = _train_network(cfg, "jeanet", out)
    last = result.log[-1] if result.log else {}
    print(f"trained jeanet in {result.wall_s:.1f}s; final window: {json.dumps(last)}")
    return EXIT_OK


def cmd_eval(cfg: ExperimentConfig) -> int:
    out = _out_dir(cfg)
    ckpt = cfg.checkpoints.get("jeanet", str(out / "jeanet.ckpt"))
    net = AuctionNetwork.load(ckpt)
    _, test_set = build_datasets(cfg)
    from .core import evaluate_metrics
    from .experiment import evaluate_mechanism

    mech = net.mechanism()
    outcomes = evaluate_mechanism(mech, test_set)
    metrics = evaluate_metrics(outcomes, test_set.instances, cfg.gamma)
    report = estimate_regret(mech, test_set, seed=cfg.seed, value_domain=test_set.value_domain)
    doc = {"sw": metrics.sw, "rev": metrics.rev, "ue": metrics.ue, "score": metrics.score,
           "mean_rgt": report.mean, "max_rgt": report.max}
    (out / "eval.json").write_text(json.dumps(doc, indent=2), encoding="utf-8")
    print(json.dumps(doc))
    return EXIT_OK


def cmd_baseline(cfg: ExperimentConfig) -> int:
    names = tuple(n for n in cfg.mechanisms if n in ("vcg", "gsp", "ias"))
    if not names:
        raise ConfigError("no baseline mechanisms in config")
    sub = ExperimentConfig.from_dict({**cfg.to_dict(), "mechanisms": list(names)})
    report = run_experiment(sub)
    print(report.to_csv())
    return EXIT_OK


def cmd_ablation(cfg: ExperimentConfig) -> int:
    variants = [m for m in cfg.mechanisms if m.startswith("ablation:")] or ["ablation:etm+dmm"]
    for variant in variants:
        report = run_ablation(cfg, variant)
        print(report.to_csv())
    return EXIT_OK


def cmd_report(cfg: ExperimentConfig) -> int:
    report = run_experiment(cfg)
    print(report.to_csv())
    if cfg.out_dir:
        print(f"report written to {cfg.out_dir}")
    return EXIT_OK


def cmd_regret_audit(cfg: ExperimentConfig) -> int:
    out = _out_dir(cfg)
    ckpt = cfg.checkpoints.get("jeanet", str(out / "jeanet.ckpt"))
    net = AuctionNetwork.load(ckpt)
    _, test_set = build_datasets(cfg)
    report = regret_audit(
        net.mechanism(), test_set,
        grid_step=float(cfg.audit.get("grid_step", 0.05)),
        n_samples=int(cfg.audit.get("n_samples", 128)), seed=cfg.seed,
    )
    doc = {"method": report.method, "mean": report.mean, "max": report.max,
           "per_advertiser": report.per_advertiser.tolist(), **report.details}
    (out / "regret_audit.json").write_text(json.dumps(doc, indent=2), encoding="utf-8")
    print(json.dumps(doc))
    return EXIT_OK


COMMANDS = {
    "datagen": cmd_datagen,
    "train": cmd_train,
    "eval": cmd_eval,
    "baseline": cmd_baseline,
    "ablation": cmd_ablation,
    "report": cmd_report,
    "regret-audit": cmd_regret_audit,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="jointauction",
                                     description="Joint advertising auction laboratory")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", required=False, help="JSON experiment config file")
    common.add_argument("--seed", type=int, default=None, help="override config seed")
    common.add_argument("--threads", type=int, default=None, help="worker threads for evaluation")
    common.add_argument("--out-dir", default=None, help="output directory")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sub.add_parser(name, parents=[common])
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = _load_config(args)
        code = COMMANDS[args.command](cfg)
    except (ConfigError, SchemaError, ParseError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NumericError, DomainError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except AuctionError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    return code


if __name__ == "__main__":
    sys.exit(main())
