"""Command-line front end.

Subcommands: gen | pretrain | run | eval | ablation | describe.
Every command writes its outputs (CSV tables, figures, checkpoints) plus a
manifest.json into --out; reruns with the same config and seed reproduce
identical artifacts except for manifest timestamps.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import plots
from .config import RunConfig, load_config
from .data import describe as describe_dataset
from .data import generate, load, save
from .errors import RolltuneError
from .metrics import evaluate_retrieval
from .model import build_network
from .schedule import Strategy, build_schedule, format_schedule
from .serialize import load_checkpoint, save_checkpoint
from .train import TargetData, TrainLog, pretrain, run as run_training

DATASET_FILES = ("source.ds", "target_train.ds", "target_query.ds", "target_gallery.ds")


def _write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text)


def _manifest(out: Path, command: str, config: RunConfig, seed: int,
              artifacts: dict[str, str], extra: dict | None = None) -> None:
    doc = {
        "command": command,
        "config_hash": config.hash(),
        "seed": seed,
        "artifacts": artifacts,
        "created_at": time.strftime("%Y-%m-%dT%H:%M:%S"),
        "effective_config": {k: str(v) for k, v in sorted(config.values.items())},
    }
    doc.update(extra or {})
    _write(out / "manifest.json", json.dumps(doc, indent=2) + "\n")


def _load_target(data_dir: Path) -> TargetData:
    return TargetData(train=load(data_dir / "target_train.ds"),
                      query=load(data_dir / "target_query.ds"),
                      gallery=load(data_dir / "target_gallery.ds"))


def _write_report(report, out: Path, stem: str, figures: bool) -> dict[str, str]:
    artifacts = {}
    _write(out / f"{stem}.csv", report.summary_csv())
    artifacts[f"{stem}.csv"] = "summary metrics"
    _write(out / f"{stem}_per_query.csv", report.per_query_csv())
    artifacts[f"{stem}_per_query.csv"] = "per-query average precision"
    if figures:
        plots.save_cmc_curve(report, out / f"{stem}_cmc.png")
        artifacts[f"{stem}_cmc.png"] = "CMC curve"
    return artifacts


def cmd_gen(args) -> int:
    config = load_config(args.config, _overrides(args, gen=True))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    spec = config.dataset_spec()
    data = generate(spec)
    for fname, ds in zip(DATASET_FILES, (data.source, data.train, data.query,
                                         data.gallery)):
        save(ds, out / fname)
    _manifest(out, "gen", config, spec.seed,
              {f: "dataset" for f in DATASET_FILES})
    print(f"wrote {len(DATASET_FILES)} dataset files to {out}")
    print(f"  source: {len(data.source)} samples / {data.source.num_identities} classes")
    print(f"  target: {len(data.train)} train, {len(data.query)} query, "
          f"{len(data.gallery)} gallery")
    return 0


def cmd_pretrain(args) -> int:
    config = load_config(args.config, _overrides(args))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    source = load(Path(args.data) / "source.ds")
    seed = config["train.seed"]
    net_cfg = config.network_config(num_classes=config["data.train_ids"])
    epochs = args.epochs if args.epochs is not None else config["train.pretrain_epochs"]
    params, log, accuracy = pretrain(net_cfg, source, epochs=epochs, seed=seed,
                                     batch_size=config["train.batch"],
                                     flip_augment=config["train.flip_augment"])
    save_checkpoint(out / "pretrained.ckpt", params)
    _write(out / "pretrain_log.csv", log.to_csv(net_cfg.num_blocks))
    artifacts = {"pretrained.ckpt": "pre-trained weights",
                 "pretrain_log.csv": "per-epoch loss"}
    if args.figures and log.records:
        plots.save_training_curves(log, out / "pretrain_curves.png", title="pretrain")
        artifacts["pretrain_curves.png"] = "loss curve"
    _manifest(out, "pretrain", config, seed, artifacts,
              extra={"holdout_accuracy": accuracy, "epochs": epochs})
    acc_text = "n/a" if accuracy is None else f"{accuracy:.4f}"
    print(f"pretrained {epochs} epochs; held-out source accuracy {acc_text}")
    return 0


def cmd_run(args) -> int:
    config = load_config(args.config, _overrides(args))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    strategy = Strategy.parse(args.strategy)
    data = _load_target(Path(args.data))
    seed = config["train.seed"]

    if args.checkpoint:
        params, _ = load_checkpoint(args.checkpoint)
    else:
        params = build_network(config.network_config(config["data.train_ids"]), seed)
    sched_cfg = config.schedule_config()
    params, log = run_training(params, data, strategy, sched_cfg,
                               config.train_config(), checkpoint_dir=out)
    _write(out / "train_log.csv", log.to_csv(params.config.num_blocks))
    _write(out / "schedule.txt", log.schedule_text)
    report = evaluate_retrieval(params, data.query, data.gallery,
                                flip_fusion=config["train.flip_fusion"])
    artifacts = {"train_log.csv": "per-epoch training log",
                 "schedule.txt": "period schedule manifest",
                 "final.ckpt": "final weights + optimizer state"}
    artifacts.update(_write_report(report, out, "report", args.figures))
    if args.figures:
        plots.save_training_curves(log, out / "curves.png", title=strategy.label())
        artifacts["curves.png"] = "loss/mAP curves"
    boundaries = [{"period": b.period, "buffers_zero": b.buffers_zero,
                   "lrs": b.lrs} for b in log.boundaries]
    retained = [p.tuned_label() for p in
                build_schedule(strategy, sched_cfg, params.config.num_blocks)]
    _manifest(out, "run", config, seed, artifacts,
              extra={"strategy": strategy.label(), "retained_per_period": retained,
                     "boundaries": boundaries, "final_map": report.mean_ap,
                     "final_rank1": report.cmc[1],
                     "wall_clock_s": round(log.wall_clock, 2)})
    print(f"strategy {strategy.label()}: final mAP {report.mean_ap:.4f} "
          f"rank-1 {report.cmc[1]:.4f} ({log.wall_clock:.0f}s)")
    return 0


def cmd_eval(args) -> int:
    config = load_config(args.config, _overrides(args))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    params, _ = load_checkpoint(args.checkpoint)
    data_dir = Path(args.data)
    query = load(data_dir / "target_query.ds")
    gallery = load(data_dir / "target_gallery.ds")
    report = evaluate_retrieval(params, query, gallery,
                                flip_fusion=config["train.flip_fusion"])
    artifacts = _write_report(report, out, "report", args.figures)
    _manifest(out, "eval", config, config["train.seed"], artifacts,
              extra={"checkpoint": str(args.checkpoint), "map": report.mean_ap,
                     "excluded_queries": report.num_excluded})
    print(report.summary_csv().strip())
    return 0


def cmd_ablation(args) -> int:
    config = load_config(args.config, _overrides(args))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    data = _load_target(Path(args.data))
    strategies = [Strategy.parse(s.strip()) for s in args.strategies.split(",")]
    seeds = [int(s) for s in args.seeds.split(",")]
    sched_cfg = config.schedule_config()
    train_cfg = config.train_config()

    if args.checkpoint and len(seeds) > 1:
        raise RolltuneError("--checkpoint pins one pretrained net; use one seed "
                            "or omit it to pretrain per seed")

    rows = []          # (strategy, period, tuned, seed, map, rank1)
    compare_logs = {}
    from dataclasses import replace
    from .model import clone
    for seed in seeds:
        if args.checkpoint:
            theta0, _ = load_checkpoint(args.checkpoint)
        else:
            source = load(Path(args.data) / "source.ds")
            net_cfg = config.network_config(config["data.train_ids"])
            theta0, _, _ = pretrain(net_cfg, source,
                                    epochs=config["train.pretrain_epochs"], seed=seed,
                                    batch_size=config["train.batch"],
                                    flip_augment=config["train.flip_augment"])
        for strategy in strategies:
            cfg_seed = replace(train_cfg, seed=seed, eval_at_period_end=True)
            params, log = run_training(clone(theta0), data, strategy, sched_cfg, cfg_seed)
            plans = build_schedule(strategy, sched_cfg, params.config.num_blocks)
            for plan in plans:
                rec = log.period_records(plan.index)[-1]
                rows.append((strategy.label(), plan.index, plan.tuned_label(), seed,
                             rec.mean_ap, rec.rank1))
            if seed == seeds[0]:
                compare_logs[strategy.label()] = log
    lines = ["strategy,period,tuned,map_mean,map_std,rank1_mean,rank1_std,seeds"]
    keys = sorted({(r[0], r[1], r[2]) for r in rows}, key=lambda k: (k[0], k[1]))
    for name, period, tuned in keys:
        maps = [r[4] for r in rows if (r[0], r[1], r[2]) == (name, period, tuned)]
        r1s = [r[5] for r in rows if (r[0], r[1], r[2]) == (name, period, tuned)]
        lines.append(f"{name},{period},{tuned},{np.mean(maps):.6f},{np.std(maps):.6f},"
                     f"{np.mean(r1s):.6f},{np.std(r1s):.6f},{len(maps)}")
    _write(out / "ablation.csv", "\n".join(lines) + "\n")
    artifacts = {"ablation.csv": "per-period metrics by strategy"}
    if args.figures and compare_logs:
        plots.save_strategy_comparison(compare_logs, out / "comparison.png")
        artifacts["comparison.png"] = "loss/mAP comparison"
    _manifest(out, "ablation", config, seeds[0], artifacts,
              extra={"strategies": [s.label() for s in strategies], "seeds": seeds})
    print("\n".join(lines))
    return 0


def cmd_describe(args) -> int:
    info = describe_dataset(args.path)
    for key, value in info.items():
        print(f"{key}: {value}")
    return 0


def _overrides(args, gen: bool = False) -> dict:
    """Map command-line flags onto config keys."""
    overrides = {}
    if getattr(args, "seed", None) is not None:
        overrides["data.seed" if gen else "train.seed"] = args.seed
    if getattr(args, "periods", None) is not None:
        overrides["train.periods"] = args.periods
    if getattr(args, "epochs_per_period", None) is not None:
        overrides["train.epochs_per_period"] = args.epochs_per_period
    if getattr(args, "flip_fusion", None) is not None:
        overrides["train.flip_fusion"] = args.flip_fusion
    for item in getattr(args, "set", None) or []:
        from .config import parse_value
        if "=" not in item:
            raise RolltuneError(f"--set expects key=value, got {item!r}")
        key, _, text = item.partition("=")
        overrides[key.strip()] = parse_value(key.strip(), text)
    return overrides


def _bool_flag(text: str) -> bool:
    if text.lower() in ("true", "1", "yes", "on"):
        return True
    if text.lower() in ("false", "0", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"expected true/false, got {text!r}")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="rolltune",
        description="Rollback refine-tuning: dataset generation, training "
                    "strategies, and retrieval evaluation.")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, out=True):
        p.add_argument("--config", type=Path, default=None, help="key=value config file")
        p.add_argument("--seed", type=int, default=None, help="override the seed")
        p.add_argument("--set", action="append", metavar="KEY=VALUE",
                       help="override any config key")
        if out:
            p.add_argument("--out", type=Path, required=True, help="output directory")
        p.add_argument("--figures", type=_bool_flag, default=True,
                       help="render PNG figures next to CSV outputs")

    p = sub.add_parser("gen", help="generate the synthetic datasets")
    common(p)
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("pretrain", help="train the source-task network")
    common(p)
    p.add_argument("--data", type=Path, required=True, help="directory from 'gen'")
    p.add_argument("--epochs", type=int, default=None)
    p.set_defaults(func=cmd_pretrain)

    p = sub.add_parser("run", help="run a fine-tuning strategy")
    common(p)
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--checkpoint", type=Path, default=None,
                   help="pre-trained weights (random init when omitted)")
    p.add_argument("--strategy", required=True,
                   help="rollback | baseline | base_cy | fc_warmup | remain_block=i")
    p.add_argument("--periods", type=int, default=None)
    p.add_argument("--epochs-per-period", type=int, default=None)
    p.add_argument("--flip-fusion", type=_bool_flag, default=None)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("eval", help="evaluate a checkpoint on query/gallery")
    common(p)
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--flip-fusion", type=_bool_flag, default=None)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablation", help="per-period metrics across strategies/seeds")
    common(p)
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--checkpoint", type=Path, default=None)
    p.add_argument("--strategies", default="rollback,baseline,base_cy")
    p.add_argument("--seeds", default="0")
    p.add_argument("--periods", type=int, default=None)
    p.add_argument("--epochs-per-period", type=int, default=None)
    p.set_defaults(func=cmd_ablation)

    p = sub.add_parser("describe", help="print dataset file metadata")
    p.add_argument("path", type=Path)
    p.set_defaults(func=cmd_describe)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except RolltuneError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
