"""
Pose Adaptation Command Line

Single entry point for the experiment lifecycle:

    python cli.py gen-data  --out runs/demo
    python cli.py pretrain  --out runs/demo
    python cli.py adapt     --out runs/demo --set variant=idf
    python cli.py eval      --out runs/demo
    python cli.py ablate    --out runs/demo --plan relations
    python cli.py plot      --out runs/demo
    python cli.py schema

Output layout under --out:
    data/<split>/            generated datasets
    pretrain/                model.ckpt, train_log.jsonl, config.resolved.json
    adapt/                   model.ckpt, train_log.jsonl, checkpoints/, config.resolved.json
    eval/                    result.json, config.resolved.json
    ablate/<plan>/           results.csv, summary.csv, summary.json, table.txt
    plots/                   *.png + *.csv

Exit status: 0 on success, 2 on configuration errors, 1 on any other failure.
"""

import argparse
import json
import logging
import os
import sys
from dataclasses import asdict, dataclass, field
from typing import List, Optional

import pandas as pd

from adapt_engine import TrainLog, adapt
from checkpoint_module import load_checkpoint, load_parameters_into, restore_model, save_checkpoint
from eval_report import (EVAL_SPLITS, PLOT_KINDS, builtin_plan, emit_plots, evaluate_model, load_split,
                         pretrained_model, render_table, run_ablation, training_loader)
from experiment_config import ConfigError, config_schema, config_to_dict, load_config, save_config
from model_zoo import build_model
from synthpose_data import generate_splits
from utils import format_bytes, get_file_size


logger = logging.getLogger("poseadapt")

COMMANDS = ("gen-data", "pretrain", "adapt", "eval", "ablate", "plot", "schema")


@dataclass
class Command:
    """A parsed CLI invocation."""
    name: str
    config_path: Optional[str] = None
    overrides: List[str] = field(default_factory=list)
    out_dir: str = "runs/default"
    seed: Optional[int] = None
    plan: str = "relations"
    seeds: Optional[List[int]] = None
    data_dir: Optional[str] = None
    checkpoint: Optional[str] = None
    mode: str = "adapt"
    workers: int = 0
    kinds: Optional[List[str]] = None

    @property
    def data(self) -> str:
        return self.data_dir or os.path.join(self.out_dir, "data")

    def stage_dir(self, stage: str) -> str:
        path = os.path.join(self.out_dir, stage)
        os.makedirs(path, exist_ok=True)
        return path


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cli.py", description="Domain-adaptive pose estimation experiments")
    parser.add_argument("command", choices=COMMANDS)
    parser.add_argument("--config", dest="config_path", help="JSON config file")
    parser.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                        help="dotted-key override, repeatable (e.g. --set kernel.kernel_count=3)")
    parser.add_argument("--out", dest="out_dir", default="runs/default", help="output directory")
    parser.add_argument("--seed", type=int, help="experiment seed (overrides the config)")
    parser.add_argument("--plan", default="relations", help="ablation plan for `ablate`")
    parser.add_argument("--seeds", help="comma-separated seeds for `ablate` (default: seed, seed+1, seed+2)")
    parser.add_argument("--data", dest="data_dir", help="dataset directory (default: <out>/<data.root>)")
    parser.add_argument("--checkpoint", help="checkpoint to start from / evaluate")
    parser.add_argument("--mode", default="adapt", choices=("source_only", "adapt", "oracle"),
                        help="pretraining mode for `pretrain` (oracle adds labeled target data)")
    parser.add_argument("--workers", type=int, default=0,
                        help="worker processes (0 = num_threads, then POSEADAPT_THREADS, then 1)")
    parser.add_argument("--kinds", help="comma-separated plot kinds for `plot`")
    parser.add_argument("--log-level", default="INFO", choices=("DEBUG", "INFO", "WARNING", "ERROR"))
    return parser


def parse_command(argv: Optional[List[str]] = None):
    args = build_parser().parse_args(argv)
    seeds = [int(s) for s in args.seeds.split(",")] if args.seeds else None
    kinds = [k.strip() for k in args.kinds.split(",")] if args.kinds else None
    command = Command(name=args.command, config_path=args.config_path, overrides=list(args.overrides),
                      out_dir=args.out_dir, seed=args.seed, plan=args.plan, seeds=seeds, data_dir=args.data_dir,
                      checkpoint=args.checkpoint, mode=args.mode, workers=args.workers, kinds=kinds)
    return command, args.log_level


def resolve(command: Command):
    overrides = list(command.overrides)
    if command.seed is not None:
        overrides.append(f"seed={command.seed}")
    return load_config(command.config_path, overrides)


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

def cmd_gen_data(command: Command, cfg):
    os.makedirs(command.data, exist_ok=True)
    save_config(cfg, os.path.join(command.data, "config.resolved.json"))
    manifests = generate_splits(cfg, command.data, cfg.seed, command.workers)
    for name, manifest in manifests.items():
        print(f"  {name:12s} {manifest['count']:6d} samples  sha256 {manifest['sha256']}")
    print(f"\n✅ Datasets written to {command.data}")


def cmd_pretrain(command: Command, cfg):
    out = command.stage_dir("pretrain")
    save_config(cfg, os.path.join(out, "config.resolved.json"))
    log_path = os.path.join(out, "train_log.jsonl")
    if os.path.exists(log_path):
        os.remove(log_path)
    model = pretrained_model(cfg, command.data, command.mode, None, TrainLog(path=log_path))
    path = save_checkpoint(model, cfg, os.path.join(out, "model.ckpt"), {"stage": "pretrain", "mode": command.mode})
    print(f"\n✅ Pretrained model saved to {path} ({format_bytes(get_file_size(path))})")


def cmd_adapt(command: Command, cfg):
    start = command.checkpoint or os.path.join(command.out_dir, "pretrain", "model.ckpt")
    out = command.stage_dir("adapt")
    save_config(cfg, os.path.join(out, "config.resolved.json"))
    model = build_model(cfg.backbone, cfg.variant, cfg.data.num_joints, cfg.codec.heatmap_size, cfg.seed)
    parameters, _ = load_checkpoint(start)
    load_parameters_into(model, parameters, ("G", "F"))

    heatmap_size = cfg.codec.heatmap_size
    source = load_split(command.data, "source", heatmap_size)
    target = load_split(command.data, "target", heatmap_size)
    source_val = load_split(command.data, "source_val", heatmap_size)
    log_path = os.path.join(out, "train_log.jsonl")
    if os.path.exists(log_path):
        os.remove(log_path)
    validate_fn = (lambda m: evaluate_model(m, source_val, cfg).overall) if len(source_val) else None
    adapt(model, training_loader(source, cfg, cfg.seed + 1), training_loader(target, cfg, cfg.seed + 2), cfg,
          TrainLog(path=log_path), os.path.join(out, "checkpoints"), validate_fn)
    path = save_checkpoint(model, cfg, os.path.join(out, "model.ckpt"), {"stage": "adapt"})
    print(f"\n✅ Adapted model saved to {path} ({format_bytes(get_file_size(path))})")


def cmd_eval(command: Command, cfg):
    checkpoint = command.checkpoint
    if checkpoint is None:
        adapted = os.path.join(command.out_dir, "adapt", "model.ckpt")
        checkpoint = adapted if os.path.exists(adapted) else os.path.join(command.out_dir, "pretrain", "model.ckpt")
    model, model_cfg = restore_model(checkpoint)
    out = command.stage_dir("eval")
    save_config(cfg, os.path.join(out, "config.resolved.json"))

    scores = {}
    for label, split in EVAL_SPLITS:
        dataset = load_split(command.data, split, model_cfg.codec.heatmap_size)
        if len(dataset):
            scores[label] = evaluate_model(model, dataset, cfg)
            groups = "  ".join(f"{k} {v * 100:.1f}" for k, v in scores[label].per_group.items())
            print(f"  {label:10s} PCK@{cfg.threshold_ratio:g} {scores[label].overall * 100:.1f}   {groups}")
    with open(os.path.join(out, "result.json"), 'w', encoding='utf-8') as f:
        json.dump({"checkpoint": checkpoint, "scores": {k: asdict(v) for k, v in scores.items()}}, f,
                  sort_keys=True, indent=2)
    print(f"\n✅ Evaluation written to {out}")


def cmd_ablate(command: Command, cfg):
    seeds = command.seeds or [cfg.seed, cfg.seed + 1, cfg.seed + 2]
    plan = builtin_plan(command.plan, base=config_to_dict(cfg), seeds=seeds)
    out = command.stage_dir(os.path.join("ablate", command.plan))
    save_config(cfg, os.path.join(out, "config.resolved.json"))
    summary = run_ablation(plan, command.data, out, command.workers)
    print()
    print(render_table(summary, list(cfg.keypoint_groups)))
    failed = int(summary["n_failed"].sum())
    if failed:
        print(f"❌ {failed} run(s) failed; see {os.path.join(out, 'results.csv')}")
    else:
        print(f"✅ Ablation written to {out}")


def cmd_plot(command: Command, cfg):
    logs = {}
    for stage in ("pretrain", "adapt"):
        path = os.path.join(command.out_dir, stage, "train_log.jsonl")
        if os.path.exists(path):
            logs[stage] = TrainLog.load(path)
    results = None
    sensitivity = os.path.join(command.out_dir, "ablate", "sensitivity", "summary.csv")
    if os.path.exists(sensitivity):
        results = pd.read_csv(sensitivity)

    kinds = command.kinds
    if kinds is None:
        kinds = [k for k in PLOT_KINDS if k != "sensitivity" or results is not None]
        if "adapt" not in logs:
            kinds = [k for k in kinds if k != "discrepancy"]
    out = command.stage_dir("plots")
    save_config(cfg, os.path.join(out, "config.resolved.json"))
    for path in emit_plots(logs, results, out, kinds):
        print(f"  {path}")
    print(f"\n✅ Plots written to {out}")


def cmd_schema(command: Command, cfg):
    print(json.dumps(config_schema(), indent=2, sort_keys=True))


HANDLERS = {
    "gen-data": cmd_gen_data,
    "pretrain": cmd_pretrain,
    "adapt": cmd_adapt,
    "eval": cmd_eval,
    "ablate": cmd_ablate,
    "plot": cmd_plot,
    "schema": cmd_schema,
}


def run(command: Command) -> int:
    """
    Execute a command.

    Returns:
        0 on success, 2 on a configuration error, 1 on any other failure
    """
    try:
        cfg = resolve(command)
        if command.data_dir is None:
            command.data_dir = os.path.join(command.out_dir, cfg.data.root)
        if not command.workers:
            command.workers = cfg.num_threads
        HANDLERS[command.name](command, cfg)
        return 0
    except ConfigError as e:
        print(f"\n❌ Error: {str(e)}", file=sys.stderr)
        return 2
    except Exception as e:
        logger.debug("command %s failed", command.name, exc_info=True)
        print(f"\n❌ Error: {str(e)}", file=sys.stderr)
        return 1


def main(argv: Optional[List[str]] = None) -> int:
    command, log_level = parse_command(argv)
    logging.basicConfig(level=getattr(logging, log_level),
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    return run(command)


if __name__ == "__main__":
    sys.exit(main())
