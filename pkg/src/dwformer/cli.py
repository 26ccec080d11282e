"""Command-line entry point: ``dwformer {gen,train,eval,trace,config}``.

Every command reads one flat ``key=value`` config file (``--config`` or the
``DWFORMER_CONFIG`` environment variable) and applies ``--set key=value``
overrides on top.  Exit codes: 0 ok, 2 config error, 3 divergence,
4 checkpoint mismatch.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
from pathlib import Path

from .autodiff import DimensionError
from .config import ENV_VAR, RunConfig, describe_keys
from .data import ConfigError, FeatureFileError, generate, load_features, save_features, split
from .export import write_traces
from .model import CheckpointError, DWFormer
from .training import DivergenceError, evaluate, train

EXIT_OK, EXIT_CONFIG, EXIT_DIVERGED, EXIT_CHECKPOINT = 0, 2, 3, 4

log = logging.getLogger("dwformer")


class CheckpointMismatch(Exception):
    pass


def _checksum(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _records(cfg: RunConfig, path: str | None = None):
    path = path or cfg.data_path
    if path:
        return load_features(path)
    return generate(cfg.synthetic_spec())


def _splits(cfg: RunConfig, records):
    train_set, test_set = split(records, cfg.test_fraction, cfg.data_seed)
    val_set = None
    if cfg.val_fraction > 0:
        train_set, val_set = split(train_set, cfg.val_fraction, cfg.data_seed + 1)
    return train_set, val_set, test_set


def cmd_gen(cfg: RunConfig, out_path) -> int:
    records = generate(cfg.synthetic_spec())
    save_features(out_path, records, cfg.num_classes)
    print(f"wrote {len(records)} samples to {out_path} sha256={_checksum(out_path)}")
    return EXIT_OK


def _report_text(rep) -> str:
    lines = [f"WA={rep.wa:.4f}", f"UA={rep.ua:.4f}", f"WF1={rep.wf1:.4f}", "confusion (rows=true):"]
    lines += ["  " + " ".join(f"{v:5d}" for v in row) for row in rep.confusion]
    if rep.absent_classes:
        lines.append(f"classes absent from evaluation set: {rep.absent_classes}")
    return "\n".join(lines) + "\n"


def cmd_train(cfg: RunConfig) -> int:
    records = _records(cfg)
    _check_width(cfg.d_model, records)
    train_set, val_set, test_set = _splits(cfg, records)
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.txt").write_text(cfg.dump())
    model = DWFormer(cfg.model_config())
    with open(out / "train_log.txt", "w") as fh:
        result = train(model, train_set, cfg.train_config(), val=val_set, log_file=fh)
    model.save(out / "model.ckpt")
    rep = evaluate(model, test_set or train_set)
    (out / "metrics.txt").write_text(_report_text(rep))
    (out / "metrics.json").write_text(
        json.dumps({"best_epoch": result.best_epoch, **rep.as_dict()}, indent=2) + "\n"
    )
    print(_report_text(rep), end="")
    return EXIT_OK


def _check_width(d_model: int, records):
    if records and records[0].features.shape[1] != d_model:
        raise CheckpointMismatch(
            f"data has D={records[0].features.shape[1]} but the model expects D={d_model}"
        )


def _load_model(path) -> DWFormer:
    try:
        return DWFormer.load(path)
    except (CheckpointError, ValueError) as exc:
        raise CheckpointMismatch(str(exc)) from exc


def cmd_eval(cfg: RunConfig, checkpoint, data_path=None, all_samples=False) -> int:
    model = _load_model(checkpoint)
    records = _records(cfg, data_path)
    _check_width(model.config.d_model, records)
    if not all_samples:
        records = _splits(cfg, records)[2] or records
    rep = evaluate(model, records)
    print(_report_text(rep), end="")
    return EXIT_OK


def cmd_trace(cfg: RunConfig, checkpoint, data_path, out_path) -> int:
    model = _load_model(checkpoint)
    records = _records(cfg, data_path)
    _check_width(model.config.d_model, records)
    out_path = Path(out_path)
    part_path = out_path.with_name(out_path.stem + "_partitions.csv")
    with open(out_path, "w", newline="") as fi, open(part_path, "w", newline="") as fp:
        rows = write_traces(model, records, fi, fp)
    print(f"wrote {rows} importance rows to {out_path} and partitions to {part_path}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help=f"key=value config file (default: ${ENV_VAR})")
    common.add_argument(
        "--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
        help="override one config key; repeatable",
    )
    common.add_argument("--threads", type=int, help="shorthand for --set threads=K")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(
        prog="dwformer",
        description="Dynamic-window transformer: data generation, training, evaluation, traces.",
        epilog="config keys:\n" + describe_keys(),
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    sub = parser.add_subparsers(dest="command", required=True)
    fmt = argparse.RawDescriptionHelpFormatter
    epilog = "config keys:\n" + describe_keys()

    p = sub.add_parser("gen", parents=[common], help="write a synthetic feature file",
                       epilog=epilog, formatter_class=fmt)
    p.add_argument("out", help="output feature file")

    p = sub.add_parser("train", parents=[common], help="train and write checkpoint + logs",
                       epilog=epilog, formatter_class=fmt)
    p.add_argument("--model", choices=["dwformer", "vanilla", "fixed-window"],
                   help="shorthand for --set variant=...")
    p.add_argument("--data", help="shorthand for --set data_path=...")
    p.add_argument("--out-dir", help="shorthand for --set out_dir=...")

    p = sub.add_parser("eval", parents=[common], help="evaluate a checkpoint",
                       epilog=epilog, formatter_class=fmt)
    p.add_argument("checkpoint")
    p.add_argument("--data", help="feature file (default: config data_path or synthetic)")
    p.add_argument("--all", action="store_true", help="evaluate every sample, not just the test split")

    p = sub.add_parser("trace", parents=[common], help="export importance/partition CSVs",
                       epilog=epilog, formatter_class=fmt)
    p.add_argument("checkpoint")
    p.add_argument("--data", help="feature file (default: config data_path or synthetic)")
    p.add_argument("--out", required=True, help="importance CSV; partitions go to <stem>_partitions.csv")

    sub.add_parser("config", parents=[common], help="print the effective config",
                   epilog=epilog, formatter_class=fmt)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    overrides = list(args.overrides)
    if args.threads is not None:
        overrides.append(f"threads={args.threads}")
    if args.command == "train":
        if args.model:
            overrides.append(f"variant={args.model}")
        if args.data:
            overrides.append(f"data_path={args.data}")
        if args.out_dir:
            overrides.append(f"out_dir={args.out_dir}")
    try:
        cfg = RunConfig.load(args.config or os.environ.get(ENV_VAR), overrides)
        if args.command == "gen":
            return cmd_gen(cfg, args.out)
        if args.command == "train":
            return cmd_train(cfg)
        if args.command == "eval":
            return cmd_eval(cfg, args.checkpoint, args.data, args.all)
        if args.command == "trace":
            return cmd_trace(cfg, args.checkpoint, args.data, args.out)
        sys.stdout.write(cfg.dump())
        return EXIT_OK
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DivergenceError as exc:
        print(f"training diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except (CheckpointMismatch, DimensionError) as exc:
        print(f"checkpoint mismatch: {exc}", file=sys.stderr)
        return EXIT_CHECKPOINT
    except FeatureFileError as exc:
        print(f"bad feature file: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
