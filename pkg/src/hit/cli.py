"""Command-line entry point: ``hit train | eval | ablate | gen-data``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import fields
from pathlib import Path

import numpy as np

from .config import RunConfig, load_config
from .errors import HitError
from .train import ABLATION_AXES, Trainer, load_data, run_ablation, run_training

_TYPES = {"int": int, "float": float, "str": str}


def _add_config_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="key = value config file; flags override its values")
    group = parser.add_argument_group("config overrides")
    for f in fields(RunConfig):
        group.add_argument(
            "--" + f.name.replace("_", "-"),
            dest=f.name,
            type=_TYPES[f.type],
            default=None,
            metavar=f.type.upper(),
            help=f"(default {f.default!r})",
        )


def _config(args) -> RunConfig:
    overrides = {f.name: getattr(args, f.name) for f in fields(RunConfig) if getattr(args, f.name) is not None}
    return load_config(args.config, overrides)


def cmd_train(args) -> int:
    if args.resume:
        trainer = Trainer.load(args.resume)
        if args.epochs is not None:
            # the stored config wins except for the stopping point
            trainer.config = trainer.config.replace(epochs=args.epochs)
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        trainer.history_path = out / "history.txt"
        trainer.history_path.write_text("".join(line + "\n" for line in trainer.history))
        trainer.run()
        trainer.save(out / "checkpoint.hitc")
        test = trainer.evaluate("test")
        (out / "metrics.json").write_text(json.dumps({"test": test.to_dict(), "epoch_losses": trainer.epoch_losses}, indent=2))
    else:
        test = run_training(_config(args), args.out).test
    print("\n".join(test.lines()))
    return 0


def cmd_eval(args) -> int:
    trainer = Trainer.load(args.checkpoint)
    result = trainer.evaluate(args.split)
    print("\n".join(result.lines()))
    if args.json:
        Path(args.json).write_text(json.dumps(result.to_dict(), indent=2))
    return 0


def cmd_ablate(args) -> int:
    values = args.values.split(",") if args.values else None
    if args.axis == "levels" and values is not None:
        values = args.values.split(";")
    rows = run_ablation(_config(args), args.axis, values)
    for row in rows:
        print(row.line())
    if args.json:
        payload = [{"axis": r.axis, "value": r.value, **r.result.to_dict()} for r in rows]
        Path(args.json).write_text(json.dumps(payload, indent=2))
    return 0


def cmd_gen_data(args) -> int:
    config = _config(args)
    # same stream the trainer uses, so file-based runs see identical pairs
    data_ss = np.random.SeedSequence(config.seed).spawn(4)[0]
    data = load_data(config.replace(data_source="synthetic"), data_ss)
    data.to_files(args.video_out, args.text_out)
    print(f"wrote {len(data)} pairs to {args.video_out} and {args.text_out} (vocab_size={config.effective_vocab_size})")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hit", description="Hierarchical cross-modal contrastive matching")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train and write history, checkpoint and metrics")
    _add_config_flags(p)
    p.add_argument("--out", default="run", help="output directory")
    p.add_argument("--resume", help="continue from a checkpoint; its stored config wins except --epochs")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    p.add_argument("checkpoint")
    p.add_argument("--split", choices=("test", "train"), default="test")
    p.add_argument("--json", help="also write the report as JSON")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", help="one run per value along an axis")
    _add_config_flags(p)
    p.add_argument("--axis", required=True, choices=sorted(ABLATION_AXES))
    p.add_argument("--values", help="comma-separated values (';' between level lists)")
    p.add_argument("--json", help="also write the table as JSON")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("gen-data", help="write a synthetic dataset as HITF files")
    _add_config_flags(p)
    p.add_argument("--video-out", required=True)
    p.add_argument("--text-out", required=True)
    p.set_defaults(func=cmd_gen_data)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except (HitError, OSError, ValueError) as exc:
        print(f"hit: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
