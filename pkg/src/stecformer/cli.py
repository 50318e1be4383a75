"""Command-line entry point.

Exit codes: 0 success, 1 usage error (bad arguments, missing files), 2 runtime error.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import evaluation as ev
from .checkpoint import load_model
from .data import SynthSpec, synth_dataset, write_csv


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="stecformer", description="Train and evaluate cascaded-decoder forecasters.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    t = sub.add_parser("train", help="train one configuration and write its artifacts")
    t.add_argument("config")
    t.add_argument("--denormalized", action="store_true", help="also report original-unit metrics")

    e = sub.add_parser("eval", help="evaluate a checkpoint on the test split")
    e.add_argument("config")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--denormalized", action="store_true")
    e.add_argument("--out", help="report path (default: <output_dir>/eval_report.json)")

    c = sub.add_parser("consistency", help="per-sub-period MSE CSV for one or more checkpoints")
    c.add_argument("config")
    c.add_argument("--checkpoint", required=True, action="append",
                   help="repeatable; label is taken from the checkpoint's CDP setting")
    c.add_argument("--out", help="CSV path (default: <output_dir>/consistency.csv)")

    a = sub.add_parser("ablate", help="run the five-configuration toggle grid")
    a.add_argument("config")
    a.add_argument("--parallel", type=int, default=1, metavar="K")

    s = sub.add_parser("synth", help="generate a synthetic CSV from a JSON spec")
    s.add_argument("spec")
    s.add_argument("out")
    return p


def _need_file(path: str) -> Path:
    p = Path(path)
    if not p.is_file():
        raise UsageError(f"file not found: {path}")
    return p


def _load_config(path: str) -> ev.ExperimentConfig:
    p = _need_file(path)
    try:
        return ev.ExperimentConfig.load(p)
    except (ValueError, TypeError, json.JSONDecodeError) as e:
        raise UsageError(f"invalid config {path}: {e}") from None


def _label(model) -> str:
    return "cdp" if model.cfg.num_stages > 1 else "no_cdp"


def run(args) -> None:
    if args.command == "train":
        cfg = _load_config(args.config)
        rep = ev.run_experiment(cfg, denormalized=args.denormalized)
        print(json.dumps({"mse": rep.mse, "mae": rep.mae, "jitter": rep.to_dict()["jitter"],
                          "output_dir": str(cfg.resolve(cfg.output_dir))}))
    elif args.command == "eval":
        cfg = _load_config(args.config)
        _need_file(args.checkpoint)
        rep = ev.evaluate_checkpoint(cfg, args.checkpoint, args.denormalized)
        out = Path(args.out) if args.out else cfg.resolve(cfg.output_dir) / "eval_report.json"
        out.parent.mkdir(parents=True, exist_ok=True)
        ev.write_report(out, rep)
        print(json.dumps({"mse": rep.mse, "mae": rep.mae, "report": str(out)}))
    elif args.command == "consistency":
        cfg = _load_config(args.config)
        data = ev.prepare_data(cfg)
        reports = {}
        for ck in args.checkpoint:
            _need_file(ck)
            model = load_model(ck)
            rep, _, _ = ev.evaluate_model(model, data, cfg)
            label = _label(model)
            if label in reports:
                label = f"{label}:{ck}"
            reports[label] = rep
        out = Path(args.out) if args.out else cfg.resolve(cfg.output_dir) / "consistency.csv"
        out.parent.mkdir(parents=True, exist_ok=True)
        ev.write_subperiod_csv(out, reports)
        print(str(out))
    elif args.command == "ablate":
        cfg = _load_config(args.config)
        if args.parallel < 1:
            raise UsageError("--parallel must be at least 1")
        ev.run_ablation(cfg, parallel=args.parallel)
        print(str(cfg.resolve(cfg.output_dir) / "ablation.csv"))
    elif args.command == "synth":
        p = _need_file(args.spec)
        try:
            spec = SynthSpec.from_json(p)
        except (ValueError, TypeError, json.JSONDecodeError) as e:
            raise UsageError(f"invalid synth spec {args.spec}: {e}") from None
        write_csv(args.out, synth_dataset(spec))
        print(args.out)


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            parser.print_help(sys.stderr)
            return 1
    except UsageError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except SystemExit as e:          # --help
        return int(e.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        run(args)
    except UsageError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except Exception as e:
        print(f"runtime error: {e}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
