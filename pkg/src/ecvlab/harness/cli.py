"""Command-line entry point: ``ecvlab <subcommand> [options]``.

Failures print a single ``error key=<setting> msg=<text>`` line to stderr and
exit non-zero (2 for configuration errors, 1 otherwise).
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from ..grpo import ConfigError
from .config import ExperimentConfig, load_config, parse_seeds, preset
from . import experiments
from .report import emit_report


def _config(args) -> ExperimentConfig:
    if args.config:
        cfg = load_config(args.config)
    else:
        cfg = preset(args.preset)
    if args.seeds:
        cfg.experiment.seeds = parse_seeds(args.seeds)
    if args.seed is not None:
        if args.seed < 0:
            raise ConfigError("--seed", "must be >= 0")
        cfg.experiment.seeds = [args.seed]
    return cfg.validate()


def _out(args, default: str) -> Path:
    return Path(args.out or default)


def cmd_train(args):
    cfg = _config(args)
    seed = cfg.experiment.seeds[0]
    out = _out(args, cfg.experiment.out or f"runs/train_seed{seed}")
    records = experiments.run_training(cfg, seed, out, args.overwrite)
    if records:
        print(f"train: {len(records)} steps, final entropy {records[-1].entropy_exact:.6g}, out={out}")
    else:
        print(f"train: 0 steps, out={out}")


def cmd_compare(args):
    cfg = _config(args)
    out = _out(args, cfg.experiment.out or "runs/compare")
    summaries, _ = experiments.run_compare_rewards(cfg, out, args.overwrite)
    for s in summaries.values():
        print(f"{s.name}: final entropy {s.mean:.6g} +- {s.stderr:.2g} (initial {s.initial_entropy:.6g})")
    print(f"out={out}")


def cmd_sweep(args):
    cfg = _config(args)
    out = _out(args, cfg.experiment.out or "runs/sweep_r0")
    summaries, verdict, _ = experiments.run_sweep_r0(cfg, out, args.overwrite)
    for s in summaries.values():
        print(f"{s.name}: final entropy {s.mean:.6g} +- {s.stderr:.2g}")
    if verdict is not None:
        print(f"ordered={verdict['ordered']} ({' < '.join(verdict['order'])})")
    print(f"out={out}")


def cmd_verify(args):
    cfg = _config(args)
    out = _out(args, cfg.experiment.out or "runs/verify_theorem")
    report = experiments.run_verify_theorem(cfg, cfg.experiment.seeds[0], out, args.overwrite)
    print(json.dumps(report.as_dict(), sort_keys=True))


def cmd_gradcheck(args):
    from ..gradcheck import run_gradcheck

    cfg = _config(args)
    result = run_gradcheck(args.instances, np.random.default_rng([cfg.experiment.seeds[0], 0x6C]))
    print(json.dumps({"instances": result.instances, "max_rel_error": result.max_rel_error}))
    if result.max_rel_error > 1e-4:
        raise RuntimeError(f"gradient check failed: max relative error {result.max_rel_error:.3g}")


def cmd_report(args):
    paths = [Path(p) for p in args.csv]
    for p in paths:
        if not p.is_file():
            raise FileNotFoundError(f"no such telemetry file: {p}")
    out = _out(args, "runs/report")
    written = emit_report(paths, out)
    print(f"report: {len(written)} files in {out}")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ecvlab", description="Toy GRPO / ECVGPO entropy laboratory")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="key = value config file")
        p.add_argument("--preset", default="default", help="preset used when no --config is given")
        p.add_argument("--seed", type=int, help="single seed (overrides the config)")
        p.add_argument("--seeds", help="seed list, e.g. 0..4 or 1,3,5")
        p.add_argument("--out", help="output directory")
        p.add_argument("--overwrite", action="store_true", help="replace a non-empty output directory")

    for name, fn, helptext in (
        ("train", cmd_train, "single training run"),
        ("compare-rewards", cmd_compare, "reasoning vs grounding entropy"),
        ("sweep-r0", cmd_sweep, "entropy under several r0 values"),
        ("verify-theorem", cmd_verify, "entropy-change forecast error statistics"),
        ("gradcheck", cmd_gradcheck, "finite-difference gradient check"),
    ):
        p = sub.add_parser(name, help=helptext)
        common(p)
        if name == "gradcheck":
            p.add_argument("--instances", type=int, default=60)
        p.set_defaults(func=fn)

    p = sub.add_parser("report", help="render telemetry CSVs to SVG")
    p.add_argument("csv", nargs="+")
    p.add_argument("--out")
    p.add_argument("--overwrite", action="store_true")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        args.func(args)
    except ConfigError as err:
        print(f"error key={err.key} msg={err.message}", file=sys.stderr)
        return 2
    except (ValueError, OSError, KeyError, RuntimeError) as err:
        msg = str(err).replace("\n", " ")
        print(f"error key=- msg={msg}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
