"""Command-line entry point: ``train``, ``eval``, ``profile`` and ``ablate``.

Every config key is also a flag (``learning_rate`` -> ``--learning-rate``).
Precedence is built-in defaults < preset < ``--config`` file < flags.
"""

from __future__ import annotations

import argparse
import contextlib
import csv
import dataclasses
import json
import logging
import sys
from pathlib import Path
from typing import Sequence

import numpy as np

from .config import ABLATION_GRID, PRESETS, ExperimentConfig, load_config_file, resolve_config
from .errors import BatchStarvationError, ConfigurationError, DispoLabError
from .metrics import evaluate
from .outputs import (PROFILE_CONFIGS, emit_outputs, write_eval_csv, write_profiles_csv,
                      write_regime_log, write_rollout_dump)
from .policy import load_checkpoint
from .trainer import eval_task_set, run_experiment

# sampler-facing aliases for config keys
_ALIASES = {"target_groups": "mini_batch_groups"}


def _add_config_flags(parser: argparse.ArgumentParser) -> None:
    group = parser.add_argument_group("experiment config")
    group.add_argument("--config", type=Path, help="TOML file of config keys")
    for f in dataclasses.fields(ExperimentConfig):
        group.add_argument("--" + f.name.replace("_", "-"), dest=f.name, default=None, metavar="VALUE")
    for alias, target in _ALIASES.items():
        group.add_argument("--" + alias.replace("_", "-"), dest=target, default=None, metavar="VALUE",
                           help=f"alias of --{target.replace('_', '-')}")


def _config_from_args(args: argparse.Namespace, **forced) -> ExperimentConfig:
    layers = []
    if args.config is not None:
        layers.append(load_config_file(args.config))
    flags = {f.name: getattr(args, f.name) for f in dataclasses.fields(ExperimentConfig)}
    layers.append({k: v for k, v in flags.items() if v is not None})
    layers.append(forced)
    return resolve_config(*layers)


def _run_dir(config: ExperimentConfig) -> Path:
    return Path(config.output_dir or f"runs/{config.preset or config.algorithm.lower()}-seed{config.seed}")


def _train(config: ExperimentConfig, out: Path, plots: bool, dump_rollouts: bool, progress: bool,
           regime_log_every: int = 0) -> dict:
    out.mkdir(parents=True, exist_ok=True)
    with contextlib.ExitStack() as stack:
        dump = stack.enter_context((out / "rollouts.jsonl").open("w", encoding="utf-8")) if dump_rollouts else None
        regimes = (stack.enter_context((out / "regime_log.jsonl").open("w", encoding="utf-8"))
                   if regime_log_every else None)

        def hook(rnd, res):
            if dump is not None:
                write_rollout_dump(res.fill.groups, rnd, dump)
            if regimes is not None:
                write_regime_log(res.records, res.metrics[0].update_index, regimes, regime_log_every)

        try:
            result = run_experiment(config, progress=progress, on_round=hook, keep_records=regimes is not None)
        except BatchStarvationError as exc:
            # keep the artifacts of the rounds that finished
            if getattr(exc, "result", None) is not None and exc.result.metrics:
                emit_outputs(exc.result, out, plots=plots)
            raise
    files = emit_outputs(result, out, plots=plots)
    last = config.updates_per_rollout
    summary = {
        "output_dir": str(out),
        "updates": len(result.metrics),
        "final_train_accuracy": float(np.mean([m.train_accuracy for m in result.metrics[-last:]])),
        "best_avg_at_k": result.best_eval.avg_at_k if result.best_eval else None,
        "files": sorted(str(p.name) for p in files.values()),
    }
    return summary


def cmd_train(args: argparse.Namespace) -> dict:
    config = _config_from_args(args)
    if args.regime_log_every < 0:
        raise ConfigurationError("--regime-log-every must be >= 0")
    return _train(config, _run_dir(config), not args.no_plots, args.dump_rollouts, args.progress,
                  args.regime_log_every)


def cmd_eval(args: argparse.Namespace) -> dict:
    config = _config_from_args(args)
    params = load_checkpoint(args.checkpoint)
    report = evaluate(params, eval_task_set(config), config.eval_k,
                      np.random.default_rng([config.seed, 4]), config.limits())
    if args.output is not None:
        write_eval_csv([report], args.output)
    return {"checkpoint": str(args.checkpoint), **report.to_row(),
            "per_task_accuracy": report.per_task_accuracy}


def cmd_profile(args: argparse.Namespace) -> dict:
    if args.r_step <= 0 or args.r_max <= args.r_step:
        raise ConfigurationError("need 0 < --r-step < --r-max")
    n = int(round(args.r_max / args.r_step))
    grid = np.arange(1, n + 1) * args.r_step
    path = write_profiles_csv(args.output, PROFILE_CONFIGS, grid)
    return {"output": str(path), "rows": 2 * len(PROFILE_CONFIGS) * len(grid)}


def cmd_ablate(args: argparse.Namespace) -> dict:
    presets = args.presets or list(ABLATION_GRID)
    unknown = [p for p in presets if p not in PRESETS]
    if unknown:
        raise ConfigurationError(f"unknown presets {unknown}; valid presets: {', '.join(PRESETS)}")
    base = _config_from_args(args)
    root = Path(base.output_dir or "runs/ablation")
    rows = []
    for preset in presets:
        for seed in args.seeds:
            # preset values apply beneath any explicit flag or config-file key
            config = _config_from_args(args, preset=preset, seed=seed,
                                       output_dir=str(root / preset / f"seed{seed}"))
            summary = _train(config, Path(config.output_dir), not args.no_plots, False, args.progress)
            rows.append({"preset": preset, "seed": seed, "updates": summary["updates"],
                         "final_train_accuracy": summary["final_train_accuracy"],
                         "best_avg_at_k": summary["best_avg_at_k"]})
    root.mkdir(parents=True, exist_ok=True)
    with (root / "ablation.csv").open("w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, list(rows[0]), lineterminator="\n")
        writer.writeheader()
        writer.writerows(rows)
    return {"output": str(root / "ablation.csv"), "runs": len(rows)}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dispolab", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    train = sub.add_parser("train", help="run one experiment and write its artifacts")
    _add_config_flags(train)
    train.add_argument("--no-plots", action="store_true")
    train.add_argument("--dump-rollouts", action="store_true", help="write rollouts.jsonl")
    train.add_argument("--progress", action="store_true", help="log one line per rollout round")
    train.add_argument("--regime-log-every", type=int, default=0, metavar="N",
                       help="write every N-th per-token update record to regime_log.jsonl (0: off)")
    train.set_defaults(func=cmd_train)

    ev = sub.add_parser("eval", help="Avg@k evaluation of a saved checkpoint")
    _add_config_flags(ev)
    ev.add_argument("--checkpoint", type=Path, required=True)
    ev.add_argument("--output", type=Path, help="also write the report as CSV")
    ev.set_defaults(func=cmd_eval)

    prof = sub.add_parser("profile", help="gradient-weight profiles of the five objectives as CSV")
    prof.add_argument("--output", type=Path, default=Path("profiles.csv"))
    prof.add_argument("--r-max", type=float, default=12.0)
    prof.add_argument("--r-step", type=float, default=0.05)
    prof.set_defaults(func=cmd_profile)

    ab = sub.add_parser("ablate", help="run the regime-ablation presets sequentially")
    _add_config_flags(ab)
    ab.add_argument("--presets", nargs="+", metavar="PRESET")
    ab.add_argument("--seeds", nargs="+", type=int, default=[0])
    ab.add_argument("--no-plots", action="store_true")
    ab.add_argument("--progress", action="store_true")
    ab.set_defaults(func=cmd_ablate)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    if getattr(args, "progress", False):
        logging.basicConfig(level=logging.INFO, format="%(message)s")
    try:
        summary = args.func(args)
    except DispoLabError as exc:
        print(json.dumps(exc.to_record()), file=sys.stderr)
        return 2 if isinstance(exc, ConfigurationError) else 1
    except OSError as exc:
        print(json.dumps({"error": "io_error", "message": str(exc)}), file=sys.stderr)
        return 1
    print(json.dumps(summary, indent=2))
    return 0


if __name__ == "__main__":
    sys.exit(main())
