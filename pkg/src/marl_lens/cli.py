"""Command line entry point: ``marl-lens run|eval|diagnose|export``."""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from . import runner
from .errors import MarlLensError


def _cmd_run(args):
    config = runner.load_config(args.config, seed=args.seed)
    out = Path(args.out) if args.out else Path("runs") / (
        f"{config.scenario}_{config.algorithm}{'' if config.param_sharing else '-nps'}"
        f"_seed{config.seed}")
    progress = None
    if args.verbose:
        last = [0]

        def progress(step):
            if step - last[0] >= config.total_steps // 20:
                last[0] = step
                print(f"step {step}/{config.total_steps}", file=sys.stderr)

    run_dir = runner.run_experiment(config, out, progress=progress)
    print(run_dir)


def _cmd_eval(args):
    print(runner.dumps(runner.evaluate_checkpoint(args.checkpoint, args.episodes, args.seed)))


def _cmd_diagnose(args):
    print(runner.dumps(runner.diagnose(args.run)))


def _cmd_export(args):
    text = runner.export_plot_data(args.runs, args.metric)
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


def build_parser():
    p = argparse.ArgumentParser(prog="marl-lens",
                                description="Train cooperative MARL agents and inspect them.")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="train one experiment from a config file")
    r.add_argument("--config", required=True)
    r.add_argument("--seed", type=int, default=None, help="overrides the config's seed")
    r.add_argument("--out", help="run directory (default runs/<scenario>_<alg>[-nps]_seed<n>)")
    r.add_argument("-v", "--verbose", action="store_true")
    r.set_defaults(func=_cmd_run)

    e = sub.add_parser("eval", help="evaluate a saved checkpoint")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--episodes", type=int, default=10)
    e.add_argument("--seed", type=int, default=0)
    e.set_defaults(func=_cmd_eval)

    d = sub.add_parser("diagnose", help="summarise returns and diagnostics of a run")
    d.add_argument("--run", required=True)
    d.set_defaults(func=_cmd_diagnose)

    x = sub.add_parser("export", help="write plot data as CSV")
    x.add_argument("--runs", nargs="+", required=True)
    x.add_argument("--metric", required=True, choices=runner.EXPORT_METRICS)
    x.add_argument("--out")
    x.set_defaults(func=_cmd_export)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        args.func(args)
    except (MarlLensError, OSError) as exc:
        print(f"marl-lens {args.command}: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
