"""Command-line entry point: ``fairdyn {analytic,detect,train,plot}``."""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys

from .harness import ExperimentConfig, run_analytic, run_detect, run_train
from .svg import KINDS, MalformedCSV, emit_svg

log = logging.getLogger("fairdyn")

ALGOS = ("pets", "fair-a", "fair-s", "insightfair")


def _default_seed() -> int:
    raw = os.environ.get("FAIRDYN_SEED", "0")
    try:
        return int(raw)
    except ValueError:
        raise SystemExit(f"FAIRDYN_SEED must be an integer, got {raw!r}")


def _load_config(path):
    """Split a JSON config into env overrides and planner/model sections."""
    if path is None:
        return {}, {}, {}, None, None
    with open(path) as fh:
        cfg = json.load(fh)
    if not isinstance(cfg, dict):
        raise ValueError("config file must hold a JSON object")
    planner = cfg.pop("planner", {})
    model = cfg.pop("model", {})
    env = cfg.pop("env", None)
    setting = cfg.pop("setting", None)
    return cfg, planner, model, env, setting


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fairdyn", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("analytic", help="closed-form effect sweep over w0")
    p.add_argument("--out", required=True)
    p.add_argument("--points", type=int, default=101)

    def env_args(p, default_setting):
        p.add_argument("--env", choices=("allocation", "lending"), default=None)
        p.add_argument("--setting", choices=("detect", "unfair", "fair"), default=None,
                       help=f"parameter preset (default: {default_setting})")
        p.add_argument("--config", help="JSON file with env parameters and optional "
                                        "'planner' / 'model' sections")
        p.add_argument("--seed", type=int, default=None, help="default: $FAIRDYN_SEED or 0")
        p.add_argument("--workers", type=int, default=1)
        p.add_argument("--n-boot", type=int, default=200)
        p.add_argument("--state-bins", type=int, default=None)
        p.add_argument("--out", required=True)

    p = sub.add_parser("detect", help="dynamics-fairness detection heatmaps")
    env_args(p, "detect")
    p.add_argument("--channel", choices=("reward", "transition", "both"), default="both")
    p.add_argument("--grid", type=int, default=8)
    p.add_argument("--episodes", type=int, default=200)

    p = sub.add_parser("train", help="planner learning curves")
    env_args(p, "unfair")
    p.add_argument("--algo", choices=ALGOS + ("all",), action="append",
                   help="repeatable; default: all")
    p.add_argument("--seeds", type=int, default=5, help="number of consecutive seeds")
    p.add_argument("--epochs", type=int, default=30)
    p.add_argument("--warmup-episodes", type=int, default=5)
    p.add_argument("--refit-epochs", type=int, default=10)

    p = sub.add_parser("plot", help="render a CSV file as SVG")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--kind", choices=KINDS, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--title")
    p.add_argument("--columns", nargs="+", help="y columns for line plots")
    return parser


def _experiment(args, kind) -> ExperimentConfig:
    overrides, planner, model, env, setting = _load_config(args.config)
    seed = _default_seed() if args.seed is None else args.seed
    common = dict(
        kind=kind,
        env=args.env or env or "allocation",
        setting=args.setting or setting,
        env_overrides=overrides,
        planner=planner,
        model=model,
        n_boot=args.n_boot,
        state_bins=args.state_bins,
        out=args.out,
        workers=args.workers,
    )
    if kind == "detect":
        return ExperimentConfig(channel=args.channel, resolution=args.grid,
                                episodes=args.episodes, seeds=[seed], **common)
    algos = list(ALGOS) if not args.algo or "all" in args.algo else list(dict.fromkeys(args.algo))
    return ExperimentConfig(
        algos=algos,
        seeds=[seed + i for i in range(args.seeds)],
        epochs=args.epochs,
        warmup_episodes=args.warmup_episodes,
        refit_epochs=args.refit_epochs,
        **common,
    )


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        if args.command == "analytic":
            paths = run_analytic(ExperimentConfig(kind="analytic", n_points=args.points, out=args.out))
            log.info("wrote %s", ", ".join(map(str, paths)))
        elif args.command == "detect":
            for res in run_detect(_experiment(args, "detect")):
                log.info("%s sweep: max |nde| %.4g", res.channel, abs(res.nde).max())
        elif args.command == "train":
            run_train(_experiment(args, "train"))
        else:
            emit_svg(args.input, args.kind, args.out, title=args.title, columns=args.columns)
    except (MalformedCSV, ValueError, OSError) as exc:
        print(f"fairdyn: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
