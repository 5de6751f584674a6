"""Command-line entry point: ``rp1 run | aggregate | lambda-report``."""
from __future__ import annotations

import argparse
import glob
import json
import logging
import sys

import numpy as np

from rp1.config import MODES, ConfigError, RunConfig, load_config
from rp1.runner import RunAborted, run, run_seeds
from rp1.stats import aggregate, lambda_improvement_report

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def _parse_seeds(text: str) -> list[int]:
    seeds = []
    for part in text.split(","):
        if "-" in part:
            lo, hi = part.split("-")
            seeds.extend(range(int(lo), int(hi) + 1))
        elif part:
            seeds.append(int(part))
    return seeds


def _expand(patterns) -> list[str]:
    out = []
    for pat in patterns:
        out.extend(sorted(glob.glob(pat)) or [])
    return out


def cmd_run(args) -> int:
    try:
        cfg = load_config(args.config) if args.config else RunConfig()
        overrides = {}
        for key in ("seed", "mode", "env"):
            if getattr(args, key) is not None:
                overrides[key] = getattr(args, key)
        for item in args.set or []:
            key, _, value = item.partition("=")
            overrides[key] = _parse_value(value)
        if overrides:
            cfg = cfg.replace(**overrides)
        seeds = _parse_seeds(args.seeds) if args.seeds else None
    except (ConfigError, ValueError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        if seeds:
            dirs = run_seeds(cfg, seeds, args.out, jobs=args.jobs)
            for d in dirs:
                print(d)
        else:
            print(run(cfg, args.out))
    except RunAborted as exc:
        print(f"run aborted: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


def _fmt(x) -> str:
    return f"{x:.4g}" if isinstance(x, float) else str(x)


def cmd_aggregate(args) -> int:
    a = _expand(args.group_a)
    b = _expand(args.group_b) if args.group_b else []
    if not a:
        print("group A matched no run directories", file=sys.stderr)
        return EXIT_CONFIG
    try:
        summary = aggregate(a, b or None, at_timesteps=args.at_timesteps)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    print(f"env: {summary['env']}  runs: A={len(a)} B={len(b)}")
    print("timesteps,a_median,a_q25,a_q75" + (",b_median,b_q25,b_q75" if b else ""))
    for i, ts in enumerate(summary["grid"]):
        row = [f"{ts:.0f}"] + [_fmt(float(summary["a"][k][i])) for k in ("median", "q25", "q75")]
        if b:
            row += [_fmt(float(summary["b"][k][i])) for k in ("median", "q25", "q75")]
        print(",".join(row))
    if args.at_timesteps is not None:
        print(f"at {args.at_timesteps} timesteps: median A={_fmt(summary['a_at']['median'])}", end="")
        if b:
            w = summary["welch"]
            print(f" median B={_fmt(summary['b_at']['median'])} welch t={_fmt(w['t'])} p={_fmt(w['p'])}")
        else:
            print()
    if args.json:
        with open(args.json, "w") as fh:
            json.dump(summary, fh, indent=2, default=lambda o: o.tolist() if isinstance(o, np.ndarray) else str(o))
    return EXIT_OK


def cmd_lambda_report(args) -> int:
    dirs = _expand(args.runs)
    try:
        table = lambda_improvement_report(dirs)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    print("lambda,mean_normalized_improvement")
    for lam, v in table.items():
        print(f"{lam},{v!r}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="rp1", description=__doc__)
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run one experiment (or one per seed)")
    r.add_argument("--config", help="flat JSON config file")
    r.add_argument("--seed", type=int)
    r.add_argument("--mode", choices=MODES)
    r.add_argument("--env")
    r.add_argument("--out", default="runs/latest")
    r.add_argument("--seeds", help="fan out over seeds, e.g. 0-9 or 1,3,5; runs go to OUT/seed_<n>")
    r.add_argument("--jobs", type=int, default=1, help="parallel processes for --seeds")
    r.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config key, e.g. policy.lr=1e-3")
    r.set_defaults(func=cmd_run)

    a = sub.add_parser("aggregate", help="median/IQR curves and Welch's t-test across runs")
    a.add_argument("--group-a", nargs="+", required=True)
    a.add_argument("--group-b", nargs="+")
    a.add_argument("--at-timesteps", type=float)
    a.add_argument("--json", help="also write the summary as JSON")
    a.set_defaults(func=cmd_aggregate)

    lr = sub.add_parser("lambda-report", help="mean one-step improvement per lambda value")
    lr.add_argument("runs", nargs="+")
    lr.set_defaults(func=cmd_lambda_report)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(asctime)s %(name)s %(levelname)s %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
