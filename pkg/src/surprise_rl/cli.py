"""``surprise-rl`` command line: train, eval, compare, presets.

Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import config as config_mod
from . import envs, nn
from .exceptions import ConfigError, ExperimentFailure
from .harness import MetricsLog, evaluate, smooth, train_run

OUT_ENV = "SURPRISE_RL_OUT"
EXIT_OK, EXIT_RUNTIME, EXIT_USAGE = 0, 1, 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="surprise-rl", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    train = sub.add_parser("train", help="run one experiment")
    train.add_argument("--preset", help=f"one of {', '.join(sorted(config_mod.PRESETS))}")
    train.add_argument("--config", help="sectioned key=value config file")
    train.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override one field")
    train.add_argument("--out", help=f"output root (default ${OUT_ENV} or ./runs)")
    train.add_argument("--name", help="run directory name (default <preset>-seed<seed>)")
    train.add_argument("--seed", type=int)
    train.add_argument("--steps", type=int, help="total environment steps")
    train.add_argument("--sm-mode", choices=("off", "normal", "vae"))
    train.add_argument("--alpha", type=float)

    ev = sub.add_parser("eval", help="score a saved policy")
    ev.add_argument("checkpoint")
    ev.add_argument("--game", choices=envs.GAMES)
    ev.add_argument("--split", choices=("train", "test"), default="test")
    ev.add_argument("--episodes", type=int, default=32)
    ev.add_argument("--seed", type=int, default=0)
    ev.add_argument("--train-levels", type=int, default=200)

    cmp_ = sub.add_parser("compare", help="tabulate final-window scores of several runs")
    cmp_.add_argument("run_dirs", nargs="+")
    cmp_.add_argument("--window", type=int, default=5)
    cmp_.add_argument("--weight", type=float, default=0.5, help="smoothing weight")
    cmp_.add_argument("--csv", help="write combined long-format CSV here")

    sub.add_parser("presets", help="list presets")
    return parser


def cmd_train(args) -> int:
    overrides = dict(config_mod.parse_override(item) for item in args.set)
    for flag, key in (("seed", "seed"), ("steps", "total_env_steps"), ("sm_mode", "sm_mode"), ("alpha", "alpha")):
        value = getattr(args, flag)
        if value is not None:
            overrides[key] = value
    text = None
    if args.config:
        try:
            text = Path(args.config).read_text()
        except OSError as exc:
            raise ConfigError(f"config: cannot read {args.config}: {exc.strerror}") from None
    cfg = config_mod.resolve(args.preset, text, overrides)
    root = Path(args.out or os.environ.get(OUT_ENV) or "runs")
    name = args.name or f"{args.preset or 'custom'}-seed{cfg.seed}"
    run_dir = root / name
    try:
        train_run(cfg, run_dir)
    except ExperimentFailure as exc:
        (run_dir / "failure.json").write_text(json.dumps({"update": exc.update, "error": repr(exc.cause)}) + "\n")
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    log = MetricsLog.from_csv(run_dir / "metrics.csv")
    last = log.evaluated()[-1]
    print(f"{run_dir}: {len(log)} updates, train {last.train_score:.3f}, test {last.test_score:.3f}")
    return EXIT_OK


def cmd_eval(args) -> int:
    try:
        nets, meta = nn.load_checkpoint(args.checkpoint)
        policy = nets["policy"]
    except (OSError, ValueError, KeyError) as exc:
        print(f"error: cannot load checkpoint {args.checkpoint}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    game = args.game or meta.get("game_id")
    if game not in envs.GAMES:
        print("error: --game is required when the checkpoint does not name one", file=sys.stderr)
        return EXIT_USAGE
    if args.episodes < 1:
        print("error: --episodes must be >= 1", file=sys.stderr)
        return EXIT_USAGE
    rng = np.random.default_rng(args.seed)
    train, sampler = envs.seed_split(args.train_levels, meta_seed=args.seed)
    if args.split == "train":
        pool = sorted(train)
        seeds = [pool[i] for i in rng.integers(len(pool), size=args.episodes)]
    else:
        seeds = sampler.draw(args.episodes)
    score = evaluate(policy, game, seeds, args.episodes, rng)
    print(f"{game} {args.split} mean score over {args.episodes} episodes: {score:.4f}")
    return EXIT_OK


def _summarize(run_dir: Path, window: int, weight: float):
    path = run_dir / "metrics.csv"
    try:
        log = MetricsLog.from_csv(path)
    except (OSError, ValueError, KeyError) as exc:
        raise ConfigError(f"{path}: unreadable metrics ({exc})") from None
    rows = log.evaluated()
    if len(rows) < window:
        raise ConfigError(f"{path}: {len(rows)} evaluated records, need at least {window}")
    train = smooth([r.train_score for r in rows], weight)
    test = smooth([r.test_score for r in rows], weight)
    return rows, train, test


def cmd_compare(args) -> int:
    if len(args.run_dirs) < 2:
        print("error: compare needs at least two run directories", file=sys.stderr)
        return EXIT_USAGE
    if args.window < 1:
        print("error: --window must be >= 1", file=sys.stderr)
        return EXIT_USAGE
    table, long_rows = [], []
    for d in args.run_dirs:
        rows, train, test = _summarize(Path(d), args.window, args.weight)
        tr, te = float(np.mean(train[-args.window:])), float(np.mean(test[-args.window:]))
        table.append((d, len(rows), tr, te, tr - te))
        for r, s_tr, s_te in zip(rows, train, test):
            long_rows.append((d, r.update, r.steps, "train", r.train_score, s_tr))
            long_rows.append((d, r.update, r.steps, "test", r.test_score, s_te))
    width = max(len("run"), *(len(t[0]) for t in table))
    print(f"{'run':<{width}}  {'evals':>5}  {'train':>8}  {'test':>8}  {'gap':>8}")
    for d, n, tr, te, gap in table:
        print(f"{d:<{width}}  {n:>5}  {tr:>8.3f}  {te:>8.3f}  {gap:>8.3f}")
    if args.csv:
        with open(args.csv, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(("run", "update", "steps", "split", "score", "smoothed"))
            w.writerows(long_rows)
    return EXIT_OK


def cmd_presets(args) -> int:
    for name in sorted(config_mod.PRESETS):
        fields = " ".join(f"{k}={v}" for k, v in config_mod.PRESETS[name].items())
        print(f"{name:18s} {fields}")
    return EXIT_OK


COMMANDS = {"train": cmd_train, "eval": cmd_eval, "compare": cmd_compare, "presets": cmd_presets}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
