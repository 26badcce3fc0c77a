"""Command-line front end.

Exit codes: 0 on success, 2 on a configuration error, 3 when training fails.
The ``LTLCONTROL_SEED`` environment variable sets the seed unless ``--seed``
is given.
"""
from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

from .automata import load_ldba, validate_ldba
from .bench import (ConfigError, evaluate_trained, load_configs, load_model,
                    parse_override, run_benchmark, save_model, train_algorithm)
from .environment import ASSET_DIR, load_map
from .evaluation import evaluate_policy, export_path, step_cap

EXIT_OK, EXIT_CONFIG, EXIT_TRAIN = 0, 2, 3
SEED_ENV = "LTLCONTROL_SEED"

log = logging.getLogger("ltlcontrol")


def _seed(args):
    if args.seed is not None:
        return args.seed
    env = os.environ.get(SEED_ENV)
    if env is None:
        return None
    try:
        return int(env)
    except ValueError:
        raise ConfigError(f"{SEED_ENV} must be an integer, got {env!r}") from None


def _configs(args):
    overrides = dict(parse_override(o) for o in args.set or [])
    seed = _seed(args)
    if seed is not None:
        overrides["seed"] = seed
    return load_configs(args.config, overrides)


def _pick(args):
    configs, _ = _configs(args)
    if args.run is None:
        if len(configs) != 1:
            raise ConfigError(f"{args.config} holds {len(configs)} runs; pick one with --run")
        return configs[0]
    if not 0 <= args.run < len(configs):
        raise ConfigError(f"--run must lie in 0..{len(configs) - 1}")
    return configs[args.run]


def cmd_train(args) -> int:
    cfg = _pick(args)
    try:
        tr = train_algorithm(cfg)
        rate, disc = evaluate_trained(tr, cfg)
    except ConfigError:
        raise
    except Exception as e:
        log.error("training failed: %s: %s", type(e).__name__, e)
        return EXIT_TRAIN
    save_model(tr, cfg, args.out)
    print(f"{cfg.name}: samples {tr.sample_complexity}, iterations {tr.iterations}, "
          f"time {tr.train_time:.2f} s, success {rate:.2f}, U {disc:.4f}")
    print(f"model written to {args.out}")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    cfg = _pick(args)
    policy, env, aut = load_model(args.model, cfg)
    trials = args.trials or cfg.eval_trials
    T = args.steps or cfg.eval_steps or step_cap(env)
    rate, disc = evaluate_policy(policy, env, aut, cfg.params, trials, T, cfg.gamma,
                                 cfg.eval_seed if args.eval_seed is None else args.eval_seed)
    print(f"success {rate:.4f} over {trials} trials, U {disc:.4f}")
    return EXIT_OK


def cmd_bench(args) -> int:
    configs, reps = _configs(args)
    if args.repetitions:
        reps = args.repetitions
    report = run_benchmark(configs, reps, log=lambda s: log.info("%s", s))
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    report.write(out)
    print(report.format_table(), end="")
    print(f"report written to {out} and {out.with_suffix('.txt')}")
    return EXIT_OK


def cmd_export_path(args) -> int:
    cfg = _pick(args)
    policy, env, aut = load_model(args.model, cfg)
    seed = args.path_seed if args.path_seed is not None else cfg.eval_seed
    rows = export_path(policy, env, aut, cfg.params, seed, args.out,
                       args.steps or cfg.eval_steps, cfg.gamma)
    print(f"{len(rows)} rows written to {args.out}")
    return EXIT_OK


def cmd_validate_assets(args) -> int:
    paths = [Path(p) for p in args.paths] or sorted(ASSET_DIR.glob("*.map")) + \
        sorted(ASSET_DIR.glob("*.ldba"))
    bad = 0
    for p in paths:
        try:
            if p.suffix == ".ldba":
                aut = load_ldba(p)
                validate_ldba(aut)
                desc = f"{len(aut.states)} states, {len(aut.accepting_sets)} accepting set(s)"
            elif p.suffix in (".map", ".yaml", ".yml"):
                world = load_map(p)
                desc = f"{world.width:g} x {world.height:g} km, {len(world.regions)} regions"
            else:
                raise ConfigError("unknown asset type (expected .map or .ldba)")
        except (OSError, ValueError) as e:
            bad += 1
            print(f"FAIL {p}: {e}")
        else:
            print(f"ok   {p}: {desc}")
    return EXIT_CONFIG if bad else EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="ltlcontrol",
                                 description="Temporal-logic constrained control synthesis")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p, model=False):
        p.add_argument("config", help="YAML run configuration")
        if model:
            p.add_argument("model", help="directory written by 'train'")
        p.add_argument("--run", type=int, help="index of the run in a multi-run config")
        p.add_argument("--seed", type=int, help=f"training seed (overrides ${SEED_ENV})")
        p.add_argument("--set", action="append", metavar="KEY=VALUE",
                       help="override a config field (repeatable)")

    p = sub.add_parser("train", help="train one configuration and save the model")
    common(p)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="evaluate a saved model")
    common(p, model=True)
    p.add_argument("--trials", type=int)
    p.add_argument("--steps", type=int)
    p.add_argument("--eval-seed", type=int)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("bench", help="train and evaluate every run, write a report")
    common(p)
    p.add_argument("--repetitions", type=int)
    p.add_argument("--out", default="bench.json", help="JSON report; a .txt table goes alongside")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("export-path", help="write one rollout of a saved model as CSV")
    common(p, model=True)
    p.add_argument("--out", required=True)
    p.add_argument("--path-seed", type=int)
    p.add_argument("--steps", type=int)
    p.set_defaults(func=cmd_export_path)

    p = sub.add_parser("validate-assets", help="check map and automaton files")
    p.add_argument("paths", nargs="*", help="files to check (default: bundled assets)")
    p.set_defaults(func=cmd_validate_assets)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(message)s")
    try:
        return args.func(args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
