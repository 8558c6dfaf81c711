"""Command-line entry point.

Verbs::

    synth-optimal | synth-train | synth-compare | replay-train
        [--config FILE] [--lambda L1,L2,...] [--reps R] [--seed S] [--out DIR]
    replay-train also takes [--dataset FILE.jsonl] or [--fixture N]
    score-comments --fact-checks CSV --comments CSV --out JSONL [--rule positive|literal]
    validate-data FILE.jsonl

``--lambda`` accepts ``inf`` for the original model. The config file is INI
(see :func:`consequential.experiments.load_config`). Exit codes: 0 success,
2 config error, 3 data error, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

from .core import Trajectory, TrajectoryError
from .data import (
    DataError,
    domain_scores,
    read_comments,
    read_fact_checks,
    score_comments,
    submission_from_record,
    write_dataset,
)
from .experiments import ConfigError, default_config, load_config, parse_lambda_list, run
from .policy_gradient import TrainingError
from .report import write_report

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4

EXPERIMENT_VERBS = {
    "synth-optimal": "synth_optimal",
    "synth-train": "synth_train",
    "synth-compare": "synth_compare",
    "replay-train": "replay_train",
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="consequential", description="Consequential ranking experiments")
    sub = parser.add_subparsers(dest="verb", required=True)
    for verb in EXPERIMENT_VERBS:
        p = sub.add_parser(verb)
        p.add_argument("--config", help="INI experiment file")
        p.add_argument("--lambda", dest="lambdas", help="comma-separated lambda grid, 'inf' allowed")
        p.add_argument("--reps", type=int, help="repetitions")
        p.add_argument("--seed", type=int)
        p.add_argument("--out", help="output directory")
        p.add_argument("--no-figures", action="store_true", help="skip SVG charts")
        if verb == "replay-train":
            p.add_argument("--dataset", help="JSON Lines replay dataset")
            p.add_argument("--fixture", type=int, help="generate a fixture with this many submissions instead")
    p = sub.add_parser("score-comments")
    p.add_argument("--fact-checks", required=True, help="url,domain,label CSV")
    p.add_argument("--comments", required=True, help="id,t_offset_sec,polarity,mood,domains CSV")
    p.add_argument("--out", required=True, help="output JSON Lines dataset")
    p.add_argument("--rule", choices=("positive", "literal"), default="positive")
    p = sub.add_parser("validate-data")
    p.add_argument("path", help="JSON Lines file of trajectories or replay submissions")
    return parser


def _experiment(args) -> int:
    mode = EXPERIMENT_VERBS[args.verb]
    try:
        lambdas = parse_lambda_list(args.lambdas) if args.lambdas else None
    except ValueError as exc:
        raise ConfigError(f"bad --lambda: {exc}") from None
    overrides = {"repetitions": args.reps, "seed": args.seed, "out": args.out, "lambdas": lambdas}
    if args.config:
        config = load_config(args.config, **overrides)
        if config.mode != mode:
            raise ConfigError(f"config mode {config.mode} does not match verb {args.verb}")
    else:
        try:
            config = default_config(mode, lambdas, **{k: v for k, v in overrides.items() if v is not None and k != "lambdas"})
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from None
    if mode == "replay_train" and (args.dataset or args.fixture):
        replay = config.replay
        if args.dataset:
            replay = replace(replay, dataset=args.dataset)
        if args.fixture:
            replay = replace(replay, dataset="", fixture_submissions=args.fixture)
        config = replace(config, replay=replay)
    report = run(config)
    paths = write_report(report, config.out, figures=not args.no_figures)
    print(f"wrote {len(paths)} files to {config.out}")
    return EXIT_OK


def _score_comments(args) -> int:
    scores = domain_scores(read_fact_checks(args.fact_checks))
    dataset = score_comments(read_comments(args.comments), scores, rule=args.rule)
    write_dataset(args.out, dataset)
    print(f"wrote {len(dataset)} submissions to {args.out}")
    return EXIT_OK


def _validate(args) -> int:
    problems = 0
    n = 0
    try:
        text = Path(args.path).read_text(encoding="utf-8")
    except OSError as exc:
        raise DataError(str(exc)) from None
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        n += 1
        try:
            record = json.loads(line)
            if isinstance(record, dict) and "comments" in record:
                submission_from_record(record)
            else:
                Trajectory.from_record(record)
        except json.JSONDecodeError as exc:
            problems += 1
            print(f"{args.path}:{lineno}: malformed JSON: {exc.msg}", file=sys.stderr)
        except TrajectoryError as exc:
            problems += 1
            for v in exc.violations:
                print(f"{args.path}:{lineno}: {v}", file=sys.stderr)
        except (DataError, ValueError, KeyError, TypeError) as exc:
            problems += 1
            print(f"{args.path}:{lineno}: {exc}", file=sys.stderr)
    print(f"{n} records, {problems} invalid")
    return EXIT_DATA if problems else EXIT_OK


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.verb in EXPERIMENT_VERBS:
            return _experiment(args)
        if args.verb == "score-comments":
            return _score_comments(args)
        return _validate(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, TrajectoryError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (TrainingError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
