"""Command line entry point: ``pbope simulate | fit-bias | assign | evaluate | experiment``.

Exit codes: 0 success, 1 usage error, 2 data error.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import List, Optional

from . import __version__
from .click_model import config_from_dict, simulate_log, simulate_versioned_log, write_sidecar
from .counterfactual import PositionAssignment, UnscorableItemError, join_positions, rescore_log
from .domain import RewardSpec, ValidationError
from .em import EmConfig, fit_position_bias
from .estimator import DENOMINATORS, DataIntegrityError, EstimatorConfig, pb_ips
from .harness import emit_report, run_experiment, spec_from_dict
from .ingest import (
    LogFormatError,
    LogHeader,
    parse_sessions,
    read_assignment,
    read_scores,
    read_theta,
    write_assignment,
    write_scores,
    write_sessions,
)
from .kernels import RNG_NAME
from .policies import build_policy, score_table, table_policy

EXIT_OK, EXIT_USAGE, EXIT_DATA = 0, 1, 2

log = logging.getLogger("pbope")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _policy_arg(raw: str):
    raw = raw.strip()
    return json.loads(raw) if raw.startswith("{") else raw


def cmd_simulate(args) -> int:
    cfg_dict = json.loads(Path(args.config).read_text())
    if args.seed is not None:
        cfg_dict["seed"] = args.seed
    if args.sessions_per_day is not None:
        cfg_dict["sessions_per_day"] = args.sessions_per_day
    if args.days is not None:
        cfg_dict["days"] = args.days
    config = config_from_dict(cfg_dict)

    if args.versions > 1:
        sessions = simulate_versioned_log(config, args.versions)
    else:
        sessions = simulate_log(build_policy(_policy_arg(args.policy), config.relevance), config)

    header = LogHeader(surface=config.surface, generator={"seed": config.seed, "rng": RNG_NAME})
    write_sessions(args.out, sessions, header)
    sidecar = args.sidecar or str(Path(args.out).with_suffix(".truth.json"))
    write_sidecar(config, sidecar)
    if args.target_policy:
        target = build_policy(_policy_arg(args.target_policy), config.relevance)
        table = score_table(target, {c: config.candidates(c) for c in config.contexts})
        write_scores(args.scores_out or str(Path(args.out).with_suffix(".scores.jsonl")), table)
    log.info("wrote %d sessions to %s", len(sessions), args.out)
    return EXIT_OK


def cmd_fit_bias(args) -> int:
    sessions, _ = parse_sessions(args.sessions)
    cfg = EmConfig(
        max_iterations=args.max_iterations,
        tolerance=args.tolerance,
        theta_floor=args.theta_floor,
        min_pair_impressions=args.min_pair_impressions,
    )
    fit = fit_position_bias(sessions, cfg, max_position=args.max_position)
    Path(args.out).write_text(json.dumps(fit.to_dict(), indent=1) + "\n")
    return EXIT_OK


def cmd_assign(args) -> int:
    sessions, _ = parse_sessions(args.sessions)
    if args.mode == "rescore":
        if not args.scores:
            raise UsageError("--mode rescore needs --scores")
        assignment = rescore_log(sessions, table_policy(read_scores(args.scores), name=Path(args.scores).name))
    else:
        if not args.treatment:
            raise UsageError("--mode join needs --treatment")
        treatment, _ = parse_sessions(args.treatment)
        assignment = join_positions(sessions, treatment)
    write_assignment(args.out, assignment)
    log.info("assigned %d impressions, coverage %.4f", len(assignment), assignment.coverage)
    return EXIT_OK


def cmd_evaluate(args) -> int:
    sessions, _ = parse_sessions(args.sessions)
    assignment = read_assignment(args.assignment)
    total = sum(len(s.impressions) for s in sessions)
    known = {s.session_id for s in sessions}
    hits = sum(1 for sid, _ in assignment.positions if sid in known)
    assignment = PositionAssignment(assignment.positions, min(1.0, hits / total) if total else 0.0)
    cfg = EstimatorConfig(RewardSpec.parse(args.reward), args.clip, denominator=args.denominator)
    res = pb_ips(sessions, assignment, read_theta(args.theta), cfg)
    text = json.dumps(res.to_dict(), indent=1) + "\n"
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_experiment(args) -> int:
    d = json.loads(Path(args.spec).read_text()) if args.spec else {}
    spec = spec_from_dict(d, mode=args.mode, theta=args.theta)
    reports, summary = run_experiment(spec, workdir=args.workdir)
    emit_report(reports, summary, args.out)
    corr = summary["pearson_correlation"]
    print(
        f"{spec.mode}: {len(reports)} days, pearson={'n/a' if corr is None else f'{corr:.4f}'}, "
        f"mean offset={summary['mean_offset']:.5f}, offset std={summary['offset_std']:.5f}"
    )
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="pbope", description="Offline evaluation of deterministic rankers with position-bias IPS.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("simulate", help="simulate a session log from the examination model")
    s.add_argument("--config", required=True, help="simulator config JSON")
    s.add_argument("--out", required=True, help="output JSONL log")
    s.add_argument("--policy", default="relevance", help="logging policy: kind name or JSON spec")
    s.add_argument("--versions", type=int, default=1,
                   help="split the days across this many noisy ranker versions (identifies theta for fit-bias)")
    s.add_argument("--seed", type=int)
    s.add_argument("--days", type=int)
    s.add_argument("--sessions-per-day", type=int)
    s.add_argument("--sidecar", help="ground-truth JSON (default: <out>.truth.json)")
    s.add_argument("--target-policy", help="also write a score file for this policy")
    s.add_argument("--scores-out", help="score file path (default: <out>.scores.jsonl)")
    s.set_defaults(func=cmd_simulate)

    f = sub.add_parser("fit-bias", help="fit the position-bias curve by EM")
    f.add_argument("--sessions", required=True)
    f.add_argument("--out", required=True)
    f.add_argument("--max-iterations", type=int, default=EmConfig.max_iterations)
    f.add_argument("--tolerance", type=float, default=EmConfig.tolerance)
    f.add_argument("--theta-floor", type=float, default=EmConfig.theta_floor)
    f.add_argument("--min-pair-impressions", type=int, default=EmConfig.min_pair_impressions)
    f.add_argument("--max-position", type=int, help="curve length (default: longest list in the log)")
    f.set_defaults(func=cmd_fit_bias)

    a = sub.add_parser("assign", help="counterfactual positions under the target policy")
    a.add_argument("--mode", choices=("rescore", "join"), required=True)
    a.add_argument("--sessions", required=True, help="control log")
    a.add_argument("--scores", help="target policy score JSONL (rescore mode)")
    a.add_argument("--treatment", help="treatment log (join mode)")
    a.add_argument("--out", required=True)
    a.set_defaults(func=cmd_assign)

    e = sub.add_parser("evaluate", help="position-bias IPS estimate")
    e.add_argument("--sessions", required=True)
    e.add_argument("--assignment", required=True)
    e.add_argument("--theta", required=True, help="fit-bias output or simulator sidecar")
    e.add_argument("--reward", choices=[r.value for r in RewardSpec], default="clicks")
    e.add_argument("--clip", type=float, help="cap propensity ratios at this value (> 1)")
    e.add_argument("--denominator", choices=DENOMINATORS, default="sessions")
    e.add_argument("--out", help="output JSON (default: stdout)")
    e.set_defaults(func=cmd_evaluate)

    x = sub.add_parser("experiment", help="day-by-day offline estimate vs online CTR")
    x.add_argument("--spec", help="experiment spec JSON (default: built-in desk-scale spec)")
    x.add_argument("--out", required=True, help="report CSV; summary goes to <out>.summary.json")
    x.add_argument("--mode", choices=("moo", "text-search"))
    x.add_argument("--theta", choices=("em", "oracle"))
    x.add_argument("--workdir", help="write every simulated log to this directory")
    x.set_defaults(func=cmd_experiment)
    return p


def cli_main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except UsageError as e:
        parser.print_usage(sys.stderr)
        print(f"pbope: error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (LogFormatError, ValidationError, DataIntegrityError, UnscorableItemError, ValueError, KeyError,
            OSError, json.JSONDecodeError) as e:
        print(f"pbope: data error: {e}", file=sys.stderr)
        return EXIT_DATA


def main():
    sys.exit(cli_main())


if __name__ == "__main__":
    main()
