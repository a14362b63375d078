"""Command-line entry point: ``vlab <command> ...``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .dsl import ParseError, parse_program
from .episodes import EpisodeError, write_episode, write_manifest
from .harness import (
    UnknownInstanceId,
    emit_report,
    execute_symbolic,
    load_predictions,
    read_report,
    run_symbolic,
    score_noninteractive,
)
from .metrics import InvalidCounts, InvalidWeights, MetricWeights, progress_score
from .scenario import (
    RandomizationSpec,
    ScenarioError,
    fixture_path,
    load_instance,
    load_scenario,
    randomize,
    save_instance,
)

EXIT_SCHEMA = 2


def _scenario_path(arg: str) -> Path:
    p = Path(arg)
    if p.exists():
        return p
    fx = fixture_path(arg)
    return fx if fx.is_file() else p


def _print(obj) -> None:
    print(json.dumps(obj, indent=1, sort_keys=True))


def cmd_instantiate(args) -> int:
    template = load_scenario(_scenario_path(args.scenario))
    spec = RandomizationSpec.fixed() if args.fixed else None
    inst = randomize(template, spec, args.seed)
    path = save_instance(inst, Path(args.out) / inst.instance_id)
    _print({"instance": str(path), "instance_id": inst.instance_id})
    return 0


def cmd_collect(args) -> int:
    from .collect import collect_episode

    template = load_scenario(_scenario_path(args.scenario))
    inst = randomize(template, None, args.seed)
    out = Path(args.out)
    inst_path = save_instance(inst, out / "instances" / inst.instance_id)
    result = collect_episode(inst, seed=args.seed)
    ep_path = write_episode(result.record, out / "episodes")
    manifest_path, violations = write_manifest(out / "episodes")
    _print(
        {
            "instance": str(inst_path),
            "episode": str(ep_path),
            "manifest": str(manifest_path),
            "steps": len(result.record.steps),
            "skills_executed": result.executed,
            "success": result.record.metadata["success"],
            "failure": None if result.failure is None else str(result.failure),
            "violations": violations,
        }
    )
    return 0


def _load_instances(directory: Path):
    files = sorted(directory.rglob("instance.json"))
    return [load_instance(f) for f in files]


def cmd_score(args) -> int:
    instances = _load_instances(Path(args.instances))
    preds = load_predictions(args.predictions)
    weights = MetricWeights.parse(args.weights) if args.weights else MetricWeights()
    report = score_noninteractive(instances, preds, weights)
    paths = emit_report(report, args.out, [f.strip() for f in args.format.split(",") if f.strip()])
    _print({"written": [str(p) for p in paths], "overall": report.overall})
    return 0


def cmd_simulate(args) -> int:
    inst = load_instance(args.instance)
    seq = parse_program(Path(args.sequence).read_text(encoding="utf-8"))
    trace = run_symbolic(inst, seq, args.alpha)
    p = trace.progress
    _print(
        {
            "instance_id": inst.instance_id,
            "N": p.N,
            "n_correct": p.n_correct,
            "M": p.M,
            "m_done": p.m_done,
            "alpha": p.alpha,
            "progress_score": progress_score(p),
            "stopped_at": trace.stopped_at,
            "reason": trace.reason,
        }
    )
    return 0


def cmd_report(args) -> int:
    report = read_report(args.input)
    paths = emit_report(report, args.out, [f.strip() for f in args.format.split(",") if f.strip()])
    _print({"written": [str(p) for p in paths]})
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="vlab", description="Skill-DSL benchmark toolkit")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("instantiate", help="sample a task instance from a scenario template")
    p.add_argument("--scenario", required=True, help="template path or shipped fixture name")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--fixed", action="store_true", help="disable randomization")
    p.set_defaults(func=cmd_instantiate)

    p = sub.add_parser("collect", help="instantiate a scenario and record a planned demonstration")
    p.add_argument("--scenario", required=True, help="template path or shipped fixture name")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_collect)

    p = sub.add_parser("score", help="score raw model outputs against instance references")
    p.add_argument("--instances", required=True, help="directory searched for instance.json files")
    p.add_argument("--predictions", required=True, help="JSON file of model outputs")
    p.add_argument("--weights", default=None, help="w1,w2,w3,w4 (default 0.25 each)")
    p.add_argument("--out", required=True)
    p.add_argument("--format", default="json,csv")
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("simulate", help="symbolic replay of a skill program for Progress Score")
    p.add_argument("--instance", required=True)
    p.add_argument("--sequence", required=True, help=".skill program")
    p.add_argument("--alpha", type=float, default=0.2)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("report", help="re-emit a saved report in other formats")
    p.add_argument("--input", required=True, help="report.json")
    p.add_argument("--format", default="json,csv")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_report)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (
        ScenarioError,
        ParseError,
        EpisodeError,
        InvalidWeights,
        InvalidCounts,
        UnknownInstanceId,
        json.JSONDecodeError,
        ValueError,
    ) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_SCHEMA
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_SCHEMA


if __name__ == "__main__":
    sys.exit(main())
