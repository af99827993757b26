"""Command line entry point: ``elastic-alloc {generate,simulate,sweep,validate}``.

Failures print one JSON object to stderr, ``{"error": ..., "message": ...}``,
and exit nonzero (2 bad input, 3 simulation or solver failure, 4 I/O).
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
from typing import Optional

import yaml

from .domain import ClusterConfig
from .errors import ConfigurationError, ElasticAllocError, TraceError
from .experiments import SCENARIOS, ExperimentSpec, run_experiment, write_outputs
from .simulator import ALLOCATORS, SimulationConfig, run
from .solver import SolverBudget
from .workload import PROFILES, annotate_failures, generate, load_trace, profile_by_name, write_trace

EXIT_INPUT = 2
EXIT_RUNTIME = 3
EXIT_IO = 4


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigurationError(message)


def _int_list(text: str) -> list:
    try:
        return [int(x) for x in text.replace(" ", "").split(",") if x]
    except ValueError:
        raise ConfigurationError(f"expected comma separated integers, got {text!r}") from None


def _add_cluster_flags(p):
    p.add_argument("--epoch-period", type=int, default=300, help="seconds between re-plans")
    p.add_argument("--horizon-steps", type=int, default=5)
    p.add_argument("--scaling-delay", type=int, default=0, help="seconds before starts and scale-ups act")
    p.add_argument("--disturbance", type=float, default=0.0, help="relative ETA noise half-width")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="elastic-alloc", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="write a synthetic trace")
    g.add_argument("--profile", choices=sorted(PROFILES), default="baseline")
    g.add_argument("--count", type=int, help="override the profile's job count")
    g.add_argument("--bug-fraction", type=float, default=0.0)
    g.add_argument("--terminate-fraction", type=float, default=0.0)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True, help="trace CSV path")

    s = sub.add_parser("simulate", help="run one simulation")
    src = s.add_mutually_exclusive_group()
    src.add_argument("--trace", help="trace CSV path")
    src.add_argument("--profile", choices=sorted(PROFILES), default="baseline")
    s.add_argument("--nodes", type=int, required=True)
    s.add_argument("--allocator", choices=ALLOCATORS, default="optimal")
    _add_cluster_flags(s)
    s.add_argument("--bug-fraction", type=float, default=0.0)
    s.add_argument("--terminate-fraction", type=float, default=0.0)
    s.add_argument("--gap-target", type=float, default=0.01)
    s.add_argument("--node-limit", type=int, default=20000)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out-dir", help="write report.json and jobs.csv here")

    w = sub.add_parser("sweep", help="allocator comparison over node counts")
    w.add_argument("--config", help="YAML file of experiment fields")
    w.add_argument("--scenario", choices=SCENARIOS)
    w.add_argument("--nodes", type=_int_list, help="comma separated node counts")
    w.add_argument("--allocators", help="comma separated subset of greedy,optimal")
    w.add_argument("--replications", type=int)
    w.add_argument("--trace", help="trace CSV path instead of a synthetic profile")
    w.add_argument("--epoch-period", type=int)
    w.add_argument("--horizon-steps", type=int)
    w.add_argument("--scaling-delay", type=int)
    w.add_argument("--disturbance", type=float)
    w.add_argument("--seed", type=int)
    w.add_argument("--workers", type=int, default=1)
    w.add_argument("--out-dir", required=True)

    v = sub.add_parser("validate", help="check a trace and run the invariant suite on it")
    v.add_argument("--trace", required=True)
    v.add_argument("--nodes", type=int, default=70)
    _add_cluster_flags(v)
    v.add_argument("--seed", type=int, default=0)
    return parser


def load_config(path: str) -> dict:
    with open(path, encoding="utf-8") as fh:
        data = yaml.safe_load(fh) or {}
    if not isinstance(data, dict):
        raise ConfigurationError(f"{path}: expected a flat key-value document")
    known = {f.name for f in dataclasses.fields(ExperimentSpec)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ConfigurationError(f"{path}: unknown keys {unknown}")
    for key, value in data.items():
        if isinstance(value, (dict,)):
            raise ConfigurationError(f"{path}: {key} must be a scalar or list")
    return data


def _emit(obj) -> None:
    print(json.dumps(obj, sort_keys=True, indent=1))


def cmd_generate(args) -> int:
    profile = profile_by_name(args.profile)
    if args.count is not None:
        profile = dataclasses.replace(profile, count=args.count)
    jobs = generate(profile, args.seed)
    if args.bug_fraction or args.terminate_fraction:
        jobs = annotate_failures(jobs, args.bug_fraction, args.terminate_fraction, args.seed)
    write_trace(jobs, args.out)
    _emit({"trace": args.out, "jobs": len(jobs), "profile": profile.name, "seed": args.seed})
    return 0


def _cluster(args) -> ClusterConfig:
    return ClusterConfig(
        total_nodes=args.nodes,
        epoch_period=args.epoch_period,
        horizon_steps=args.horizon_steps,
        scaling_delay=args.scaling_delay,
        eta_disturbance=args.disturbance,
        rng_seed=args.seed,
    )


def cmd_simulate(args) -> int:
    trace = load_trace(args.trace) if args.trace else generate(profile_by_name(args.profile), args.seed)
    config = SimulationConfig(
        cluster=_cluster(args),
        allocator=args.allocator,
        budget=SolverBudget(time_limit=float("inf"), gap_target=args.gap_target,
                            node_limit=args.node_limit),
        bug_fraction=args.bug_fraction,
        terminate_fraction=args.terminate_fraction,
    )
    report = run(trace, config)
    if args.out_dir:
        os.makedirs(args.out_dir, exist_ok=True)
        with open(os.path.join(args.out_dir, "report.json"), "w", encoding="utf-8") as fh:
            fh.write(report.to_json())
        with open(os.path.join(args.out_dir, "jobs.csv"), "w", encoding="utf-8", newline="") as fh:
            fh.write(report.to_csv())
    _emit({"summary": report.summary(), "config": report.config})
    return 0


def spec_from_args(args) -> ExperimentSpec:
    fields = load_config(args.config) if args.config else {}
    overrides = {
        "scenario": args.scenario,
        "node_counts": args.nodes,
        "allocators": args.allocators.split(",") if args.allocators else None,
        "replications": args.replications,
        "trace_path": args.trace,
        "epoch_period": args.epoch_period,
        "horizon_steps": args.horizon_steps,
        "scaling_delay": args.scaling_delay,
        "eta_disturbance": args.disturbance,
        "seed": args.seed,
    }
    fields.update({k: v for k, v in overrides.items() if v is not None})
    try:
        return ExperimentSpec(**fields)
    except TypeError as exc:
        raise ConfigurationError(str(exc)) from None


def cmd_sweep(args, argv) -> int:
    spec = spec_from_args(args)
    report = run_experiment(spec, workers=args.workers)
    written = write_outputs(report, args.out_dir, argv=argv)
    _emit({
        "files": written,
        "queueing_minutes": {str(n): v for n, v in report.queueing.items()},
        "additional_trained_jobs": {str(n): v for n, v in report.additional_trained_jobs.items()},
        "solver_latency": report.latency,
    })
    return 0


def cmd_validate(args) -> int:
    trace = load_trace(args.trace)
    cluster = _cluster(args)
    checks = {"jobs": len(trace), "rows_valid": True}
    for job in trace:
        job.check_legal(cluster.legal_set)
    for allocator in ALLOCATORS:
        cfg = SimulationConfig(cluster=cluster, allocator=allocator, check_invariants=True)
        first = run(trace, cfg).to_json(include_timing=False)
        second = run(trace, cfg).to_json(include_timing=False)
        checks[f"{allocator}_conservation"] = True
        checks[f"{allocator}_deterministic"] = first == second
    ok = all(v for k, v in checks.items() if k != "jobs")
    _emit({"ok": ok, "checks": checks})
    return 0 if ok else EXIT_RUNTIME


def _fail(exc: BaseException, code: int) -> int:
    payload = {"error": type(exc).__name__, "message": str(exc)}
    if isinstance(exc, TraceError) and exc.row is not None:
        payload["row"] = exc.row
    print(json.dumps(payload, sort_keys=True), file=sys.stderr)
    return code


def main(argv: Optional[list] = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args = build_parser().parse_args(argv)
        if args.command == "generate":
            return cmd_generate(args)
        if args.command == "simulate":
            return cmd_simulate(args)
        if args.command == "sweep":
            return cmd_sweep(args, argv)
        return cmd_validate(args)
    except (ConfigurationError, TraceError, yaml.YAMLError) as exc:
        return _fail(exc, EXIT_INPUT)
    except ElasticAllocError as exc:
        return _fail(exc, EXIT_RUNTIME)
    except OSError as exc:
        return _fail(exc, EXIT_IO)


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
