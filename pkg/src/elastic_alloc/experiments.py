"""Node-count sweeps comparing the two allocators on paired traces.

Every (replication, node count, allocator) cell runs the simulator on the
same trace and failure schedule as its partner cell; cells may run in
parallel but are folded in a fixed order, so output never depends on the
worker count.  Replication ``r`` derives all its randomness from
``seed + r``.
"""

from __future__ import annotations

import bisect
import csv
import io
import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import List, Optional, Sequence

import numpy as np

from .domain import ClusterConfig
from .errors import ConfigurationError, MilestoneError
from .simulator import ALLOCATORS, GREEDY, OPTIMAL, SimulationConfig, run
from .solver import SolverBudget
from .speed import DEFAULT_LEGAL_SET
from .workload import BASELINE, HETEROGENEOUS, generate, load_trace, profile_by_name

SCENARIOS = ("baseline", "heterogeneous", "disturbance", "harsh", "scaling_delay")
DEFAULT_NODE_COUNTS = tuple(range(70, 191, 20))
OUTPUT_VERSION = "v1"
LATENCY_BUCKETS = (0.0, 0.01, 0.05, 0.1, 0.25, 0.5, 1.0, 2.0, 5.0, math.inf)

# scenario -> (eta half-width, disturbed share, bug share, kill share, scaling delay)
SCENARIO_DEFAULTS = {
    "baseline": (0.0, 1.0, 0.0, 0.0, 0),
    "heterogeneous": (0.0, 1.0, 0.0, 0.0, 0),
    "disturbance": (0.10, 1.0, 0.0, 0.0, 0),
    "harsh": (0.10, 0.75, 0.15, 0.10, 0),
    "scaling_delay": (0.0, 1.0, 0.0, 0.0, 15),
}


@dataclass(frozen=True)
class ExperimentSpec:
    scenario: str = "baseline"
    node_counts: tuple = DEFAULT_NODE_COUNTS
    allocators: tuple = ALLOCATORS
    replications: int = 1
    seed: int = 0
    profile: Optional[str] = None  # defaults from the scenario
    trace_path: Optional[str] = None  # overrides the profile
    epoch_period: int = 300
    horizon_steps: int = 5
    legal_set: tuple = DEFAULT_LEGAL_SET
    scaling_delay: Optional[int] = None  # None: scenario default
    eta_disturbance: Optional[float] = None
    milestone: int = 100
    gap_target: float = 0.01
    node_limit: int = 20000
    greedy_metric: str = "elapsed"

    def __post_init__(self):
        object.__setattr__(self, "node_counts", tuple(int(n) for n in self.node_counts))
        object.__setattr__(self, "allocators", tuple(self.allocators))
        object.__setattr__(self, "legal_set", tuple(int(k) for k in self.legal_set))
        if self.scenario not in SCENARIOS:
            raise ConfigurationError(f"scenario must be one of {SCENARIOS}")
        if not self.node_counts:
            raise ConfigurationError("node_counts must be nonempty")
        if any(b <= a for a, b in zip(self.node_counts, self.node_counts[1:])):
            raise ConfigurationError("node_counts must be strictly ascending")
        if not self.allocators or any(a not in ALLOCATORS for a in self.allocators):
            raise ConfigurationError(f"allocators must be a nonempty subset of {ALLOCATORS}")
        if len(set(self.allocators)) != len(self.allocators):
            raise ConfigurationError("allocators listed twice")
        if self.replications < 1:
            raise ConfigurationError("replications must be >= 1")
        if self.milestone < 1:
            raise ConfigurationError("milestone must be >= 1")

    def resolved(self) -> dict:
        eta, share, bug, kill, delay = SCENARIO_DEFAULTS[self.scenario]
        if self.eta_disturbance is not None:
            eta = self.eta_disturbance
        if self.scaling_delay is not None:
            delay = self.scaling_delay
        profile = self.profile or ("heterogeneous" if self.scenario == "heterogeneous" else "baseline")
        return {"eta_disturbance": eta, "disturbed_fraction": share, "bug_fraction": bug,
                "terminate_fraction": kill, "scaling_delay": delay, "profile": profile}

    def trace_for(self, replication: int):
        if self.trace_path:
            return load_trace(self.trace_path)
        return generate(profile_by_name(self.resolved()["profile"]), self.seed + replication)

    def sim_config(self, nodes: int, allocator: str, replication: int) -> SimulationConfig:
        r = self.resolved()
        cluster = ClusterConfig(
            total_nodes=nodes,
            epoch_period=self.epoch_period,
            horizon_steps=self.horizon_steps,
            legal_set=self.legal_set,
            scaling_delay=r["scaling_delay"],
            eta_disturbance=r["eta_disturbance"],
            rng_seed=self.seed + replication,
        )
        return SimulationConfig(
            cluster=cluster,
            allocator=allocator,
            budget=SolverBudget(time_limit=math.inf, gap_target=self.gap_target,
                                node_limit=self.node_limit),
            bug_fraction=r["bug_fraction"],
            terminate_fraction=r["terminate_fraction"],
            disturbed_fraction=r["disturbed_fraction"],
            greedy_metric=self.greedy_metric,
        )

    def to_dict(self) -> dict:
        d = asdict(self)
        for key in ("node_counts", "allocators", "legal_set"):
            d[key] = list(d[key])
        return d


@dataclass(frozen=True)
class MilestoneResult:
    milestones: tuple  # (completed count, greedy wall time, additional jobs)
    mean: float


def additional_trained_jobs(greedy_timeline: Sequence, optimal_timeline: Sequence,
                            milestone: int = 100) -> MilestoneResult:
    """Extra completions of the optimal run at each greedy milestone.

    For every ``m * milestone`` completions reached by the greedy run, at the
    second ``T_m`` it gets there, compares how many jobs each run has
    completed by ``T_m``.  Timelines are completion times or ``(time, job_id)``
    pairs.
    """
    def times(timeline):
        return sorted(float(e[0]) if isinstance(e, (tuple, list)) else float(e) for e in timeline)

    g, o = times(greedy_timeline), times(optimal_timeline)
    if milestone < 1:
        raise ConfigurationError("milestone must be >= 1")
    count = len(g) // milestone
    if count == 0:
        raise MilestoneError(f"greedy completed {len(g)} jobs, fewer than one milestone of {milestone}")
    rows = []
    for m in range(1, count + 1):
        t_m = g[m * milestone - 1]
        extra = bisect.bisect_right(o, t_m) - bisect.bisect_right(g, t_m)
        rows.append((m * milestone, t_m, extra))
    return MilestoneResult(tuple(rows), float(np.mean([r[2] for r in rows])))


@dataclass(frozen=True)
class CellResult:
    replication: int
    nodes: int
    allocator: str
    mean_queue_minutes: Optional[float]
    mean_total_minutes: Optional[float]
    completed: int
    failed: int
    unfinished: int
    timeline: tuple = field(repr=False)
    latency: tuple = field(default=(), repr=False, compare=False)
    mean_gap: Optional[float] = None


def run_cell(spec: ExperimentSpec, replication: int, nodes: int, allocator: str) -> CellResult:
    report = run(spec.trace_for(replication), spec.sim_config(nodes, allocator, replication))
    s = report.summary()
    out = s["outcomes"]
    return CellResult(
        replication=replication,
        nodes=nodes,
        allocator=allocator,
        mean_queue_minutes=s["mean_queue_minutes"],
        mean_total_minutes=s["mean_total_minutes"],
        completed=out["completed"],
        failed=out["bug"] + out["killed"],
        unfinished=out["unfinished"],
        timeline=tuple(t for t, _ in report.timeline),
        latency=tuple(report.solver_latency),
        mean_gap=float(np.mean(report.solver_gaps)) if report.solver_gaps else None,
    )


def _cell_job(args):
    return run_cell(*args)


def latency_stats(samples) -> dict:
    if not len(samples):
        return {"count": 0, "mean": None, "median": None, "p95": None, "max": None}
    a = np.asarray(samples, dtype=float)
    return {"count": int(a.size), "mean": float(a.mean()), "median": float(np.median(a)),
            "p95": float(np.percentile(a, 95)), "max": float(a.max())}


def _avg(values):
    values = [v for v in values if v is not None]
    return float(np.mean(values)) if values else None


@dataclass
class ComparisonReport:
    spec: ExperimentSpec
    cells: List[CellResult]
    queueing: dict  # nodes -> allocator -> mean queueing minutes
    total: dict  # nodes -> allocator -> mean total minutes
    completed: dict  # nodes -> allocator -> mean completed jobs
    additional_trained_jobs: dict  # nodes -> mean additional jobs (both allocators only)
    milestones: dict  # nodes -> per-replication milestone tuples
    latency: dict = field(default_factory=dict, compare=False)

    def advantage(self, node_counts=None) -> Optional[float]:
        """Mean additional trained jobs over the given (default all) node counts."""
        if not self.additional_trained_jobs:
            return None
        keys = node_counts or sorted(self.additional_trained_jobs)
        return float(np.mean([self.additional_trained_jobs[n] for n in keys]))

    def to_dict(self, include_timing: bool = True) -> dict:
        out = {
            "schema": f"comparison-report-{OUTPUT_VERSION}",
            "spec": self.spec.to_dict(),
            "resolved": self.spec.resolved(),
            "queueing_minutes": {str(n): v for n, v in self.queueing.items()},
            "total_minutes": {str(n): v for n, v in self.total.items()},
            "completed_jobs": {str(n): v for n, v in self.completed.items()},
            "additional_trained_jobs": {str(n): v for n, v in self.additional_trained_jobs.items()},
            "milestones": {str(n): [list(map(list, rows)) for rows in v]
                           for n, v in self.milestones.items()},
            "cells": [
                {"replication": c.replication, "nodes": c.nodes, "allocator": c.allocator,
                 "mean_queue_minutes": c.mean_queue_minutes,
                 "mean_total_minutes": c.mean_total_minutes, "completed": c.completed,
                 "failed": c.failed, "unfinished": c.unfinished, "mean_gap": c.mean_gap}
                for c in self.cells
            ],
        }
        if include_timing:
            out["solver_latency"] = self.latency
        return out

    def to_json(self, include_timing: bool = True) -> str:
        return json.dumps(self.to_dict(include_timing), sort_keys=True, indent=1)


def run_experiment(spec: ExperimentSpec, workers: int = 1) -> ComparisonReport:
    jobs = [(spec, r, n, a) for r in range(spec.replications) for n in spec.node_counts
            for a in spec.allocators]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            cells = list(pool.map(_cell_job, jobs))
    else:
        cells = [run_cell(*j) for j in jobs]
    return aggregate(spec, cells)


def aggregate(spec: ExperimentSpec, cells: List[CellResult]) -> ComparisonReport:
    by_key = {(c.replication, c.nodes, c.allocator): c for c in cells}
    queueing, total, completed, extra, miles = {}, {}, {}, {}, {}
    for n in spec.node_counts:
        queueing[n], total[n], completed[n] = {}, {}, {}
        for a in spec.allocators:
            group = [by_key[(r, n, a)] for r in range(spec.replications)]
            queueing[n][a] = _avg(c.mean_queue_minutes for c in group)
            total[n][a] = _avg(c.mean_total_minutes for c in group)
            completed[n][a] = _avg(c.completed for c in group)
        if GREEDY in spec.allocators and OPTIMAL in spec.allocators:
            results = [
                additional_trained_jobs(by_key[(r, n, GREEDY)].timeline,
                                        by_key[(r, n, OPTIMAL)].timeline, spec.milestone)
                for r in range(spec.replications)
            ]
            extra[n] = float(np.mean([res.mean for res in results]))
            miles[n] = tuple(res.milestones for res in results)
    samples = [x for c in cells if c.allocator == OPTIMAL for x in c.latency]
    return ComparisonReport(spec, list(cells), queueing, total, completed, extra, miles,
                            latency_stats(samples))


def _csv(header: str, columns, rows) -> str:
    buf = io.StringIO()
    buf.write(f"# {header}-{OUTPUT_VERSION}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for row in rows:
        w.writerow(["" if v is None else v for v in row])
    return buf.getvalue()


def figure_tables(report: ComparisonReport) -> dict:
    """CSV text per output file name."""
    spec = report.spec
    tables = {
        "queueing_vs_nodes.csv": _csv(
            "queueing", ("nodes", "allocator", "mean_queue_minutes"),
            [(n, a, report.queueing[n][a]) for n in spec.node_counts for a in spec.allocators]),
        "total_time_vs_nodes.csv": _csv(
            "total-time", ("nodes", "allocator", "mean_total_minutes", "mean_completed_jobs"),
            [(n, a, report.total[n][a], report.completed[n][a])
             for n in spec.node_counts for a in spec.allocators]),
    }
    if report.additional_trained_jobs:
        tables["additional_jobs_vs_nodes.csv"] = _csv(
            "additional-jobs", ("nodes", "mean_additional_jobs", "milestones"),
            [(n, report.additional_trained_jobs[n],
              ";".join(f"{m}:{x}" for rows in report.milestones[n] for m, _, x in rows))
             for n in spec.node_counts])
    samples = [x for c in report.cells if c.allocator == OPTIMAL for x in c.latency]
    if samples:
        counts, _ = np.histogram(samples, bins=np.array(LATENCY_BUCKETS))
        tables["latency_histogram.csv"] = _csv(
            "latency", ("lower_s", "upper_s", "count"),
            [(lo, "inf" if math.isinf(hi) else hi, int(c))
             for lo, hi, c in zip(LATENCY_BUCKETS, LATENCY_BUCKETS[1:], counts)])
    return tables


def write_outputs(report: ComparisonReport, outdir: str, argv: Optional[list] = None) -> list:
    """Write the figure CSVs and a JSON manifest; returns the written paths."""
    os.makedirs(outdir, exist_ok=True)
    written = []
    for name, text in figure_tables(report).items():
        path = os.path.join(outdir, name)
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        written.append(path)
    manifest = {
        "schema": f"run-manifest-{OUTPUT_VERSION}",
        "argv": argv,
        "seeds": [report.spec.seed + r for r in range(report.spec.replications)],
        "files": sorted(os.path.basename(p) for p in written),
        "report": report.to_dict(include_timing=True),
    }
    path = os.path.join(outdir, "manifest.json")
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, sort_keys=True, indent=1)
    written.append(path)
    return written
