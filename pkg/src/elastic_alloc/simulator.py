"""Second-stepped cluster simulation.

Within one simulated second ``s`` events run in this order:

1. nodes of jobs that ended at ``s - 1`` return to the idle pool;
2. scaling holds that expire at ``s`` take effect;
3. jobs with ``ceil(submit_time) == s`` join the FIFO queue;
4. on an epoch boundary (``s % epoch_period == 0``) the allocator re-plans;
   on any other second the front of the queue is started on the largest
   legal count that fits the idle nodes, repeatedly;
5. every job on nodes gains one second of progress;
6. jobs whose progress reached their demand complete;
7. scheduled bug hangs and user kills fire.

Stretches of seconds in which none of steps 1-4, 6 or 7 can change anything
are advanced in one go; progress is still added second by second, so the
result is identical to stepping every second.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Union

import numpy as np

from . import kernels
from .domain import (
    ClusterConfig,
    EpochPlan,
    JobRuntimeState,
    JobSpec,
    Phase,
    fifo_key,
    format_number,
    legal_set_for,
    make_snapshot,
)
from .errors import ConfigurationError, InvariantViolation, PlanRejectedError
from .greedy import ELAPSED, METRICS, GreedyDecision, greedy_plan
from .solver import SolverBudget, plan_epoch
from .workload import annotate_failures, check_order

OPTIMAL = "optimal"
GREEDY = "greedy"
ALLOCATORS = (OPTIMAL, GREEDY)
REPORT_SCHEMA = "sim-report-v1"
JOBS_CSV_VERSION = "# sim-jobs-v1"
JOBS_CSV_COLUMNS = ("job_id", "submit_s", "start_s", "end_s", "queue_s", "train_s", "total_s",
                    "outcome")
DISTURBANCE_STREAM = 1
# Wall-clock free budget: results depend only on the inputs.
DEFAULT_SIM_BUDGET = SolverBudget(time_limit=math.inf, gap_target=0.01, node_limit=20000)

COMPLETED = "completed"
BUG = "bug"
KILLED = "killed"
UNFINISHED = "unfinished"


@dataclass(frozen=True)
class SimulationConfig:
    cluster: ClusterConfig
    allocator: str = OPTIMAL
    budget: SolverBudget = DEFAULT_SIM_BUDGET
    bug_fraction: float = 0.0
    terminate_fraction: float = 0.0
    disturbed_fraction: float = 1.0  # share of jobs whose ETA gets the cluster's disturbance
    horizon_end: Optional[int] = None  # seconds; None runs until every job is terminal
    greedy_metric: str = ELAPSED
    check_invariants: bool = True

    def __post_init__(self):
        if self.allocator not in ALLOCATORS:
            raise ConfigurationError(f"allocator must be one of {ALLOCATORS}")
        if self.greedy_metric not in METRICS:
            raise ConfigurationError(f"greedy_metric must be one of {METRICS}")
        for name in ("bug_fraction", "terminate_fraction", "disturbed_fraction"):
            v = getattr(self, name)
            if not 0 <= v <= 1:
                raise ConfigurationError(f"{name} must be in [0, 1]")
        if self.bug_fraction + self.terminate_fraction > 1 + 1e-12:
            raise ConfigurationError("bug_fraction + terminate_fraction must be <= 1")
        if self.horizon_end is not None and self.horizon_end < 0:
            raise ConfigurationError("horizon_end must be >= 0")

    def describe(self) -> dict:
        c = self.cluster
        return {
            "allocator": self.allocator,
            "total_nodes": c.total_nodes,
            "epoch_period": c.epoch_period,
            "horizon_steps": c.horizon_steps,
            "legal_set": list(c.legal_set),
            "scaling_delay": c.scaling_delay,
            "eta_disturbance": c.eta_disturbance,
            "rng_seed": c.rng_seed,
            "attenuation_base": c.attenuation_base,
            "bug_fraction": self.bug_fraction,
            "terminate_fraction": self.terminate_fraction,
            "disturbed_fraction": self.disturbed_fraction,
            "horizon_end": self.horizon_end,
            "greedy_metric": self.greedy_metric,
            "budget": {
                "time_limit": None if math.isinf(self.budget.time_limit) else self.budget.time_limit,
                "gap_target": self.budget.gap_target,
                "node_limit": self.budget.node_limit,
            },
        }


@dataclass(frozen=True)
class JobRecord:
    job_id: str
    submit_s: float
    start_s: Optional[float]
    end_s: Optional[float]
    outcome: str  # completed | bug | killed | unfinished
    served: float = 0.0
    demand: float = 0.0

    @property
    def queue_s(self) -> Optional[float]:
        return None if self.start_s is None else self.start_s - self.submit_s

    @property
    def train_s(self) -> Optional[float]:
        if self.start_s is None or self.end_s is None:
            return None
        return self.end_s - self.start_s

    @property
    def total_s(self) -> Optional[float]:
        return None if self.end_s is None else self.end_s - self.submit_s


def _mean(values) -> Optional[float]:
    values = list(values)
    return float(np.mean(values)) if values else None


@dataclass
class SimulationReport:
    config: dict
    jobs: List[JobRecord]
    timeline: List[tuple]  # (completion second, job_id)
    solver_latency: List[float] = field(default_factory=list)
    solver_gaps: List[float] = field(default_factory=list)
    utilization: List[tuple] = field(default_factory=list)  # (epoch second, busy nodes)
    end_time: int = 0
    epochs: int = 0

    def completed(self) -> List[JobRecord]:
        return [r for r in self.jobs if r.outcome == COMPLETED]

    def summary(self) -> dict:
        """Time means cover completed jobs only; failures are counted separately."""
        done = self.completed()
        counts = {k: 0 for k in (COMPLETED, BUG, KILLED, UNFINISHED)}
        for r in self.jobs:
            counts[r.outcome] += 1
        mean_q = _mean(r.queue_s for r in done)
        mean_t = _mean(r.total_s for r in done)
        mean_tr = _mean(r.train_s for r in done)
        return {
            "jobs": len(self.jobs),
            "outcomes": counts,
            "mean_queue_minutes": None if mean_q is None else mean_q / 60.0,
            "mean_train_minutes": None if mean_tr is None else mean_tr / 60.0,
            "mean_total_minutes": None if mean_t is None else mean_t / 60.0,
            "end_time": self.end_time,
            "epochs": self.epochs,
            "mean_busy_nodes": _mean(b for _, b in self.utilization),
        }

    def to_dict(self, include_timing: bool = True) -> dict:
        out = {
            "schema": REPORT_SCHEMA,
            "config": self.config,
            "summary": self.summary(),
            "jobs": [
                {"job_id": r.job_id, "submit_s": r.submit_s, "start_s": r.start_s,
                 "end_s": r.end_s, "outcome": r.outcome, "served": r.served}
                for r in self.jobs
            ],
            "timeline": [[t, jid] for t, jid in self.timeline],
            "utilization": [[t, b] for t, b in self.utilization],
            "solver_gaps": self.solver_gaps,
        }
        if include_timing:
            out["solver_latency"] = self.solver_latency
        return out

    def to_json(self, include_timing: bool = True) -> str:
        return json.dumps(self.to_dict(include_timing), sort_keys=True, indent=1)

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write(JOBS_CSV_VERSION + "\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(JOBS_CSV_COLUMNS)

        def cell(v):
            return "" if v is None else format_number(v)

        for r in self.jobs:
            w.writerow([r.job_id, cell(r.submit_s), cell(r.start_s), cell(r.end_s), cell(r.queue_s),
                        cell(r.train_s), cell(r.total_s), r.outcome])
        return buf.getvalue()


class ClusterState:
    """Mutable cluster bookkeeping shared by the event loop and plan application."""

    def __init__(self, cfg: ClusterConfig, states: Sequence[JobRuntimeState]):
        self.cfg = cfg
        self.states = list(states)
        self.by_id = {st.job_id: st for st in self.states}
        self.levels = {st.job_id: legal_set_for(st.spec, cfg) for st in self.states}
        self.queue: List[JobRuntimeState] = []
        self.running: List[JobRuntimeState] = []  # on nodes, in FIFO order
        self.idle = cfg.total_nodes
        self.releases = {}  # second -> list of states whose nodes return then
        self.pending_release: List[JobRuntimeState] = []

    # -- transitions -------------------------------------------------------
    def _begin(self, st: JobRuntimeState, k: int, now: int) -> None:
        delay = self.cfg.scaling_delay
        self.idle -= k - st.nodes_reserved
        st.nodes_reserved = k
        if delay == 0:
            st.nodes_assigned = k
            st.phase = Phase.TRAINING
            st.hold_until = None
            if st.training_start is None:
                st.training_start = float(now)
        else:
            st.phase = Phase.SCALING_HOLD
            st.hold_until = float(now + delay)

    def start(self, st: JobRuntimeState, k: int, now: int) -> None:
        self.queue.remove(st)
        self.running.append(st)
        self.running.sort(key=fifo_key)
        self._begin(st, k, now)

    def set_target(self, st: JobRuntimeState, k: int, now: int) -> None:
        if k == st.nodes_reserved:
            return
        if k > st.nodes_reserved:
            self._begin(st, k, now)
            return
        self.idle += st.nodes_reserved - k
        st.nodes_reserved = k
        if st.nodes_assigned > k:
            st.nodes_assigned = k
        if st.phase == Phase.SCALING_HOLD and st.nodes_assigned == k:
            st.phase = Phase.TRAINING
            st.hold_until = None

    def finish(self, st: JobRuntimeState, phase: Phase, now: int) -> None:
        was_running = st.on_nodes
        st.phase = phase
        st.hold_until = None
        if phase == Phase.DONE:
            st.completion_time = float(now)
        else:
            st.failure_time = float(now)
        st.nodes_assigned = 0
        if was_running:
            self.running.remove(st)
            st.release_at = float(now + 1)
            self.releases.setdefault(now + 1, []).append(st)
            self.pending_release.append(st)
        else:
            self.queue.remove(st)

    def release(self, now: int) -> None:
        for st in self.releases.pop(now, ()):
            self.idle += st.nodes_reserved
            st.nodes_reserved = 0
            self.pending_release.remove(st)

    def expire_holds(self, now: int) -> None:
        for st in self.running:
            if st.phase == Phase.SCALING_HOLD and st.hold_until is not None and st.hold_until <= now:
                st.nodes_assigned = st.nodes_reserved
                st.phase = Phase.TRAINING
                st.hold_until = None
                if st.training_start is None:
                    st.training_start = float(now)

    def regular_starts(self, now: int) -> None:
        while self.queue and self.idle > 0:
            front = self.queue[0]
            fits = [k for k in self.levels[front.job_id] if k <= self.idle]
            if not fits:
                break
            self.start(front, fits[-1], now)

    # -- checks ------------------------------------------------------------
    def dump(self, now: int) -> dict:
        return {
            "time": now,
            "idle": self.idle,
            "total_nodes": self.cfg.total_nodes,
            "queue": [st.job_id for st in self.queue],
            "running": {st.job_id: [st.phase.value, st.nodes_assigned, st.nodes_reserved,
                                    st.served] for st in self.running},
            "releasing": {st.job_id: st.nodes_reserved for st in self.pending_release},
        }

    def check(self, now: int) -> None:
        N = self.cfg.total_nodes
        held = sum(st.nodes_reserved for st in self.running)
        held += sum(st.nodes_reserved for st in self.pending_release)
        problems = []
        if self.idle < 0:
            problems.append(f"negative idle count {self.idle}")
        if held + self.idle != N:
            problems.append(f"held {held} + idle {self.idle} != {N}")
        for st in self.running:
            ks = self.levels[st.job_id]
            if st.nodes_reserved not in ks:
                problems.append(f"{st.job_id} holds {st.nodes_reserved} nodes, legal {ks}")
            if st.nodes_assigned not in (0,) + ks or st.nodes_assigned > st.nodes_reserved:
                problems.append(f"{st.job_id} trains on {st.nodes_assigned} of {st.nodes_reserved}")
            if (st.phase == Phase.SCALING_HOLD) != (st.hold_until is not None):
                problems.append(f"{st.job_id} hold flag and phase disagree")
            if st.served < 0 or st.served >= st.spec.demand:
                problems.append(f"{st.job_id} served {st.served} outside [0, {st.spec.demand})")
        for st in self.queue:
            if st.nodes_reserved or st.nodes_assigned:
                problems.append(f"queued {st.job_id} holds nodes")
        if problems:
            raise InvariantViolation("; ".join(problems), self.dump(now))


def _targets_from(plan, state: ClusterState) -> dict:
    if isinstance(plan, GreedyDecision):
        return plan.targets()
    if isinstance(plan, EpochPlan):
        return {jid: k for jid, k in plan.implemented.items()}
    return dict(plan)


def apply_plan(state: ClusterState, plan: Union[EpochPlan, GreedyDecision, dict], now: int) -> None:
    """Move the cluster to the plan's first-step node counts.

    Scale-downs go first so their nodes can fund starts and scale-ups in the
    same epoch.  Raises :class:`PlanRejectedError`, leaving the state
    untouched, if any count is illegal or the idle pool cannot cover the
    increases.
    """
    targets = _targets_from(plan, state)
    downs, ups, starts = [], [], []
    problems = []
    for jid in sorted(targets, key=lambda j: fifo_key(state.by_id[j]) if j in state.by_id else (0, j)):
        k = int(targets[jid])
        st = state.by_id.get(jid)
        if st is None or not st.active:
            problems.append(f"{jid} is not an active job")
            continue
        if st.phase == Phase.QUEUED:
            if k == 0:
                continue
            if k not in state.levels[jid]:
                problems.append(f"{jid}: start on {k} nodes outside {state.levels[jid]}")
            starts.append((st, k))
        elif k not in state.levels[jid]:
            problems.append(f"{jid}: {k} nodes outside {state.levels[jid]}")
        elif k < st.nodes_reserved:
            downs.append((st, k))
        elif k > st.nodes_reserved:
            ups.append((st, k))
    freed = sum(st.nodes_reserved - k for st, k in downs)
    need = sum(k - st.nodes_reserved for st, k in ups + starts)
    if need > state.idle + freed:
        problems.append(f"needs {need} nodes, {state.idle} idle + {freed} freed")
    if problems:
        audit = {"time": now, "targets": dict(targets), "problems": problems,
                 "state": state.dump(now)}
        raise PlanRejectedError("plan rejected: " + "; ".join(problems), audit)
    for st, k in downs:
        state.set_target(st, k, now)
    for st, k in ups:
        state.set_target(st, k, now)
    for st, k in starts:
        state.start(st, k, now)


def _observed_demands(trace: Sequence[JobSpec], cfg: ClusterConfig, fraction: float) -> list:
    # One draw pair per job in trace order, whatever the fraction, so the
    # disturbance of a job never depends on which other jobs are disturbed.
    rng = np.random.default_rng([cfg.rng_seed, DISTURBANCE_STREAM])
    w = cfg.eta_disturbance
    out = []
    for job in trace:
        pick, scale = rng.random(), rng.uniform(1.0 - w, 1.0 + w) if w > 0 else 1.0
        out.append(job.demand * scale if (w > 0 and pick < fraction) else job.demand)
    return out


def _failure_second(st: JobRuntimeState) -> Optional[int]:
    f = st.spec.failure
    if f.kind == "kill":
        return math.ceil(st.spec.submit_time + f.seconds)
    if f.kind == "bug" and st.training_start is not None:
        return int(st.training_start) + math.ceil(f.seconds)
    return None


def prepare_trace(trace: Sequence[JobSpec], config: SimulationConfig) -> List[JobSpec]:
    """Validated, FIFO-ordered trace with the config's failure schedule applied."""
    trace = list(trace)
    check_order(trace)
    if config.bug_fraction > 0 or config.terminate_fraction > 0:
        trace = annotate_failures(trace, config.bug_fraction, config.terminate_fraction,
                                  config.cluster.rng_seed)
    return sorted(trace, key=fifo_key)


def run(trace: Sequence[JobSpec], config: SimulationConfig) -> SimulationReport:
    cfg = config.cluster
    trace = prepare_trace(trace, config)
    states = [JobRuntimeState(spec) for spec in trace]
    for st, observed in zip(states, _observed_demands(trace, cfg, config.disturbed_fraction)):
        st.observed_demand = observed
    state = ClusterState(cfg, states)
    f = cfg.epoch_period
    curve = cfg.speed_curve
    rate_of = {k: curve.per_second_progress(k) for k in cfg.legal_set}
    arrival = [math.ceil(st.spec.submit_time) for st in states]
    n = len(states)
    ai = 0
    latency, gaps, util, timeline = [], [], [], []
    epochs = 0
    end = config.horizon_end
    s = 0

    while True:
        if end is not None and s >= end:
            break
        if ai >= n and not state.queue and not state.running and not state.pending_release:
            break
        state.release(s)
        state.expire_holds(s)
        while ai < n and arrival[ai] <= s:
            states[ai].phase = Phase.QUEUED
            state.queue.append(states[ai])
            ai += 1
        if s % f == 0:
            epochs += 1
            if state.queue or state.running:
                snapshot = make_snapshot(state.queue + state.running, cfg, epoch_time=float(s))
                if config.allocator == OPTIMAL:
                    plan = plan_epoch(snapshot, cfg, config.budget)
                    latency.append(plan.solve_time)
                    gaps.append(plan.gap)
                else:
                    elapsed = {st.job_id: (s - st.training_start if st.training_start is not None
                                           else 0.0) for st in state.running}
                    plan = greedy_plan(snapshot, elapsed, cfg.legal_set, config.greedy_metric)
                apply_plan(state, plan, s)
            util.append((s, cfg.total_nodes - state.idle))
        else:
            state.regular_starts(s)
        if config.check_invariants:
            state.check(s)

        # next second at which steps 1-4 may act
        nxt = (s // f + 1) * f
        if ai < n:
            nxt = min(nxt, arrival[ai])
        if state.releases:
            nxt = min(nxt, min(state.releases))
        for st in state.running:
            if st.hold_until is not None:
                nxt = min(nxt, int(st.hold_until))
        last = nxt - 1
        if end is not None:
            last = min(last, end - 1)
        for st in state.queue + state.running:
            fs = _failure_second(st)
            if fs is not None:
                last = min(last, max(fs, s))

        accruing = [st for st in state.running if st.nodes_assigned > 0]
        if accruing:
            served = np.array([st.served for st in accruing])
            rate = np.array([rate_of[st.nodes_assigned] for st in accruing])
            target = np.array([st.spec.demand for st in accruing])
            used = kernels.accrue(served, rate, target, last - s + 1)
            last = s + int(used) - 1
            for st, v in zip(accruing, served):
                st.served = float(v)
            for st in accruing:
                if st.served >= st.spec.demand:
                    state.finish(st, Phase.DONE, last)
                    timeline.append((last, st.job_id))
        for st in list(state.queue) + list(state.running):
            fs = _failure_second(st)
            if fs is not None and fs <= last:
                state.finish(st, Phase.FAILED, last)
        if config.check_invariants:
            state.check(last)
        s = last + 1

    records = []
    for st in states:
        if st.phase == Phase.DONE:
            outcome, end_s = COMPLETED, st.completion_time
        elif st.phase == Phase.FAILED:
            outcome, end_s = (BUG if st.spec.failure.kind == "bug" else KILLED), st.failure_time
        else:
            outcome, end_s = UNFINISHED, None
        records.append(JobRecord(st.job_id, st.spec.submit_time, st.training_start, end_s, outcome,
                                 st.served, st.spec.demand))
    timeline.sort()
    return SimulationReport(
        config=config.describe(),
        jobs=records,
        timeline=timeline,
        solver_latency=latency,
        solver_gaps=gaps,
        utilization=util,
        end_time=s,
        epochs=epochs,
    )
