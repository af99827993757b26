"""Rule-based baseline allocator.

Dispatches on two facts about the cluster at an epoch, whether idle nodes
exist and whether the queue is empty:

1. idle, queue waiting: start queued jobs front first, each on the largest
   legal count that fits the idle nodes;
2. idle, queue empty: scale up the job with the shortest training time as
   far as the idle nodes allow, then the next shortest;
3. no idle, queue waiting: halve the job with the longest training time and
   start the front queued job on the released nodes;
4. no idle, queue empty: keep everything as is.

When scenario 1 drains the queue with nodes left over, scenario 2 runs on
the remainder in the same epoch.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Optional

from .domain import ClusterSnapshot
from .errors import ConfigurationError
from .speed import DEFAULT_LEGAL_SET

ELAPSED = "elapsed"
REMAINING_ETA = "remaining_eta"
METRICS = (ELAPSED, REMAINING_ETA)


@dataclass(frozen=True)
class GreedyDecision:
    scale_ups: dict = field(default_factory=dict)  # job_id -> new count
    scale_downs: dict = field(default_factory=dict)
    starts: dict = field(default_factory=dict)
    unchanged: frozenset = frozenset()
    scenario: int = 4

    def allocation(self, snapshot: ClusterSnapshot) -> dict:
        """Node count of every job after the decision (0 for jobs left queued)."""
        out = {j.job_id: (j.current_nodes if j.training else 0) for j in snapshot.jobs}
        for part in (self.scale_downs, self.scale_ups, self.starts):
            out.update(part)
        return out

    def targets(self) -> dict:
        """Only the jobs whose count changes."""
        out = dict(self.scale_downs)
        out.update(self.scale_ups)
        out.update(self.starts)
        return out


def job_levels(job, legal_set, total_nodes: int) -> tuple:
    upper = min(job.n_max, total_nodes)
    return tuple(k for k in legal_set if job.n_min <= k <= upper)


def _largest_at_most(levels, limit: int) -> Optional[int]:
    best = None
    for k in levels:
        if k <= limit:
            best = k
    return best


def greedy_plan(snapshot: ClusterSnapshot, elapsed_training: Mapping[str, float],
                legal_set=DEFAULT_LEGAL_SET, metric: str = ELAPSED) -> GreedyDecision:
    """One epoch of the baseline policy.

    ``elapsed_training`` gives seconds since each training job started;
    ``metric`` picks what "training time" ranks by, elapsed seconds or the
    remaining ETA in the snapshot.  Ties go to the smaller job_id.
    """
    if metric not in METRICS:
        raise ConfigurationError(f"unknown greedy metric {metric!r}")
    N = snapshot.total_nodes
    levels = {j.job_id: job_levels(j, legal_set, N) for j in snapshot.jobs}
    training = [j for j in snapshot.jobs if j.training]
    queue = [j for j in snapshot.jobs if not j.training]
    for j in training:
        if metric == ELAPSED and j.job_id not in elapsed_training:
            raise ConfigurationError(f"no elapsed training time for job {j.job_id}")

    def ranking(job):
        if metric == ELAPSED:
            return float(elapsed_training.get(job.job_id, 0.0))
        return job.remaining

    nodes = {j.job_id: j.current_nodes for j in training}
    idle = snapshot.idle_nodes
    starts, ups, downs = {}, {}, {}
    scenario = 4

    if idle > 0 and queue:
        scenario = 1
        while queue and idle > 0:
            front = queue[0]
            k = _largest_at_most(levels[front.job_id], idle)
            if k is None:
                break
            starts[front.job_id] = k
            idle -= k
            queue.pop(0)

    if idle > 0 and not queue:
        scenario = 2 if scenario == 4 else scenario
        # newly started jobs have trained for zero seconds
        pool = training + [j for j in snapshot.jobs if j.job_id in starts]
        current = dict(nodes)
        current.update(starts)
        candidates = sorted(pool, key=lambda j: (ranking(j), j.job_id))
        for job in candidates:
            if idle <= 0:
                break
            cur = current[job.job_id]
            k = _largest_at_most(levels[job.job_id], cur + idle)
            if k is None or k <= cur:
                continue
            idle -= k - cur
            if job.job_id in starts:
                starts[job.job_id] = k
            else:
                ups[job.job_id] = k

    elif scenario == 4 and idle <= 0 and queue:
        scenario = 3
        front = queue[0]
        front_levels = levels[front.job_id]
        victims = sorted(training, key=lambda j: (-ranking(j), j.job_id))
        for job in victims:
            cur = nodes[job.job_id]
            half = cur // 2
            if cur < 2 or half not in levels[job.job_id]:
                continue
            k = _largest_at_most(front_levels, half + idle)
            if k is None:
                continue
            downs[job.job_id] = half
            starts[front.job_id] = k
            break

    changed = set(starts) | set(ups) | set(downs)
    unchanged = frozenset(j.job_id for j in training if j.job_id not in changed)
    return GreedyDecision(ups, downs, starts, unchanged, scenario)


def check_decision(snapshot: ClusterSnapshot, decision: GreedyDecision,
                   legal_set=DEFAULT_LEGAL_SET) -> list:
    """Problems with a decision, empty when it is admissible."""
    problems = []
    N = snapshot.total_nodes
    by_id = {j.job_id: j for j in snapshot.jobs}
    alloc = decision.allocation(snapshot)
    if sum(alloc.values()) > N:
        problems.append(f"allocation uses {sum(alloc.values())} of {N} nodes")
    for jid, k in alloc.items():
        job = by_id[jid]
        if k == 0:
            if job.training:
                problems.append(f"training job {jid} lost all nodes")
            continue
        if k not in job_levels(job, legal_set, N):
            problems.append(f"job {jid}: {k} nodes outside its legal set")
    for jid, k in decision.scale_downs.items():
        if 2 * k != by_id[jid].current_nodes:
            problems.append(f"job {jid}: scale-down {by_id[jid].current_nodes}->{k} is not a halving")
    return problems
