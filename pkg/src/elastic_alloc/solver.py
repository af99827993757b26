"""Exact and budgeted solvers for the allocation program."""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import kernels
from .domain import ClusterConfig, ClusterSnapshot, EpochPlan
from .errors import ConfigurationError, InfeasibleError, SolverSizeError
from .milp import (
    ASSIGNMENT,
    AllocationProgram,
    admit,
    build,
    decode,
    raw_from_assignment,
    validate_plan,
)

ORACLE_LIMIT = 10**7
# per-job enumeration size above which the Lagrangian root bound is skipped
DUAL_ENUM_LIMIT = 20000
DUAL_ITERATIONS = 40
GAP_FLOOR = 1e-9
OPTIMAL_GAP = 1e-6


@dataclass(frozen=True)
class SolverBudget:
    time_limit: float = 2.0  # seconds
    gap_target: float = 0.0
    node_limit: Optional[int] = None
    chunk: int = 2000  # nodes per compiled call between clock checks

    def __post_init__(self):
        if not self.time_limit > 0:
            raise ConfigurationError("time_limit must be positive")
        if not 0 <= self.gap_target < 1:
            raise ConfigurationError("gap_target must be in [0, 1)")
        if self.node_limit is not None and self.node_limit < 0:
            raise ConfigurationError("node_limit must be >= 0")


@dataclass(frozen=True)
class SolveResult:
    plan: Optional[EpochPlan]
    status: str  # optimal | feasible_with_gap | infeasible
    bound: float
    explored_nodes: int = 0
    history: tuple = field(default=(), compare=False)  # (seconds, incumbent, bound)

    @property
    def objective(self) -> float:
        return self.plan.objective if self.plan is not None else -math.inf

    @property
    def gap(self) -> float:
        return self.plan.gap if self.plan is not None else math.inf


def relative_gap(bound: float, objective: float) -> float:
    return max(bound - objective, 0.0) / max(objective, GAP_FLOOR)


def instance_arrays(program: AllocationProgram):
    """Dense kernel layout: levels, normalised increments, minimum-node suffix sums."""
    J = program.num_jobs
    L = max((len(ks) for ks in program.legal_sets), default=1)
    kv = np.zeros((J, L), dtype=np.int64)
    inc = np.zeros((J, L), dtype=np.float64)
    nl = np.zeros(J, dtype=np.int64)
    p = program.step_hours
    for j, ks in enumerate(program.legal_sets):
        nl[j] = len(ks)
        speeds = program.speed_table[j]
        for l, k in enumerate(ks):
            kv[j, l] = k
            inc[j, l] = p * speeds[l] / program.demands[j]
        kv[j, len(ks):] = np.iinfo(np.int64).max // 4
    sufmin = np.zeros(J + 1, dtype=np.int64)
    for j in range(J - 1, -1, -1):
        sufmin[j] = sufmin[j + 1] + kv[j, 0]
    return kv, nl, inc, sufmin


def _levels_to_nodes(program, x):
    # x is [T, J] levels -> nodes[i][t]
    return [[program.legal_sets[i][x[t, i]] for t in range(program.horizon)]
            for i in range(program.num_jobs)]


def _empty_result(program, t0):
    plan = decode(program, np.zeros(0), solve_time=time.perf_counter() - t0)
    return SolveResult(plan, "optimal", 0.0, 0, ((0.0, 0.0, 0.0),))


def _infeasible(program):
    return SolveResult(None, "infeasible", -math.inf, 0)


def solve_oracle(program: AllocationProgram, limit: int = ORACLE_LIMIT) -> SolveResult:
    """Exhaustive enumeration of every per-(job, step) choice.

    Choice vectors are enumerated in lexicographic order (step-major, then
    job order, node counts ascending); among equal objectives (1e-12) the
    first, i.e. lexicographically smallest, wins.  Served demand follows the
    tight recursion ``s = min(d, s_prev + p * speed(n))``.
    """
    t0 = time.perf_counter()
    J, T = program.num_jobs, program.horizon
    if J == 0:
        return _empty_result(program, t0)
    radices = [len(program.legal_sets[j]) for _ in range(T) for j in range(J)]
    total = math.prod(radices)
    if total > limit:
        raise SolverSizeError(f"{total} assignments exceed the enumeration limit {limit}")
    ks = [np.array(program.legal_sets[j], dtype=np.int64) for j in range(J)]
    gains = [program.step_hours * np.array(program.speed_table[j]) for j in range(J)]
    d = np.array(program.demands)
    # place values for mixed-radix decoding, position 0 most significant
    place = np.ones(len(radices), dtype=np.int64)
    for q in range(len(radices) - 2, -1, -1):
        place[q] = place[q + 1] * radices[q + 1]

    best_val, best_idx = -math.inf, -1
    chunk = 1 << 16
    for start in range(0, total, chunk):
        idx = np.arange(start, min(total, start + chunk), dtype=np.int64)
        ok = np.ones(idx.shape, dtype=bool)
        served = np.zeros((J, idx.size))
        obj = np.zeros(idx.size)
        for t in range(T):
            used = np.zeros(idx.size, dtype=np.int64)
            for j in range(J):
                q = t * J + j
                digit = (idx // place[q]) % radices[q]
                used += ks[j][digit]
                served[j] = np.minimum(d[j], served[j] + gains[j][digit])
                obj += served[j] / d[j]
            ok &= used <= program.capacity
        if not ok.any():
            continue
        obj = np.where(ok, obj, -np.inf)
        top = obj.max()
        first = int(np.flatnonzero(obj >= top - 1e-12)[0])
        if top > best_val + 1e-12:
            best_val, best_idx = float(obj[first]), int(idx[first])
    if best_idx < 0:
        return _infeasible(program)
    x = np.zeros((T, J), dtype=np.int64)
    for t in range(T):
        for j in range(J):
            q = t * J + j
            x[t, j] = (best_idx // place[q]) % radices[q]
    raw = raw_from_assignment(program, _levels_to_nodes(program, x))
    elapsed = time.perf_counter() - t0
    plan = decode(program, raw, objective=best_val, gap=0.0, bound=best_val,
                  solve_time=elapsed, explored_nodes=total)
    return SolveResult(plan, "optimal", best_val, total, ((elapsed, best_val, best_val),))


def _open_bound(root, lev, assigned, nodebound, depth):
    """Largest bound over subtrees the depth-first search has not visited yet."""
    if depth < 0:
        return -math.inf
    best = -math.inf
    for q in range(depth + 1):
        untried = (lev[q] > 0) if assigned[q] else (q == depth)
        if untried:
            parent = root if q == 0 else nodebound[q - 1]
            best = max(best, parent)
    return best


def fill_leftover(x, kv, nl, cap):
    """Hand each step's unused nodes to jobs in snapshot order, largest legal jump first.

    More nodes never lower a job's progress, so the objective cannot drop;
    it only matters when ties left capacity idle.
    """
    T, J = x.shape
    for t in range(T):
        left = cap - sum(int(kv[j, x[t, j]]) for j in range(J))
        for j in range(J):
            for l in range(int(nl[j]) - 1, int(x[t, j]), -1):
                extra = int(kv[j, l] - kv[j, x[t, j]])
                if extra <= left:
                    left -= extra
                    x[t, j] = l
                    break
    return x


def solve_bnb(program: AllocationProgram, budget: SolverBudget = SolverBudget(),
              fill: bool = False) -> SolveResult:
    """Depth-first branch-and-bound with a concave-envelope bound.

    Decisions are fixed step-major (all jobs at step 1 first) and node counts
    are tried from largest to smallest.  The search is seeded with a greedy
    incumbent.  Subtrees are pruned with the envelope relaxation; the global
    bound is additionally tightened at the root by a Lagrangian dual of the
    capacity rows.  Stops when the tree is exhausted, the certified gap falls
    to ``gap_target`` or the budget runs out.  With ``fill`` the returned
    plan also spends leftover capacity (see :func:`fill_leftover`).
    """
    t0 = time.perf_counter()
    if program.encoding != ASSIGNMENT:
        program = program.with_encoding(ASSIGNMENT)
    J, T, N = program.num_jobs, program.horizon, program.capacity
    if J == 0:
        return _empty_result(program, t0)
    kv, nl, inc, sufmin = instance_arrays(program)
    if sufmin[0] > N:
        raise InfeasibleError(f"admitted jobs need {sufmin[0]} nodes at minimum, pool has {N}")

    x0, feasible = kernels.greedy_levels(kv, nl, inc, N, T, 20)
    if not feasible:  # pragma: no cover - excluded by the minimum-node check
        return _infeasible(program)
    best = float(kernels.objective_levels(x0, inc))
    hidx, hn = kernels.upper_hull(kv, nl, inc)
    seg_j, seg_slope, seg_dk = kernels.hull_segments(kv, inc, hidx, hn)
    root = float(kernels.root_bound(kv, nl, inc, N, T))
    if root > best + GAP_FLOOR and int(nl.max()) ** T <= DUAL_ENUM_LIMIT:
        dual, _ = kernels.lagrangian_bound(kv, nl, inc, N, T, best, DUAL_ITERATIONS)
        root = min(root, float(dual))
    history = [(time.perf_counter() - t0, best, root)]

    istate, lev, assigned, used, cum, cumprev, op, nodebound = kernels.bnb_init_state(J, T)
    fstate = np.array([best, -math.inf])
    bestx = x0.reshape(-1).copy()
    # a root bound at the incumbent proves optimality outright
    finished = root <= best + GAP_FLOOR
    bound = root
    node_limit = budget.node_limit if budget.node_limit is not None else math.inf
    while not finished and relative_gap(bound, best) > budget.gap_target:
        left = node_limit - istate[1]
        if left <= 0 or time.perf_counter() - t0 >= budget.time_limit:
            break
        seen = istate[3]
        finished = bool(kernels.bnb_run(
            kv, nl, inc, sufmin, N, T, seg_j, seg_slope, seg_dk,
            istate, lev, assigned, used, cum, cumprev, op, nodebound,
            fstate, bestx, int(min(budget.chunk, left)), budget.gap_target))
        bound = max(fstate[0], fstate[1],
                    _open_bound(root, lev, assigned, nodebound, -1 if finished else istate[0]))
        bound = min(bound, root)
        if istate[3] != seen or finished:
            history.append((time.perf_counter() - t0, float(fstate[0]), float(bound)))
        if relative_gap(bound, fstate[0]) <= budget.gap_target:
            break
    best = float(fstate[0])
    if finished:
        bound = min(root, max(best, float(fstate[1])))
    x = bestx.reshape(T, J).copy()
    if fill:
        x = fill_leftover(x, kv, nl, N)
        best = float(kernels.objective_levels(x, inc))
    bound = max(bound, best)
    gap = relative_gap(bound, best)
    raw = raw_from_assignment(program, _levels_to_nodes(program, x))
    status = "optimal" if gap <= OPTIMAL_GAP else "feasible_with_gap"
    elapsed = time.perf_counter() - t0
    plan = decode(program, raw, objective=best, gap=gap, bound=bound, solve_time=elapsed,
                  status=status, explored_nodes=int(istate[1]), history=history)
    return SolveResult(plan, status, bound, int(istate[1]), tuple(history))


def plan_epoch(snapshot: ClusterSnapshot, cfg: ClusterConfig,
               budget: SolverBudget = SolverBudget()) -> EpochPlan:
    """Admit, build, solve and decode one epoch; deferred jobs get zero nodes.

    Unused capacity in the solved plan is handed out (objective never drops).
    """
    t0 = time.perf_counter()
    admission = admit(snapshot)
    program = build(snapshot, cfg, ASSIGNMENT, admission)
    result = solve_bnb(program, budget, fill=True)
    if result.plan is None:
        raise InfeasibleError("allocation program is infeasible")
    problems = validate_plan(program, result.plan)
    if problems:
        raise InfeasibleError("solver returned an invalid plan: " + "; ".join(problems[:5]))
    plan = result.plan
    return EpochPlan(
        assignments=plan.assignments,
        served_profile=plan.served_profile,
        objective=plan.objective,
        gap=plan.gap,
        solve_time=time.perf_counter() - t0,
        bound=plan.bound,
        status=plan.status,
        explored_nodes=plan.explored_nodes,
        history=plan.history,
    )
