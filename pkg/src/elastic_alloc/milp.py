"""Per-epoch allocation program.

The program maximises the summed fraction of each job's remaining demand
served over the look-ahead steps, with node counts restricted to powers of
two.  Two equivalent encodings of that restriction are produced:

``delta_bigM``
    paired big-M indicator rows: ``dm[k] = 1`` iff ``n <= k`` and
    ``dp[k] = 1`` iff ``n >= k``; exactly ``|K| + 1`` of them hold, which
    pins ``n`` to a member of ``K`` and turns
    ``sum_k speed(k) * (dm[k] + dp[k] - 1)`` into the exact speed.
``assignment``
    one binary per legal count, summing to one.

The explicit rows/columns exist for export, feasibility checking and
cross-validation.  The solver works on the compact job data directly.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from functools import cached_property
from typing import NamedTuple, Optional

import numpy as np

from .domain import ClusterConfig, ClusterSnapshot, EpochPlan, legal_set_for
from .errors import BuildError, DecodeError, InvariantViolation
from .speed import SpeedCurve

DELTA = "delta_bigM"
ASSIGNMENT = "assignment"
ENCODINGS = (DELTA, ASSIGNMENT)

FEAS_TOL = 1e-6
INT_TOL = 1e-4


@dataclass(frozen=True)
class AdmissionResult:
    admitted: tuple
    deferred: tuple


def admit(snapshot: ClusterSnapshot) -> AdmissionResult:
    """Choose which jobs the program must keep on at least ``n_min`` nodes.

    Training jobs are always admitted.  Queued jobs follow in FIFO order and
    are admitted while the summed minimums still fit; a job that does not
    fit is skipped, later smaller ones may still be admitted.
    """
    training_min = sum(j.n_min for j in snapshot.jobs if j.training)
    if training_min > snapshot.total_nodes:
        raise InvariantViolation(
            f"training jobs need {training_min} nodes at minimum, pool has {snapshot.total_nodes}"
        )
    room = snapshot.total_nodes - training_min
    take = set()
    for j in snapshot.jobs:
        if not j.training and j.n_min <= room:
            take.add(j.job_id)
            room -= j.n_min
    admitted = tuple(j for j in snapshot.jobs if j.training or j.job_id in take)
    deferred = tuple(j for j in snapshot.jobs if not j.training and j.job_id not in take)
    return AdmissionResult(admitted, deferred)


class Column(NamedTuple):
    key: tuple  # ("n"|"s"|"dm"|"dp"|"x", job index, step, [k])
    kind: str  # "int" | "cont" | "bin"
    lb: float
    ub: float
    obj: float


class Row(NamedTuple):
    key: tuple
    cols: tuple
    vals: tuple
    sense: str  # "L" | "G" | "E"
    rhs: float


@dataclass(frozen=True)
class AllocationProgram:
    job_ids: tuple
    demands: tuple  # d_i, observed remaining demand in node-hours
    n_min: tuple
    n_max: tuple
    legal_sets: tuple  # K_i per job
    horizon: int
    capacity: int
    step_hours: float
    epoch_period: int = 300
    encoding: str = ASSIGNMENT
    big_m: Optional[float] = None
    attenuation_base: float = 0.8
    deferred: tuple = ()
    epoch_time: float = 0.0

    @property
    def num_jobs(self) -> int:
        return len(self.job_ids)

    @cached_property
    def speed_table(self) -> tuple:
        curve = SpeedCurve(self.attenuation_base, sorted({k for ks in self.legal_sets for k in ks}) or (1,))
        return tuple(tuple(curve.speed(k) for k in ks) for ks in self.legal_sets)

    def with_encoding(self, encoding: str) -> "AllocationProgram":
        if encoding == self.encoding:
            return self
        big_m = _big_m(self.capacity, self.legal_sets) if encoding == DELTA else None
        return replace(self, encoding=encoding, big_m=big_m)

    # -- explicit model -------------------------------------------------

    def _block_width(self, i: int) -> int:
        nk = len(self.legal_sets[i])
        return 2 + (2 * nk if self.encoding == DELTA else nk)

    @cached_property
    def block_offsets(self) -> tuple:
        """Column offset of each (job, step) block: n, s, then the binaries."""
        offs = []
        pos = 0
        for i in range(self.num_jobs):
            row = []
            w = self._block_width(i)
            for _ in range(self.horizon):
                row.append(pos)
                pos += w
            offs.append(tuple(row))
        return tuple(offs)

    @property
    def num_columns(self) -> int:
        if not self.num_jobs:
            return 0
        i = self.num_jobs - 1
        return self.block_offsets[i][-1] + self._block_width(i)

    def n_col(self, i, t):
        return self.block_offsets[i][t]

    def s_col(self, i, t):
        return self.block_offsets[i][t] + 1

    def bin_cols(self, i, t):
        base = self.block_offsets[i][t] + 2
        nk = len(self.legal_sets[i])
        if self.encoding == DELTA:
            return tuple(range(base, base + nk)), tuple(range(base + nk, base + 2 * nk))
        return tuple(range(base, base + nk))

    @cached_property
    def columns(self) -> tuple:
        cols = []
        for i, ks in enumerate(self.legal_sets):
            inv_d = 1.0 / self.demands[i]
            for t in range(self.horizon):
                cols.append(Column(("n", i, t), "int", 0.0, np.inf, 0.0))
                cols.append(Column(("s", i, t), "cont", 0.0, np.inf, inv_d))
                if self.encoding == DELTA:
                    cols.extend(Column(("dm", i, t, k), "bin", 0.0, 1.0, 0.0) for k in ks)
                    cols.extend(Column(("dp", i, t, k), "bin", 0.0, 1.0, 0.0) for k in ks)
                else:
                    cols.extend(Column(("x", i, t, k), "bin", 0.0, 1.0, 0.0) for k in ks)
        return tuple(cols)

    @cached_property
    def rows(self) -> tuple:
        rows = []
        p = self.step_hours
        M = self.big_m
        for i, ks in enumerate(self.legal_sets):
            speeds = self.speed_table[i]
            for t in range(self.horizon):
                n = self.n_col(i, t)
                s = self.s_col(i, t)
                rows.append(Row(("demand", i, t), (s,), (1.0,), "L", self.demands[i]))
                rows.append(Row(("max", i, t), (n,), (1.0,), "L", float(self.n_max[i])))
                rows.append(Row(("min", i, t), (n,), (1.0,), "G", float(self.n_min[i])))
                prev = (self.s_col(i, t - 1),) if t > 0 else ()
                prev_v = (-1.0,) if t > 0 else ()
                if self.encoding == DELTA:
                    dms, dps = self.bin_cols(i, t)
                    for k, dm, dp in zip(ks, dms, dps):
                        rows.append(Row(("dm_lo", i, t, k), (n, dm), (1.0, M + 1.0 / M), "G", k + 1.0 / M))
                        rows.append(Row(("dm_hi", i, t, k), (n, dm), (1.0, M), "L", k + M))
                        rows.append(Row(("dp_lo", i, t, k), (n, dp), (-1.0, M + 1.0 / M), "G", -k + 1.0 / M))
                        rows.append(Row(("dp_hi", i, t, k), (n, dp), (-1.0, M), "L", M - k))
                    rows.append(Row(("card", i, t), dms + dps, (1.0,) * (2 * len(ks)), "E", float(len(ks) + 1)))
                    coef = tuple(-p * v for v in speeds)
                    rows.append(
                        Row(("progress", i, t), (s,) + prev + dms + dps,
                            (1.0,) + prev_v + coef + coef, "L", -p * sum(speeds))
                    )
                else:
                    xs = self.bin_cols(i, t)
                    rows.append(Row(("onehot", i, t), xs, (1.0,) * len(ks), "E", 1.0))
                    rows.append(Row(("link", i, t), (n,) + xs, (1.0,) + tuple(-float(k) for k in ks), "E", 0.0))
                    rows.append(
                        Row(("progress", i, t), (s,) + prev + xs,
                            (1.0,) + prev_v + tuple(-p * v for v in speeds), "L", 0.0)
                    )
        for t in range(self.horizon):
            cols = tuple(self.n_col(i, t) for i in range(self.num_jobs))
            if cols:
                rows.append(Row(("capacity", t), cols, (1.0,) * len(cols), "L", float(self.capacity)))
        return tuple(rows)

    def count(self) -> dict:
        kinds = [c.kind for c in self.columns]
        return {
            "int": kinds.count("int"),
            "cont": kinds.count("cont"),
            "bin": kinds.count("bin"),
            "rows": len(self.rows),
        }

    def objective_vector(self) -> np.ndarray:
        return np.array([c.obj for c in self.columns], dtype=np.float64)

    def coo(self):
        """Constraint matrix as COO triplets plus row bounds (lo, hi)."""
        ri, ci, vv, lo, hi = [], [], [], [], []
        for r, row in enumerate(self.rows):
            ri.extend([r] * len(row.cols))
            ci.extend(row.cols)
            vv.extend(row.vals)
            lo.append(row.rhs if row.sense in "GE" else -np.inf)
            hi.append(row.rhs if row.sense in "LE" else np.inf)
        return (np.array(ri, dtype=np.int64), np.array(ci, dtype=np.int64),
                np.array(vv, dtype=np.float64), np.array(lo), np.array(hi))

    def violations(self, raw, tol: float = FEAS_TOL) -> list:
        """Keys of rows and columns the raw vector violates beyond ``tol``."""
        raw = np.asarray(raw, dtype=np.float64)
        bad = []
        for c, col in zip(raw, self.columns):
            if c < col.lb - tol or c > col.ub + tol:
                bad.append(col.key)
            elif col.kind != "cont" and abs(c - round(c)) > INT_TOL:
                bad.append(col.key)
        for row in self.rows:
            lhs = float(np.dot(raw[list(row.cols)], row.vals))
            if row.sense == "L" and lhs > row.rhs + tol:
                bad.append(row.key)
            elif row.sense == "G" and lhs < row.rhs - tol:
                bad.append(row.key)
            elif row.sense == "E" and abs(lhs - row.rhs) > tol:
                bad.append(row.key)
        return bad


def _big_m(capacity: int, legal_sets) -> float:
    top = max((max(ks) for ks in legal_sets), default=1)
    return float(capacity + top + 1)


def build(snapshot: ClusterSnapshot, cfg: ClusterConfig, encoding: str = ASSIGNMENT,
          admission: Optional[AdmissionResult] = None) -> AllocationProgram:
    """Assemble the program for the admitted jobs of ``snapshot``.

    Without an ``admission`` every snapshot job is taken as admitted.
    """
    if encoding not in ENCODINGS:
        raise BuildError(f"unknown encoding {encoding!r}")
    if cfg.horizon_steps < 1:
        raise BuildError("horizon must have at least one step")
    jobs = admission.admitted if admission is not None else snapshot.jobs
    deferred = tuple(j.job_id for j in admission.deferred) if admission is not None else ()
    need = sum(j.n_min for j in jobs)
    if need > snapshot.total_nodes:
        raise BuildError(f"admitted jobs need {need} nodes at minimum, pool has {snapshot.total_nodes}")
    legal = tuple(legal_set_for(j, cfg) for j in jobs)
    return AllocationProgram(
        job_ids=tuple(j.job_id for j in jobs),
        demands=tuple(float(j.remaining) for j in jobs),
        n_min=tuple(j.n_min for j in jobs),
        n_max=tuple(j.n_max for j in jobs),
        legal_sets=legal,
        horizon=cfg.horizon_steps,
        capacity=snapshot.total_nodes,
        step_hours=cfg.step_hours,
        epoch_period=cfg.epoch_period,
        encoding=encoding,
        big_m=_big_m(snapshot.total_nodes, legal) if encoding == DELTA else None,
        attenuation_base=cfg.attenuation_base,
        deferred=deferred,
        epoch_time=snapshot.epoch_time,
    )


def raw_from_assignment(program: AllocationProgram, nodes) -> np.ndarray:
    """Solution vector for per-(job, step) node counts ``nodes[i][t]``.

    Served demand is set to its largest feasible value, the capped
    cumulative progress.
    """
    raw = np.zeros(program.num_columns, dtype=np.float64)
    p = program.step_hours
    for i, ks in enumerate(program.legal_sets):
        speeds = program.speed_table[i]
        d = program.demands[i]
        s = 0.0
        for t in range(program.horizon):
            k = int(nodes[i][t])
            li = ks.index(k)
            s = min(d, s + p * speeds[li])
            raw[program.n_col(i, t)] = k
            raw[program.s_col(i, t)] = s
            if program.encoding == DELTA:
                dms, dps = program.bin_cols(i, t)
                for kk, dm, dp in zip(ks, dms, dps):
                    raw[dm] = 1.0 if k <= kk else 0.0
                    raw[dp] = 1.0 if k >= kk else 0.0
            else:
                raw[program.bin_cols(i, t)[li]] = 1.0
    return raw


def _as_int(v, what):
    r = round(float(v))
    if abs(float(v) - r) > INT_TOL:
        raise DecodeError(f"{what} = {v} is not integral")
    return int(r)


def selected_count(program: AllocationProgram, raw, i: int, t: int) -> int:
    """Node count picked by the binaries of block (i, t); checks the indicator pattern."""
    ks = program.legal_sets[i]
    if program.encoding == DELTA:
        dms, dps = program.bin_cols(i, t)
        dm = [_as_int(raw[c], "delta-") for c in dms]
        dp = [_as_int(raw[c], "delta+") for c in dps]
        if sum(dm) + sum(dp) != len(ks) + 1:
            raise DecodeError(f"job {i} step {t}: {sum(dm) + sum(dp)} indicators hold, expected {len(ks) + 1}")
        picked = [k for k, a, b in zip(ks, dm, dp) if a == 1 and b == 1]
        rest_ok = all(a + b == 1 for k, a, b in zip(ks, dm, dp) if k not in picked)
    else:
        xs = [_as_int(raw[c], "x") for c in program.bin_cols(i, t)]
        picked = [k for k, v in zip(ks, xs) if v == 1]
        rest_ok = sum(xs) == 1
    if len(picked) != 1 or not rest_ok:
        raise DecodeError(f"job {i} step {t}: indicators select {picked}")
    return picked[0]


def speed_coefficient(program: AllocationProgram, raw, i: int, t: int) -> float:
    """Speed term of the progress row, evaluated on the binaries as written."""
    speeds = program.speed_table[i]
    if program.encoding == DELTA:
        dms, dps = program.bin_cols(i, t)
        return sum(v * (round(raw[a]) + round(raw[b]) - 1) for v, a, b in zip(speeds, dms, dps))
    return sum(v * round(raw[c]) for v, c in zip(speeds, program.bin_cols(i, t)))


def decode(program: AllocationProgram, raw_solution, *, objective=None, gap=0.0, bound=None,
           solve_time=0.0, status="optimal", explored_nodes=0, history=()) -> EpochPlan:
    """Turn a raw solution vector into an :class:`EpochPlan`."""
    raw = np.asarray(raw_solution, dtype=np.float64)
    if raw.shape != (program.num_columns,):
        raise DecodeError(f"solution has {raw.shape} entries, program has {program.num_columns} columns")
    assignments = {}
    served = {}
    total = 0.0
    for i, jid in enumerate(program.job_ids):
        ns = []
        ss = []
        for t in range(program.horizon):
            n = _as_int(raw[program.n_col(i, t)], "n")
            k = selected_count(program, raw, i, t)
            if n != k:
                raise DecodeError(f"job {jid} step {t}: n = {n} but indicators select {k}")
            s = min(max(float(raw[program.s_col(i, t)]), 0.0), program.demands[i])
            ns.append(n)
            ss.append(s)
            total += s / program.demands[i]
        assignments[jid] = tuple(ns)
        served[jid] = tuple(ss)
    for jid in program.deferred:
        assignments[jid] = (0,) * program.horizon
        served[jid] = (0.0,) * program.horizon
    obj = total if objective is None else objective
    return EpochPlan(
        assignments=assignments,
        served_profile=served,
        objective=obj,
        gap=gap,
        solve_time=solve_time,
        bound=obj if bound is None else bound,
        status=status,
        explored_nodes=explored_nodes,
        history=tuple(history),
    )


def validate_plan(program: AllocationProgram, plan: EpochPlan, tol: float = FEAS_TOL) -> list:
    """Problems with ``plan`` found without trusting the solver; empty if none."""
    problems = []
    T = program.horizon
    for t in range(T):
        total = sum(plan.assignments[jid][t] for jid in program.job_ids)
        if total > program.capacity:
            problems.append(f"step {t}: {total} nodes > capacity {program.capacity}")
    for i, jid in enumerate(program.job_ids):
        ks = program.legal_sets[i]
        prev = 0.0
        for t in range(T):
            n = plan.assignments[jid][t]
            s = plan.served_profile[jid][t]
            if n not in ks:
                problems.append(f"{jid} step {t}: {n} not in {ks}")
                continue
            if s > program.demands[i] + tol:
                problems.append(f"{jid} step {t}: served {s} above demand")
            if s < prev - tol:
                problems.append(f"{jid} step {t}: served decreased")
            speeds = program.speed_table[i]
            if s > prev + program.step_hours * speeds[ks.index(n)] + tol:
                problems.append(f"{jid} step {t}: served faster than {n} nodes allow")
            prev = s
    for jid in program.deferred:
        if any(plan.assignments[jid]):
            problems.append(f"deferred job {jid} was given nodes")
    return problems
