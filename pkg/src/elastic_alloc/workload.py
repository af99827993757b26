"""Job traces: CSV reading and writing, synthetic generation, failure schedules.

Trace files look like::

    # trace-v1
    job_id,submit_s,demand_node_hours,n_min,n_max,failure
    j0001,0,2.5,1,16,none
    j0002,61.25,0.8,1,16,kill:1800

``failure`` is ``none``, ``bug:<seconds after training starts>`` or
``kill:<seconds after submission>``.

Random draws use numpy's ``default_rng`` (PCG64) seeded with the caller's
integer, in a fixed draw order, so a seed pins the trace on every platform.
"""

from __future__ import annotations

import csv
import io
import math
import os
from dataclasses import dataclass, replace
from typing import Iterable, List

import numpy as np

from .domain import NO_FAILURE, Failure, JobSpec, MAX_HANG_SECONDS, format_number
from .errors import ConfigurationError, TraceError

TRACE_VERSION = "# trace-v1"
TRACE_COLUMNS = ("job_id", "submit_s", "demand_node_hours", "n_min", "n_max", "failure")
# stream ids mixed into the seed so independent uses never share draws
FAILURE_STREAM = 2


@dataclass(frozen=True)
class SyntheticProfile:
    name: str
    count: int
    arrival_rate: float  # jobs per hour
    large_mean_minutes: float = 232.6  # single-node minutes, large jobs
    sigma: float = 1.0  # lognormal shape of large-job durations
    small_job_fraction: float = 0.0
    small_job_cutoff: float = 5.0  # minutes
    n_min: int = 1
    n_max: int = 16

    def __post_init__(self):
        if self.count < 0:
            raise ConfigurationError("count must be >= 0")
        for name in ("arrival_rate", "large_mean_minutes", "sigma", "small_job_cutoff"):
            if not getattr(self, name) > 0:
                raise ConfigurationError(f"{name} must be positive")
        if not 0 <= self.small_job_fraction <= 1:
            raise ConfigurationError("small_job_fraction must be in [0, 1]")

    @property
    def mu(self) -> float:
        """Log-scale location giving the requested large-job mean."""
        return math.log(self.large_mean_minutes) - self.sigma ** 2 / 2


# 447 jobs of at least five minutes arriving over about fifty hours.
BASELINE = SyntheticProfile("baseline", count=447, arrival_rate=447 / 50.0)
# All 1252 jobs of the same window, 64% of them shorter than five minutes.
HETEROGENEOUS = SyntheticProfile(
    "heterogeneous", count=1252, arrival_rate=1252 / 50.0, small_job_fraction=0.64
)
PROFILES = {p.name: p for p in (BASELINE, HETEROGENEOUS)}


def profile_by_name(name: str) -> SyntheticProfile:
    try:
        return PROFILES[name]
    except KeyError:
        raise ConfigurationError(f"unknown profile {name!r}; choose from {sorted(PROFILES)}") from None


def _open_interval(rng, upper: float) -> float:
    # uniform on (0, upper)
    while True:
        v = upper * rng.random()
        if v > 0.0:
            return v


def generate(profile: SyntheticProfile, seed: int) -> List[JobSpec]:
    """Poisson arrivals with a small/large duration mixture.

    Small jobs last uniformly on (0, cutoff) minutes; large ones follow a
    lognormal with the profile's mean, redrawn until at least the cutoff.
    Demand is the single-node duration in hours.
    """
    rng = np.random.default_rng(seed)
    n = profile.count
    if n == 0:
        return []
    gaps = rng.exponential(3600.0 / profile.arrival_rate, size=n)
    submit = np.round(np.cumsum(gaps) - gaps[0], 3)
    is_small = rng.random(n) < profile.small_job_fraction
    jobs = []
    width = len(str(n))
    for i in range(n):
        if is_small[i]:
            minutes = _open_interval(rng, profile.small_job_cutoff)
        else:
            minutes = rng.lognormal(profile.mu, profile.sigma)
            while minutes < profile.small_job_cutoff:
                minutes = rng.lognormal(profile.mu, profile.sigma)
        jobs.append(JobSpec(
            job_id=f"j{i + 1:0{max(width, 4)}d}",
            submit_time=float(submit[i]),
            demand=float(minutes) / 60.0,
            n_min=profile.n_min,
            n_max=profile.n_max,
        ))
    return jobs


def annotate_failures(jobs: Iterable[JobSpec], bug_fraction: float, terminate_fraction: float,
                      seed: int) -> List[JobSpec]:
    """Assign bug hangs and user kills to fixed shares of the jobs.

    ``round(fraction * n)`` jobs are drawn without replacement for each kind;
    every other job gets no failure.  Hang times are uniform on (0, 300] s
    after training starts, kill times uniform on (0, single-node duration]
    after submission.
    """
    jobs = list(jobs)
    if not (0 <= bug_fraction <= 1 and 0 <= terminate_fraction <= 1):
        raise ConfigurationError("failure fractions must be in [0, 1]")
    if bug_fraction + terminate_fraction > 1 + 1e-12:
        raise ConfigurationError("bug and terminate fractions sum above 1")
    n = len(jobs)
    rng = np.random.default_rng([seed, FAILURE_STREAM])
    order = rng.permutation(n)
    n_bug = int(round(bug_fraction * n))
    n_kill = min(int(round(terminate_fraction * n)), n - n_bug)
    draws = 1.0 - rng.random(n)  # (0, 1]
    kinds = {}
    for pos, idx in enumerate(order):
        if pos < n_bug:
            kinds[idx] = Failure("bug", float(MAX_HANG_SECONDS * draws[idx]))
        elif pos < n_bug + n_kill:
            kinds[idx] = Failure("kill", float(jobs[idx].demand * 3600.0 * draws[idx]))
    return [replace(job, failure=kinds.get(i, NO_FAILURE)) for i, job in enumerate(jobs)]


def check_order(jobs: List[JobSpec]) -> None:
    seen = set()
    for i, job in enumerate(jobs):
        if job.job_id in seen:
            raise TraceError(f"duplicate job_id {job.job_id!r}", row=i + 1)
        seen.add(job.job_id)
        if i and job.submit_time < jobs[i - 1].submit_time:
            raise TraceError(
                f"trace not sorted: {job.job_id} at {job.submit_time} s follows "
                f"{jobs[i - 1].job_id} at {jobs[i - 1].submit_time} s",
                row=i + 1,
            )


def format_trace(jobs: Iterable[JobSpec]) -> str:
    buf = io.StringIO()
    buf.write(TRACE_VERSION + "\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(TRACE_COLUMNS)
    for job in jobs:
        writer.writerow([job.job_id, format_number(job.submit_time), format_number(job.demand),
                         job.n_min, job.n_max, job.failure.encode()])
    return buf.getvalue()


def write_trace(jobs: Iterable[JobSpec], path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(format_trace(jobs))


def parse_trace(text: str) -> List[JobSpec]:
    lines = text.splitlines()
    if not lines or lines[0].strip() != TRACE_VERSION:
        raise TraceError(f"first line must be {TRACE_VERSION!r}", row=1)
    reader = csv.reader(lines[1:])
    header = next(reader, None)
    if header is None or tuple(h.strip() for h in header) != TRACE_COLUMNS:
        raise TraceError(f"header must be {','.join(TRACE_COLUMNS)}", row=2)
    jobs, file_lines = [], []
    for offset, fields in enumerate(reader):
        line = offset + 3
        if not fields or all(not f.strip() for f in fields):
            continue
        if len(fields) != len(TRACE_COLUMNS):
            raise TraceError(f"expected {len(TRACE_COLUMNS)} fields, got {len(fields)}", row=line)
        jid, submit, demand, n_min, n_max, failure = (f.strip() for f in fields)
        try:
            job = JobSpec(jid, float(submit), float(demand), int(n_min), int(n_max),
                          Failure.decode(failure))
        except (ValueError, ConfigurationError) as exc:
            raise TraceError(str(exc), row=line) from None
        jobs.append(job)
        file_lines.append(line)
    try:
        check_order(jobs)
    except TraceError as exc:
        # report file lines rather than job positions
        raise TraceError(exc.reason, row=file_lines[exc.row - 1]) from None
    return jobs


def load_trace(source) -> List[JobSpec]:
    """Read a trace from a path or an open text stream."""
    if hasattr(source, "read"):
        return parse_trace(source.read())
    if not os.path.exists(source):
        raise TraceError(f"no such trace file: {source}")
    with open(source, encoding="utf-8") as fh:
        return parse_trace(fh.read())
