"""Jobs, cluster configuration, per-epoch snapshots and plans."""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Optional

import numpy as np

from .errors import ConfigurationError
from .speed import DEFAULT_LEGAL_SET, SECONDS_PER_HOUR, SpeedCurve, is_power_of_two

# Floor for observed remaining demand, node-hours.
REMAINING_EPS = 1e-9
MAX_HANG_SECONDS = 300.0


class Phase(str, Enum):
    QUEUED = "queued"
    TRAINING = "training"
    SCALING_HOLD = "scaling_hold"
    DONE = "done"
    FAILED = "failed"


@dataclass(frozen=True)
class Failure:
    """``kind`` is ``none``, ``bug`` (hang ``seconds`` after training starts)
    or ``kill`` (user terminates ``seconds`` after submission)."""

    kind: str = "none"
    seconds: Optional[float] = None

    def __post_init__(self):
        if self.kind == "none":
            if self.seconds is not None:
                raise ConfigurationError("failure 'none' takes no time")
        elif self.kind == "bug":
            if self.seconds is None or not 0 < self.seconds <= MAX_HANG_SECONDS:
                raise ConfigurationError(f"bug hang time must be in (0, 300] s, got {self.seconds}")
        elif self.kind == "kill":
            if self.seconds is None or not self.seconds > 0:
                raise ConfigurationError(f"kill time must be > 0 s, got {self.seconds}")
        else:
            raise ConfigurationError(f"unknown failure kind {self.kind!r}")

    def encode(self) -> str:
        if self.kind == "none":
            return "none"
        return f"{self.kind}:{format_number(self.seconds)}"

    @classmethod
    def decode(cls, text: str) -> "Failure":
        text = text.strip()
        if text == "none":
            return NO_FAILURE
        kind, sep, value = text.partition(":")
        if not sep:
            raise ConfigurationError(f"bad failure field {text!r}")
        return cls(kind, float(value))


NO_FAILURE = Failure()


def format_number(x) -> str:
    x = float(x)
    return str(int(x)) if x.is_integer() else repr(x)


@dataclass(frozen=True)
class JobSpec:
    job_id: str
    submit_time: float
    demand: float  # node-hours at single-node speed
    n_min: int = 1
    n_max: int = 16
    failure: Failure = NO_FAILURE

    def __post_init__(self):
        if not self.demand > 0:
            raise ConfigurationError(f"job {self.job_id}: demand must be positive")
        if self.submit_time < 0:
            raise ConfigurationError(f"job {self.job_id}: negative submit time")
        if not is_power_of_two(self.n_min) or not is_power_of_two(self.n_max):
            raise ConfigurationError(f"job {self.job_id}: node bounds must be powers of two")
        if self.n_max < self.n_min:
            raise ConfigurationError(f"job {self.job_id}: n_max < n_min")

    def check_legal(self, legal_set: Iterable[int]) -> None:
        ks = set(legal_set)
        if self.n_min not in ks or self.n_max not in ks:
            raise ConfigurationError(
                f"job {self.job_id}: bounds ({self.n_min}, {self.n_max}) not in legal set {sorted(ks)}"
            )


@dataclass
class JobRuntimeState:
    spec: JobSpec
    phase: Phase = Phase.QUEUED
    nodes_assigned: int = 0  # nodes the job currently trains on
    nodes_reserved: int = 0  # nodes held, including incoming ones during a hold
    served: float = 0.0
    observed_demand: Optional[float] = None  # ETA as seen by the allocator
    training_start: Optional[float] = None
    completion_time: Optional[float] = None
    failure_time: Optional[float] = None
    hold_until: Optional[float] = None
    release_at: Optional[float] = None

    @property
    def job_id(self) -> str:
        return self.spec.job_id

    @property
    def active(self) -> bool:
        return self.phase in (Phase.QUEUED, Phase.TRAINING, Phase.SCALING_HOLD)

    @property
    def on_nodes(self) -> bool:
        return self.phase in (Phase.TRAINING, Phase.SCALING_HOLD)


@dataclass(frozen=True)
class ClusterConfig:
    total_nodes: int
    epoch_period: int = 300  # seconds
    horizon_steps: int = 5
    legal_set: tuple = DEFAULT_LEGAL_SET
    scaling_delay: int = 0  # seconds
    eta_disturbance: float = 0.0  # relative half-width
    rng_seed: int = 0
    attenuation_base: float = 0.8

    def __post_init__(self):
        ks = tuple(int(k) for k in self.legal_set)
        object.__setattr__(self, "legal_set", ks)
        if not ks or ks[0] != 1:
            raise ConfigurationError("legal set must start at 1")
        if any(b <= a for a, b in zip(ks, ks[1:])):
            raise ConfigurationError("legal set must be strictly increasing")
        if not all(is_power_of_two(k) for k in ks):
            raise ConfigurationError("legal set must contain only powers of two")
        if self.total_nodes < 1:
            raise ConfigurationError("total_nodes must be >= 1")
        if self.epoch_period <= 0:
            raise ConfigurationError("epoch_period must be positive")
        if self.horizon_steps < 1:
            raise ConfigurationError("horizon_steps must be >= 1")
        if self.scaling_delay < 0:
            raise ConfigurationError("scaling_delay must be >= 0")
        if not 0 <= self.eta_disturbance < 1:
            raise ConfigurationError("eta_disturbance must be in [0, 1)")

    @property
    def step_hours(self) -> float:
        return self.epoch_period / SECONDS_PER_HOUR

    @property
    def speed_curve(self) -> SpeedCurve:
        return SpeedCurve(self.attenuation_base, self.legal_set)


@dataclass(frozen=True)
class SnapshotJob:
    job_id: str
    remaining: float  # observed remaining demand, node-hours
    n_min: int
    n_max: int
    training: bool
    current_nodes: int
    submit_time: float = 0.0


@dataclass(frozen=True)
class ClusterSnapshot:
    epoch_time: float
    jobs: tuple
    total_nodes: int

    def __post_init__(self):
        object.__setattr__(self, "jobs", tuple(self.jobs))
        used = sum(j.current_nodes for j in self.jobs if j.training)
        if used > self.total_nodes:
            raise ConfigurationError(f"snapshot uses {used} of {self.total_nodes} nodes")
        for j in self.jobs:
            if not j.remaining > 0:
                raise ConfigurationError(f"job {j.job_id}: remaining demand must be positive")

    @property
    def training_jobs(self):
        return [j for j in self.jobs if j.training]

    @property
    def queued_jobs(self):
        return [j for j in self.jobs if not j.training]

    @property
    def idle_nodes(self) -> int:
        return self.total_nodes - sum(j.current_nodes for j in self.jobs if j.training)


@dataclass(frozen=True)
class EpochPlan:
    assignments: dict  # job_id -> tuple of node counts per step
    served_profile: dict  # job_id -> tuple of served demand per step
    objective: float = 0.0
    gap: float = 0.0
    solve_time: float = 0.0
    bound: float = 0.0
    status: str = "optimal"
    explored_nodes: int = 0
    history: tuple = field(default=(), compare=False)

    @property
    def implemented(self) -> dict:
        """Only the first step of the rolling horizon is acted on."""
        return {jid: ns[0] if ns else 0 for jid, ns in self.assignments.items()}


def fifo_key(job) -> tuple:
    spec = getattr(job, "spec", job)
    return (spec.submit_time, spec.job_id)


def sample_observed_demand(demand: float, half_width: float, rng: np.random.Generator) -> float:
    """ETA seen by the allocator: true demand scaled by U[1 - w, 1 + w]."""
    if half_width <= 0:
        return demand
    return demand * rng.uniform(1.0 - half_width, 1.0 + half_width)


def make_snapshot(states, cfg: ClusterConfig, noise: Optional[np.random.Generator] = None,
                  epoch_time: float = 0.0) -> ClusterSnapshot:
    """Collect queued and training jobs in FIFO order as the allocator sees them.

    A state without an observed demand gets one here, once: sampled from
    ``noise`` when the config asks for ETA disturbance, else the true demand.
    """
    jobs = []
    for st in sorted((s for s in states if s.active), key=fifo_key):
        if st.observed_demand is None:
            if noise is not None and cfg.eta_disturbance > 0:
                st.observed_demand = sample_observed_demand(st.spec.demand, cfg.eta_disturbance, noise)
            else:
                st.observed_demand = st.spec.demand
        remaining = max(st.observed_demand - st.served, REMAINING_EPS)
        jobs.append(
            SnapshotJob(
                job_id=st.spec.job_id,
                remaining=remaining,
                n_min=st.spec.n_min,
                n_max=st.spec.n_max,
                training=st.on_nodes,
                current_nodes=st.nodes_reserved if st.on_nodes else 0,
                submit_time=st.spec.submit_time,
            )
        )
    return ClusterSnapshot(epoch_time, tuple(jobs), cfg.total_nodes)


def legal_set_for(job, cfg: ClusterConfig) -> tuple:
    """Node counts job may run on: the legal set clipped to its bounds and the pool size."""
    upper = min(job.n_max, cfg.total_nodes)
    ks = tuple(k for k in cfg.legal_set if job.n_min <= k <= upper)
    if not ks:
        raise ConfigurationError(
            f"job {job.job_id}: no legal node count in [{job.n_min}, {upper}]"
        )
    return ks
