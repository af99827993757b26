"""Rolling-horizon allocation of nodes to elastic training jobs.

An exact-by-construction MILP allocator with an in-repo branch-and-bound
solver, a rule-based greedy baseline, a second-stepped cluster simulator and
a sweep runner comparing the two.
"""

from .domain import ClusterConfig, ClusterSnapshot, EpochPlan, JobSpec, SnapshotJob
from .errors import ElasticAllocError
from .experiments import ExperimentSpec, additional_trained_jobs, run_experiment
from .greedy import GreedyDecision, greedy_plan
from .milp import ASSIGNMENT, DELTA, AllocationProgram, admit, build, decode
from .mps import export_mps, read_mps
from .simulator import SimulationConfig, SimulationReport, run
from .solver import SolverBudget, SolveResult, plan_epoch, solve_bnb, solve_oracle
from .speed import SpeedCurve, speed
from .workload import generate, load_trace, write_trace

__version__ = "0.1.0"

__all__ = [
    "ASSIGNMENT", "DELTA", "AllocationProgram", "ClusterConfig", "ClusterSnapshot",
    "ElasticAllocError", "EpochPlan", "ExperimentSpec", "GreedyDecision", "JobSpec",
    "SimulationConfig", "SimulationReport", "SnapshotJob", "SolveResult", "SolverBudget",
    "SpeedCurve", "additional_trained_jobs", "admit", "build", "decode", "export_mps",
    "generate", "greedy_plan", "load_trace", "plan_epoch", "read_mps", "run",
    "run_experiment", "solve_bnb", "solve_oracle", "speed", "write_trace",
]
