import json
import math
import os
import subprocess
import sys

import numpy as np
import pytest

from elastic_alloc import kernels
from elastic_alloc._accel import USE_JIT, python_impl
from elastic_alloc.domain import ClusterConfig
from elastic_alloc.milp import admit, build
from elastic_alloc.solver import SolverBudget, instance_arrays, solve_bnb

from _instances import epoch_snapshot, small_program


def _arrays(seed):
    prog = small_program(seed, max_jobs=4, max_steps=3, max_nodes=16, pool=(2, 4, 8, 16))
    kv, nl, inc, _ = instance_arrays(prog)
    return prog, kv, nl, inc


@pytest.mark.parametrize("seed", range(25))
def test_compiled_and_plain_kernels_agree(seed):
    prog, kv, nl, inc = _arrays(seed)
    N, T = prog.capacity, prog.horizon
    x, ok = kernels.greedy_levels(kv, nl, inc, N, T, 20)
    x2, ok2 = python_impl(kernels.greedy_levels)(kv, nl, inc, N, T, 20)
    assert ok == ok2 and np.array_equal(x, x2)
    assert kernels.objective_levels(x, inc) == python_impl(kernels.objective_levels)(x, inc)
    assert kernels.root_bound(kv, nl, inc, N, T) == python_impl(kernels.root_bound)(kv, nl, inc, N, T)
    lower = float(kernels.objective_levels(x, inc))
    a = kernels.lagrangian_bound(kv, nl, inc, N, T, lower, 10)
    b = python_impl(kernels.lagrangian_bound)(kv, nl, inc, N, T, lower, 10)
    assert a[0] == b[0] and np.array_equal(a[1], b[1])


def test_accrue_paths_agree_bit_for_bit():
    rng = np.random.default_rng(0)
    for _ in range(20):
        n = int(rng.integers(1, 8))
        rate = rng.uniform(1e-5, 1e-3, n)
        target = rng.uniform(0.01, 0.5, n)
        a, b = np.zeros(n), np.zeros(n)
        sa = python_impl(kernels.accrue_seconds)(a, rate, target, 100000)
        sb = kernels._accrue_seconds_numpy(b, rate, target, 100000)
        assert sa == sb and np.array_equal(a, b)
        c = np.zeros(n)
        assert kernels.accrue(c, rate, target, 100000) == sa and np.array_equal(a, c)


def test_accrue_stops_at_limit():
    served = np.zeros(2)
    assert kernels.accrue(served, np.array([1.0, 1.0]), np.array([10.0, 10.0]), 3) == 3
    assert served.tolist() == [3.0, 3.0]


def test_root_bound_dominates_greedy():
    for seed in range(30):
        prog, kv, nl, inc = _arrays(seed)
        x, _ = kernels.greedy_levels(kv, nl, inc, prog.capacity, prog.horizon, 20)
        assert kernels.root_bound(kv, nl, inc, prog.capacity, prog.horizon) >= \
            kernels.objective_levels(x, inc) - 1e-12


_SCRIPT = """
import json, math, sys
sys.path.insert(0, {tests!r})
from _instances import small_program
from elastic_alloc._accel import USE_JIT
from elastic_alloc.solver import SolverBudget, solve_bnb
out = {{"jit": USE_JIT, "runs": []}}
for seed in range(12):
    res = solve_bnb(small_program(seed, max_jobs=3, max_steps=2, max_nodes=8),
                    SolverBudget(time_limit=math.inf))
    out["runs"].append([res.objective, res.bound, sorted(res.plan.assignments.items())])
print(json.dumps(out))
"""


def _run_solver_subprocess(no_jit):
    env = dict(os.environ)
    env.pop("ELASTIC_ALLOC_NO_JIT", None)
    if no_jit:
        env["ELASTIC_ALLOC_NO_JIT"] = "1"
    tests = os.path.dirname(os.path.abspath(__file__))
    proc = subprocess.run([sys.executable, "-c", _SCRIPT.format(tests=tests)], env=env,
                          capture_output=True, text=True, timeout=600, check=True)
    return json.loads(proc.stdout)


def test_env_flag_selects_fallback_with_identical_results():
    plain = _run_solver_subprocess(no_jit=True)
    assert plain["jit"] is False
    compiled = _run_solver_subprocess(no_jit=False)
    assert compiled["jit"] is USE_JIT
    assert plain["runs"] == compiled["runs"]


def test_in_process_matches_budgeted_epoch():
    # sanity: the layout helper and the solver see the same instance
    snap = epoch_snapshot(0, jobs=20, nodes=32)
    prog = build(snap, ClusterConfig(32), admission=admit(snap))
    kv, nl, inc, sufmin = instance_arrays(prog)
    assert sufmin[0] == sum(prog.n_min)
    res = solve_bnb(prog, SolverBudget(time_limit=math.inf, node_limit=100))
    x = np.array([[prog.legal_sets[j].index(res.plan.assignments[jid][t])
                   for j, jid in enumerate(prog.job_ids)] for t in range(prog.horizon)])
    assert kernels.objective_levels(x, inc) == pytest.approx(res.objective, abs=1e-12)
