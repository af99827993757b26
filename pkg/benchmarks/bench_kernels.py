"""Compare the compiled kernels with the pure-numpy fallback.

Kernel timings run in-process: each compiled kernel against its own
uncompiled body.  Only the outer body runs uncompiled there; kernels it
calls stay compiled, so composite kernels (root_bound, lagrangian_bound)
understate the gap.  ``--end-to-end`` also times a whole epoch solve in two
subprocesses, one with ELASTIC_ALLOC_NO_JIT=1, since the flag is read at
import time.

    python benchmarks/bench_kernels.py [--repeat 5] [--end-to-end]
"""

import argparse
import json
import math
import os
import subprocess
import sys
import time

import numpy as np

from elastic_alloc import kernels
from elastic_alloc._accel import USE_JIT, python_impl
from elastic_alloc.domain import ClusterConfig, ClusterSnapshot, SnapshotJob
from elastic_alloc.milp import admit, build
from elastic_alloc.solver import SolverBudget, instance_arrays


def epoch_program(seed, jobs=100, nodes=70):
    rng = np.random.default_rng(seed)
    out = []
    used = 0
    for i in range(jobs):
        demand = float(rng.lognormal(np.log(232.6 / 60) - 0.5, 1.0))
        training = rng.random() < 0.5 and used < nodes
        used += int(training)
        out.append(SnapshotJob(f"j{i:03d}", demand, 1, 16, bool(training), int(training)))
    snap = ClusterSnapshot(0.0, tuple(out), nodes)
    return build(snap, ClusterConfig(nodes), admission=admit(snap))


def best_of(fn, repeat):
    best = math.inf
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def kernel_cases(prog):
    kv, nl, inc, _ = instance_arrays(prog)
    N, T = prog.capacity, prog.horizon
    x, _ = kernels.greedy_levels(kv, nl, inc, N, T, 20)
    lower = float(kernels.objective_levels(x, inc))
    rate = np.linspace(1e-4, 1e-3, 64)
    target = np.full(64, 50.0)
    return {
        "objective_levels": (kernels.objective_levels, (x, inc)),
        "root_bound": (kernels.root_bound, (kv, nl, inc, N, T)),
        "greedy_levels": (kernels.greedy_levels, (kv, nl, inc, N, T, 20)),
        "lagrangian_bound": (kernels.lagrangian_bound, (kv, nl, inc, N, T, lower, 10)),
        "accrue_seconds": (None, (rate, target, 20000)),
    }


def run_kernels(repeat):
    prog = epoch_program(0)
    rows = []
    for name, (fn, args) in kernel_cases(prog).items():
        if name == "accrue_seconds":
            fast = lambda: kernels.accrue_seconds(np.zeros(64), *args)
            slow = lambda: kernels._accrue_seconds_numpy(np.zeros(64), *args)
        else:
            fast = lambda fn=fn, args=args: fn(*args)
            slow = lambda fn=fn, args=args: python_impl(fn)(*args)
        fast()  # compile outside the timing
        t_fast, t_slow = best_of(fast, repeat), best_of(slow, repeat)
        rows.append((name, t_fast, t_slow))
    return rows


_E2E = """
import json, math, time, sys
sys.path.insert(0, {here!r})
from bench_kernels import epoch_program
from elastic_alloc._accel import USE_JIT
from elastic_alloc.solver import SolverBudget, solve_bnb
prog = epoch_program(1)
budget = SolverBudget(time_limit=math.inf, gap_target=0.05, node_limit=2000)
solve_bnb(prog, budget)
t0 = time.perf_counter()
res = solve_bnb(prog, budget)
print(json.dumps({{"jit": USE_JIT, "seconds": time.perf_counter() - t0, "objective": res.objective}}))
"""


def run_end_to_end():
    here = os.path.dirname(os.path.abspath(__file__))
    out = {}
    for label, flag in (("compiled", "0"), ("fallback", "1")):
        env = dict(os.environ, ELASTIC_ALLOC_NO_JIT=flag)
        proc = subprocess.run([sys.executable, "-c", _E2E.format(here=here)], env=env,
                              capture_output=True, text=True, check=True)
        out[label] = json.loads(proc.stdout)
    return out


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--end-to-end", action="store_true")
    args = ap.parse_args(argv)
    if not USE_JIT:
        print("numba disabled in this process; both columns time the fallback")
    print(f"{'kernel':<18} {'compiled s':>12} {'fallback s':>12} {'speedup':>9}")
    for name, fast, slow in run_kernels(args.repeat):
        print(f"{name:<18} {fast:12.6f} {slow:12.6f} {slow / fast:9.1f}")
    if args.end_to_end:
        res = run_end_to_end()
        c, f = res["compiled"], res["fallback"]
        print(f"epoch solve, 100 jobs: compiled {c['seconds']:.3f} s, fallback {f['seconds']:.3f} s, "
              f"same objective: {c['objective'] == f['objective']}")


if __name__ == "__main__":
    main()
